# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled causal dilated convolution kernels (hot training loop).

Same contract and tap ordering as _kernels_py: K[k-1] is the current-time
tap, left zero padding keeps output length T.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv_forward(double[:, ::1] x, double[:, :, ::1] K, double[::1] b, int dilation):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t ci = x.shape[1]
    cdef Py_ssize_t k = K.shape[0]
    cdef Py_ssize_t co = K.shape[2]
    cdef cnp.ndarray[double, ndim=2] y_arr = np.empty((T, co))
    cdef double[:, ::1] y = y_arr
    cdef Py_ssize_t t, j, a, o, src
    cdef double xv

    for t in range(T):
        for o in range(co):
            y[t, o] = b[o]
        for j in range(k):
            src = t - (k - 1 - j) * dilation
            if src < 0:
                continue
            for a in range(ci):
                xv = x[src, a]
                if xv == 0.0:
                    continue
                for o in range(co):
                    y[t, o] += xv * K[j, a, o]
    return y_arr


def conv_backward(double[:, ::1] x, double[:, :, ::1] K, int dilation, double[:, ::1] dy):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t ci = x.shape[1]
    cdef Py_ssize_t k = K.shape[0]
    cdef Py_ssize_t co = K.shape[2]
    cdef cnp.ndarray[double, ndim=2] dx_arr = np.zeros((T, ci))
    cdef cnp.ndarray[double, ndim=3] dK_arr = np.zeros((k, ci, co))
    cdef cnp.ndarray[double, ndim=1] db_arr = np.zeros(co)
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, :, ::1] dK = dK_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t t, j, a, o, src
    cdef double g, acc, xv

    for t in range(T):
        for o in range(co):
            db[o] += dy[t, o]
        for j in range(k):
            src = t - (k - 1 - j) * dilation
            if src < 0:
                continue
            for a in range(ci):
                xv = x[src, a]
                acc = 0.0
                for o in range(co):
                    acc += dy[t, o] * K[j, a, o]
                dx[src, a] += acc
                if xv != 0.0:
                    for o in range(co):
                        dK[j, a, o] += xv * dy[t, o]
    return dx_arr, dK_arr, db_arr
