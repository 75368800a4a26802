"""Pure-NumPy causal dilated convolution kernels.

Fallback for the compiled extension; expresses the convolution as one
shifted BLAS matmul per kernel tap. Tap ordering: K[k-1] reads the current
timestep, K[0] the oldest, with implicit left zero padding so output length
equals input length.
"""

import numpy as np


def conv_forward(x, K, b, dilation):
    T = x.shape[0]
    k = K.shape[0]
    y = np.broadcast_to(b, (T, b.shape[0])).copy()
    for j in range(k):
        off = (k - 1 - j) * dilation
        if off >= T:
            continue
        if off == 0:
            y += x @ K[j]
        else:
            y[off:] += x[:T - off] @ K[j]
    return y


def conv_backward(x, K, dilation, dy):
    T = x.shape[0]
    k = K.shape[0]
    dx = np.zeros_like(x)
    dK = np.zeros_like(K)
    db = dy.sum(axis=0)
    for j in range(k):
        off = (k - 1 - j) * dilation
        if off >= T:
            continue
        if off == 0:
            dK[j] = x.T @ dy
            dx += dy @ K[j].T
        else:
            dK[j] = x[:T - off].T @ dy[off:]
            dx[:T - off] += dy[off:] @ K[j].T
    return dx, dK, db
