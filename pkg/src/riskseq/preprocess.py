"""Development-set statistics and encounter encoding.

``fit`` learns everything the transforms need from the development cohort:
percentile caps, medians, z-normalization moments, nominal level maps, and
channel statistics. ``encode_static`` / ``build_series`` then turn a raw
encounter into model-ready arrays with explicit missingness masks. State is
immutable after fit, so encoding a validation encounter can never leak.

Column layout of the numeric static vector (see FeatureSchema.numeric_width):
values for every continuous+binary feature in schema order, then their
presence masks in the same order, then one-hot blocks for the small nominals.
The intraoperative matrix is T x 2C: channel value columns in schema order
followed by the per-channel mask columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import MISSING_LEVEL, Cohort, FeatureSchema, RawEncounter, schema_hash
from .errors import DataError

PREPROCESSOR_VERSION = 1

# quantile grid for the summary-statistic vector; the last four pad the
# enumerated 45 statistics out to 49 slots
SUMMARY_QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
EXTRA_QUANTILES = (0.05, 0.25, 0.75, 0.95)
N_SUMMARY_STATS = 49


@dataclass(frozen=True)
class ContinuousStats:
    p1: float
    p99: float
    median: float
    mean: float
    std: float


@dataclass(frozen=True)
class BinaryStats:
    mode: float
    mean: float
    std: float


@dataclass(frozen=True)
class ChannelStats:
    median: float
    mean: float
    std: float
    lo: float
    hi: float


@dataclass(frozen=True)
class PreprocessorState:
    continuous: dict        # name -> ContinuousStats
    binary: dict            # name -> BinaryStats
    onehot: dict            # name -> {level: index}
    embedded: dict          # name -> {level: id}
    channels: dict          # name -> ChannelStats
    level_counts: dict      # nominal name -> {level: dev count}
    schema_digest: str


@dataclass
class EncodedEncounter:
    encounter_id: str
    numeric_static: np.ndarray    # [2*(C+B) + onehot]
    embedded_ids: np.ndarray      # int ids, schema order of embedded nominals
    series: np.ndarray            # [T, 2*channels]
    labels: np.ndarray            # [9] 0/1


def _zscore(x, mean, std):
    return 0.0 if std == 0.0 else (x - mean) / std


def cap_outliers(x: float, p1: float, p99: float) -> float:
    """Clamp x into [p1, p99]."""
    if p1 > p99:
        raise ValueError("p1 > p99")
    return min(max(x, p1), p99)


def encode_cyclical(index: int, period: int):
    """Map a day/month index onto the unit circle: (sin, cos) of 2*pi*index/period."""
    if not 0 <= index < period:
        raise ValueError(f"index {index} out of range for period {period}")
    angle = 2.0 * np.pi * index / period
    return float(np.sin(angle)), float(np.cos(angle))


def _dedup_series(series):
    """Resolve duplicate (channel, minute) measurements: last file row wins.

    Deterministic stand-in for the source protocol's random pick.
    """
    kept = {}
    for minute, channel, value in series:
        kept[(channel, minute)] = value
    return kept


def fit(dev: Cohort, schema: FeatureSchema) -> PreprocessorState:
    """Compute all encoding statistics from the development cohort.

    Percentiles (linear interpolation), medians, and z-moments are taken over
    observed values only; means/stds are computed after percentile capping so
    the capped dev distribution standardizes to mean 0 / std 1 (ddof=0).
    """
    if len(dev) == 0:
        raise DataError("cannot fit preprocessor on an empty development cohort")

    continuous, binary, onehot, embedded = {}, {}, {}, {}
    level_counts = {}

    for f in schema.features:
        if f.kind == "continuous":
            obs = np.array(
                [e.static_values[f.name] for e in dev.encounters if f.name in e.static_values],
                dtype=np.float64,
            )
            if obs.size == 0:
                raise DataError(f"continuous feature {f.name!r} never observed in development cohort")
            p1 = float(np.percentile(obs, 1))
            p99 = float(np.percentile(obs, 99))
            capped = np.clip(obs, p1, p99)
            continuous[f.name] = ContinuousStats(
                p1, p99, float(np.median(capped)), float(capped.mean()), float(capped.std())
            )
        elif f.kind == "binary":
            obs = np.array(
                [e.static_values[f.name] for e in dev.encounters if f.name in e.static_values],
                dtype=np.float64,
            )
            if obs.size == 0:
                raise DataError(f"binary feature {f.name!r} never observed in development cohort")
            mode = 1.0 if obs.mean() >= 0.5 else 0.0
            binary[f.name] = BinaryStats(mode, float(obs.mean()), float(obs.std()))
        else:
            index_map = {lv: i for i, lv in enumerate(f.levels)}
            counts = dict.fromkeys(f.levels, 0)
            for e in dev.encounters:
                lv = e.static_values.get(f.name, MISSING_LEVEL)
                counts[lv] += 1
            level_counts[f.name] = counts
            if f.encoding == "onehot":
                onehot[f.name] = index_map
            else:
                embedded[f.name] = index_map

    channels = {}
    per_channel_obs = {c: [] for c in schema.channels}
    for e in dev.encounters:
        kept = _dedup_series(e.series)
        for (channel, _minute), value in kept.items():
            lo, hi = schema.valid_range[channel]
            if lo <= value <= hi:
                per_channel_obs[channel].append(value)
    for c in schema.channels:
        lo, hi = schema.valid_range[c]
        obs = np.array(per_channel_obs[c], dtype=np.float64)
        if obs.size == 0:
            # a channel can be empty at desk scale; fall back to range midpoint
            channels[c] = ChannelStats((lo + hi) / 2.0, (lo + hi) / 2.0, 0.0, lo, hi)
        else:
            channels[c] = ChannelStats(
                float(np.median(obs)), float(obs.mean()), float(obs.std()), lo, hi
            )

    return PreprocessorState(
        continuous, binary, onehot, embedded, channels, level_counts, schema_hash(schema)
    )


def encode_static(enc: RawEncounter, state: PreprocessorState, schema: FeatureSchema):
    """Encode static features: (numeric vector with masks and one-hots, embedded ids).

    Observed continuous values are capped then z-normalized (mask 1); missing
    ones take the dev median, mask 0. Binary features are mode-imputed and
    z-normalized the same way. One-hot nominals become 0/1 blocks; embedded
    nominals become integer ids with the reserved missing id for absent or
    unknown levels.
    """
    numeric = schema.numeric_features
    values = np.zeros(len(numeric))
    masks = np.zeros(len(numeric))
    for i, f in enumerate(numeric):
        observed = f.name in enc.static_values
        if f.kind == "continuous":
            st = state.continuous[f.name]
            raw = enc.static_values[f.name] if observed else st.median
            values[i] = _zscore(cap_outliers(raw, st.p1, st.p99), st.mean, st.std)
        else:
            st = state.binary[f.name]
            raw = enc.static_values[f.name] if observed else st.mode
            values[i] = _zscore(raw, st.mean, st.std)
        masks[i] = 1.0 if observed else 0.0

    blocks = [values, masks]
    for f in schema.onehot_nominals:
        index_map = state.onehot[f.name]
        block = np.zeros(len(index_map))
        lv = enc.static_values.get(f.name, MISSING_LEVEL)
        block[index_map.get(lv, index_map[MISSING_LEVEL])] = 1.0
        blocks.append(block)
    numeric_static = np.concatenate(blocks)

    if numeric_static.size != schema.numeric_width:
        raise DataError(
            f"numeric width {numeric_static.size} != schema width {schema.numeric_width}"
        )

    ids = []
    for f in schema.embedded_nominals:
        id_map = state.embedded[f.name]
        lv = enc.static_values.get(f.name, MISSING_LEVEL)
        ids.append(id_map.get(lv, id_map[MISSING_LEVEL]))
    return numeric_static, np.array(ids, dtype=np.int64)


def assemble_series(enc: RawEncounter, state: PreprocessorState, schema: FeatureSchema):
    """Resample to one-minute steps with imputation; returns raw values + masks.

    Returns (values [T, C] pre-normalization, masks [T, C]). Out-of-range
    measurements are discarded; duplicate minutes resolve to the last file
    row; interior gaps are linearly interpolated and edges extended with the
    nearest observation, except zero-fill channels whose gaps become 0.
    Channels never observed take the dev median everywhere with mask 0.
    T = max observed minute + 1 (1 for an empty series).
    """
    kept = {}
    for (channel, minute), value in _dedup_series(enc.series).items():
        lo, hi = schema.valid_range[channel]
        if lo <= value <= hi:
            kept[(channel, minute)] = value

    T = max((minute for (_c, minute) in kept), default=0) + 1
    C = len(schema.channels)
    values = np.zeros((T, C))
    masks = np.zeros((T, C))
    zero_fill = set(schema.zero_fill_channels)

    for ci, c in enumerate(schema.channels):
        pts = sorted((m, v) for (ch, m), v in kept.items() if ch == c)
        if not pts:
            values[:, ci] = state.channels[c].median
            continue
        mins = np.array([m for m, _ in pts])
        vals = np.array([v for _, v in pts])
        masks[mins, ci] = 1.0
        if c in zero_fill:
            values[mins, ci] = vals
        else:
            # linear interpolation inside, nearest-value extension at edges
            values[:, ci] = np.interp(np.arange(T), mins, vals)
    return values, masks


def build_series(enc: RawEncounter, state: PreprocessorState, schema: FeatureSchema) -> np.ndarray:
    """Model-ready intraoperative matrix [T, 2C]: z-normalized values then masks."""
    values, masks = assemble_series(enc, state, schema)
    normed = np.empty_like(values)
    for ci, c in enumerate(schema.channels):
        st = state.channels[c]
        normed[:, ci] = 0.0 if st.std == 0.0 else (values[:, ci] - st.mean) / st.std
    return np.concatenate([normed, masks], axis=1)


def encode(enc: RawEncounter, state: PreprocessorState, schema: FeatureSchema) -> EncodedEncounter:
    numeric_static, ids = encode_static(enc, state, schema)
    series = build_series(enc, state, schema)
    labels = np.array([enc.outcomes[o] for o in schema.outcomes], dtype=np.float64)
    return EncodedEncounter(enc.encounter_id, numeric_static, ids, series, labels)


def _longest_run(flags) -> float:
    best = run = 0
    for f in flags:
        run = run + 1 if f else 0
        best = max(best, run)
    return float(best)


def summarize_channel(x: np.ndarray, bin_range=None) -> np.ndarray:
    """The 49 per-channel summary statistics of one pre-normalization series.

    Follows the conventional definitions for each named statistic; the last
    four slots are extra quantiles padding the enumerated 45 out to 49.
    ``bin_range`` fixes the 10-bin entropy support (defaults to the series
    min/max).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n == 0:
        raise ValueError("empty series")
    mean = x.mean()
    std = x.std()
    var = x.var()
    diffs = np.diff(x) if n > 1 else np.zeros(0)

    if n > 3 and std > 0:
        m = x - mean
        g2 = n * (m ** 4).sum() / (m ** 2).sum() ** 2 - 3.0
        kurt = ((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3))
    else:
        kurt = 0.0
    if n > 2 and std > 0:
        m = x - mean
        g1 = (m ** 3).mean() / std ** 3
        skew = g1 * np.sqrt(n * (n - 1)) / (n - 2)
    else:
        skew = 0.0

    above = x > mean
    below = x < mean

    def rel_loc(idx):
        return float(idx) / n

    lo, hi = bin_range if bin_range is not None else (x.min(), x.max())
    if hi > lo:
        hist, _ = np.histogram(x, bins=10, range=(lo, hi))
        probs = hist[hist > 0] / n
        entropy = float(-(probs * np.log(probs)).sum())
    else:
        entropy = 0.0

    peaks = 0
    for i in range(1, n - 1):
        if x[i] > x[i - 1] and x[i] > x[i + 1]:
            peaks += 1

    abs_sum = np.abs(x).sum()
    if abs_sum > 0:
        mass = np.cumsum(np.abs(x)) / abs_sum
        imq = [float(np.argmax(mass >= q) + 1) / n for q in SUMMARY_QUANTILES]
    else:
        imq = [0.0] * len(SUMMARY_QUANTILES)

    stats = [
        float(x.min()),                                    # minimum
        float(x.max()),                                    # maximum
        float(mean),                                       # mean
        float(np.median(x)),                               # median
        float(std),                                        # standard deviation
        float(x.sum()),                                    # sum of values
        float(var),                                        # variance
        float(kurt),                                       # kurtosis
        float(skew),                                       # skewness
        float((x ** 2).sum()),                             # absolute energy
        float(np.abs(diffs).sum()),                        # absolute sum of changes
        float(above.sum()),                                # count above mean
        float(below.sum()),                                # count below mean
        rel_loc(int(np.argmin(x))),                        # first location of minimum
        rel_loc(n - 1 - int(np.argmin(x[::-1]))),          # last location of minimum
        rel_loc(int(np.argmax(x))),                        # first location of maximum
        rel_loc(n - 1 - int(np.argmax(x[::-1]))),          # last location of maximum
        float(n),                                          # sequence length
        _longest_run(above),                               # longest strike above mean
        _longest_run(below),                               # longest strike below mean
        float(np.abs(diffs).mean()) if n > 1 else 0.0,     # mean absolute change
        float(diffs.mean()) if n > 1 else 0.0,             # mean change
        float(np.unique(x).size) / n,                      # unique-value ratio
        1.0 if var > std else 0.0,                         # variance larger than std
    ]
    stats.extend(float(np.percentile(x, 100 * q)) for q in SUMMARY_QUANTILES)
    stats.extend(imq)
    stats.append(entropy)
    stats.append(float(peaks))
    stats.append(float(((x > mean - std) & (x < mean + std)).sum()))  # range count
    stats.extend(float(np.percentile(x, 100 * q)) for q in EXTRA_QUANTILES)

    out = np.array(stats)
    assert out.size == N_SUMMARY_STATS
    return out


SUMMARY_STAT_NAMES = (
    "min", "max", "mean", "median", "std", "sum", "variance", "kurtosis",
    "skewness", "abs_energy", "abs_sum_changes", "count_above_mean",
    "count_below_mean", "first_loc_min", "last_loc_min", "first_loc_max",
    "last_loc_max", "length", "strike_above_mean", "strike_below_mean",
    "mean_abs_change", "mean_change", "unique_ratio", "var_gt_std",
    *[f"q{int(q * 100):02d}" for q in SUMMARY_QUANTILES],
    *[f"imq{int(q * 100):02d}" for q in SUMMARY_QUANTILES],
    "binned_entropy", "n_peaks", "range_count",
    *[f"xq{int(q * 100):02d}" for q in EXTRA_QUANTILES],
)
assert len(SUMMARY_STAT_NAMES) == N_SUMMARY_STATS


def summarize_series(enc: RawEncounter, state: PreprocessorState, schema: FeatureSchema) -> np.ndarray:
    """49 statistics x 14 channels from the pre-normalization imputed series."""
    values, _masks = assemble_series(enc, state, schema)
    blocks = []
    for ci, c in enumerate(schema.channels):
        blocks.append(summarize_channel(values[:, ci], bin_range=schema.valid_range[c]))
    return np.concatenate(blocks)


def state_to_dict(state: PreprocessorState) -> dict:
    return {
        "version": PREPROCESSOR_VERSION,
        "schema_digest": state.schema_digest,
        "continuous": {k: vars(v) for k, v in state.continuous.items()},
        "binary": {k: vars(v) for k, v in state.binary.items()},
        "onehot": state.onehot,
        "embedded": state.embedded,
        "channels": {k: vars(v) for k, v in state.channels.items()},
        "level_counts": state.level_counts,
    }


def state_from_dict(d: dict) -> PreprocessorState:
    if d.get("version") != PREPROCESSOR_VERSION:
        raise DataError(f"unsupported preprocessor version {d.get('version')!r}")
    return PreprocessorState(
        {k: ContinuousStats(**v) for k, v in d["continuous"].items()},
        {k: BinaryStats(**v) for k, v in d["binary"].items()},
        d["onehot"],
        d["embedded"],
        {k: ChannelStats(**v) for k, v in d["channels"].items()},
        d["level_counts"],
        d["schema_digest"],
    )


def save_state(state: PreprocessorState, path) -> None:
    Path(path).write_text(json.dumps(state_to_dict(state), indent=1) + "\n")


def load_state(path) -> PreprocessorState:
    try:
        with open(path) as fh:
            return state_from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot parse preprocessor state {path}: {exc}") from exc
