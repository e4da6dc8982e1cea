"""Metadata conditioning vectors and sample-dimension normalization.

The networks receive capture metadata as extra constant input planes: the
full vector (gains, ISO, input time t0, guideline time t1) for exposure
shifting and the partial vector (t1 removed) for brightness prediction.
Exposure times are normalized in the log domain, since a single group spans
two decades of time and raw-scale normalization would crush the short end.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .rawproc import ExifMeta

__all__ = [
    "IEV_LENGTH",
    "PIEV_LENGTH",
    "IEV_VERSION",
    "build_iev",
    "build_piev",
    "NormStats",
    "fit_norm_stats",
    "normalize_vector",
    "denormalize_vector",
    "normalize_and_broadcast",
    "normalize_packed",
]

IEV_LENGTH = 7  # (w_r, w_g, w_b, w_g2, iso, t0, t1)
PIEV_LENGTH = 6  # t1 removed
IEV_VERSION = 1  # bump when fields are appended

_STD_FLOOR = 1e-6
_TIME_SLOTS = (5, 6)  # entries normalized in log domain


def build_iev(meta: ExifMeta, t1: float) -> np.ndarray:
    """Metadata vector (w_r, w_g, w_b, w_g2, iso, t0, t1)."""
    t1 = float(t1)
    if not (t1 > 0.0 and np.isfinite(t1)):
        raise ValueError(f"build_iev: t1 must be positive, got {t1}")
    return np.array(
        [*meta.wb_gains, meta.iso, meta.exposure_time, t1], dtype=np.float64
    )


def build_piev(meta: ExifMeta) -> np.ndarray:
    """Partial metadata vector: the full one with the guideline time removed."""
    return np.array([*meta.wb_gains, meta.iso, meta.exposure_time], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class NormStats:
    """Frozen per-channel and per-metadata-element normalization constants.

    Time entries (slots 5 and 6) hold statistics of log-seconds.  Fitted
    once over the training split and serialized with every checkpoint.
    """

    channel_mean: np.ndarray  # (4,)
    channel_std: np.ndarray  # (4,)
    iev_mean: np.ndarray  # (7,)
    iev_std: np.ndarray  # (7,)
    version: int = IEV_VERSION

    def __post_init__(self):
        for name, arr, n in (
            ("channel_mean", self.channel_mean, 4),
            ("channel_std", self.channel_std, 4),
            ("iev_mean", self.iev_mean, IEV_LENGTH),
            ("iev_std", self.iev_std, IEV_LENGTH),
        ):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(f"NormStats: {name} must have shape ({n},), got {arr.shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.channel_std <= 0.0) or np.any(self.iev_std <= 0.0):
            raise ValueError("NormStats: all std entries must be positive")


def _to_fit_domain(vec: np.ndarray) -> np.ndarray:
    out = np.array(vec, dtype=np.float64)
    for slot in _TIME_SLOTS:
        if slot < out.shape[-1]:
            out[..., slot] = np.log(out[..., slot])
    return out


def fit_norm_stats(training_groups) -> NormStats:
    """Single-pass mean/std fit over every eligible training pair.

    One sample per eligible low-light frame of each group: the frame's four
    packed channels (all pixels) and its metadata vector with the guideline
    slot filled by the group's ground-truth exposure time.  Degenerate
    elements (e.g. constant ISO across the set) get their std floored at
    1e-6 so they normalize to ~0 instead of blowing up.
    """
    from .rawproc import pack_bayer  # local import to avoid cycles at module load
    from .synthcam import eligible_indices

    ch_sum = np.zeros(4)
    ch_sumsq = np.zeros(4)
    ch_count = 0
    iev_sum = np.zeros(IEV_LENGTH)
    iev_sumsq = np.zeros(IEV_LENGTH)
    n_pairs = 0

    for group in training_groups:
        t_g = group.frames[group.gt_index].meta.exposure_time
        for idx in eligible_indices(group):
            frame = group.frames[idx]
            packed = pack_bayer(frame)
            flat = packed.reshape(4, -1)
            ch_sum += flat.sum(axis=1)
            ch_sumsq += (flat * flat).sum(axis=1)
            ch_count += flat.shape[1]
            vec = _to_fit_domain(build_iev(frame.meta, t_g))
            iev_sum += vec
            iev_sumsq += vec * vec
            n_pairs += 1

    if n_pairs < 2:
        raise ValueError(
            f"fit_norm_stats: need at least 2 training pairs, found {n_pairs}"
        )

    ch_mean = ch_sum / ch_count
    ch_var = np.maximum(ch_sumsq / ch_count - ch_mean * ch_mean, 0.0)
    iev_mean = iev_sum / n_pairs
    iev_var = np.maximum(iev_sumsq / n_pairs - iev_mean * iev_mean, 0.0)
    return NormStats(
        channel_mean=ch_mean,
        channel_std=np.maximum(np.sqrt(ch_var), _STD_FLOOR),
        iev_mean=iev_mean,
        iev_std=np.maximum(np.sqrt(iev_var), _STD_FLOOR),
    )


def normalize_vector(vec: np.ndarray, stats: NormStats) -> np.ndarray:
    """Standardize a metadata vector (full or partial) using frozen stats."""
    vec = np.asarray(vec, dtype=np.float64)
    k = vec.shape[0]
    if k not in (PIEV_LENGTH, IEV_LENGTH):
        raise ValueError(
            f"normalize_vector: expected length {PIEV_LENGTH} or {IEV_LENGTH}, got {k}"
        )
    z = _to_fit_domain(vec)
    return (z - stats.iev_mean[:k]) / stats.iev_std[:k]


def denormalize_vector(z: np.ndarray, stats: NormStats) -> np.ndarray:
    """Exact inverse of :func:`normalize_vector`."""
    z = np.asarray(z, dtype=np.float64)
    k = z.shape[0]
    out = z * stats.iev_std[:k] + stats.iev_mean[:k]
    for slot in _TIME_SLOTS:
        if slot < k:
            out[slot] = np.exp(out[slot])
    return out


def normalize_and_broadcast(vec: np.ndarray, stats: NormStats, h: int, w: int) -> Tensor:
    """Standardized metadata vector broadcast to (k, h, w) constant planes."""
    if h < 1 or w < 1:
        raise ValueError(f"normalize_and_broadcast: extent {h}x{w} must be >= 1")
    z = normalize_vector(vec, stats)
    planes = np.broadcast_to(z[:, None, None], (z.shape[0], h, w)).copy()
    return Tensor(planes)


def normalize_packed(packed: np.ndarray, stats: NormStats) -> Tensor:
    """Standardize the four packed raw channels using frozen stats."""
    packed = np.asarray(packed, dtype=np.float64)
    if packed.ndim != 3 or packed.shape[0] != 4:
        raise ValueError(f"normalize_packed: expected (4,h,w), got {packed.shape}")
    z = (packed - stats.channel_mean[:, None, None]) / stats.channel_std[:, None, None]
    return Tensor(z)
