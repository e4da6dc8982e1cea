"""No-reference evaluation: group brightness statistics, noise, entropy.

These mirror how the enhancement is judged without ground truth: brightness
consistency across a multi-exposure group (mean and coefficient of
variation), a Laplacian-based single-image noise estimate, Shannon entropy
of the gray histogram, and the optional guideline-time smoothing filter for
burst sequences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .rawproc import brightness

__all__ = [
    "GroupStats",
    "group_brightness_stats",
    "noise_variance",
    "entropy",
    "t1_filter",
]

_LAPLACIAN = np.array(
    [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]]
)


@dataclass(frozen=True)
class GroupStats:
    """Mean and coefficient of variation of one group's image brightnesses."""

    group_id: str
    mu: float
    cv: float


def group_brightness_stats(images, group_id: str = "") -> GroupStats:
    """Population mean/CV of member-image brightnesses (>= 2 images)."""
    values = np.array([brightness(im) for im in images], dtype=np.float64)
    if values.size < 2:
        raise ValueError(
            f"group_brightness_stats: need at least 2 images, got {values.size}"
        )
    mu = float(values.mean())
    sd = float(values.std())  # population standard deviation
    cv = sd / mu if mu > 0.0 else 0.0
    return GroupStats(group_id=group_id, mu=mu, cv=cv)


def noise_variance(image: np.ndarray) -> float:
    """Fast single-image noise sigma estimate via the 3x3 Laplacian mask.

    sqrt(pi/2) / (6 (W-2)(H-2)) * sum |L * I| over the valid interior;
    exactly zero for constant and affine-ramp images (the mask annihilates
    them).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"noise_variance: expected (H,W) gray image, got {img.shape}")
    h, w = img.shape
    if h < 3 or w < 3:
        raise ValueError(f"noise_variance: needs at least 3x3, got {h}x{w}")
    resp = signal.convolve2d(img, _LAPLACIAN, mode="valid")
    return float(
        np.sqrt(np.pi / 2.0) * np.abs(resp).sum() / (6.0 * (w - 2) * (h - 2))
    )


def entropy(image: np.ndarray) -> float:
    """Shannon entropy in bits of the 256-bin gray histogram; in [0, 8].

    Multi-channel inputs are reduced to their channel mean first.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=0)
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("entropy: values must lie in [0,1]")
    hist, _ = np.histogram(img, bins=256, range=(0.0, 1.0))
    p = hist[hist > 0] / img.size
    return float(-(p * np.log2(p)).sum())


def t1_filter(t1_sequence, mode: str = "identity", beta: float = 0.5) -> list[float]:
    """Optionally smooth a guideline-time trace.

    "identity" returns the input; "ema" runs y_k = beta*y_{k-1} +
    (1-beta)*t_k in the log domain (first output seeds the recurrence), so
    outputs stay positive and within the input's min/max envelope.
    """
    times = [float(t) for t in t1_sequence]
    if any(t <= 0.0 for t in times):
        raise ValueError("t1_filter: all times must be positive")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"t1_filter: beta must be in [0,1], got {beta}")
    if mode == "identity":
        return list(times)
    if mode == "ema":
        out = []
        prev = None
        for t in times:
            if prev is None:
                prev = np.log(t)
            else:
                prev = beta * prev + (1.0 - beta) * np.log(t)
            out.append(float(np.exp(prev)))
        return out
    raise ValueError(f"t1_filter: unknown mode {mode!r} (use 'identity' or 'ema')")
