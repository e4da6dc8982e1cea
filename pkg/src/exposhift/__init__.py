"""Adaptive two-stage low-light raw enhancement.

A self-contained numpy implementation of an exposure-shifting U-Net and a
brightness-prediction network, plus the sensor simulation, losses, metrics,
and training harness needed to exercise them end to end on synthetic
multi-exposure raw groups.
"""

from .autodiff import GradTape, Tensor, adam_init, adam_step, grad_check
from .rawproc import (
    ExifMeta,
    RawFrame,
    brightness,
    pack_bayer,
    raw_to_rgb_reference,
    read_cidraw,
    rgb_to_gray,
    write_cidraw,
)
from .conditioning import NormStats, build_iev, build_piev, fit_norm_stats

__all__ = [
    "GradTape",
    "Tensor",
    "adam_init",
    "adam_step",
    "grad_check",
    "ExifMeta",
    "RawFrame",
    "brightness",
    "pack_bayer",
    "raw_to_rgb_reference",
    "read_cidraw",
    "rgb_to_gray",
    "write_cidraw",
    "NormStats",
    "build_iev",
    "build_piev",
    "fit_norm_stats",
]

__version__ = "0.1.0"
