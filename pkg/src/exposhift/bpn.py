"""Brightness prediction: guideline-time regression and its weighted loss.

A small convolutional trunk with a fully connected tail turns a resized
packed mosaic plus partial metadata planes into one scalar, interpreted as
log guideline exposure time.  Supervision never uses a time label directly;
instead the loss concentrates on midtone pixels of the reference image
(where brightness responds most steeply to exposure) and rewards the
enhanced image for matching brightness there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    channel_concat,
    clamp,
    conv2d,
    leaky_relu,
    linear,
    mul,
    texp,
)

__all__ = [
    "BpnConfig",
    "bpn_param_shapes",
    "bpn_init",
    "bpn_forward",
    "bpn_forward_z",
    "aoi_weight_map",
    "loss_bp",
    "T1_LOG_MIN",
    "T1_LOG_MAX",
]

# pre-activation clamp: ~0.9 ms to ~54.6 s
T1_LOG_MIN = -7.0
T1_LOG_MAX = 4.0


@dataclass(frozen=True)
class BpnConfig:
    """Trunk/tail geometry plus the weighting constants of the loss."""

    conv_stages: int = 4
    conv_channels: tuple = (16, 32, 64, 64)
    fc_widths: tuple = (32, 1)
    input_extent: int = 64
    input_channels: int = 10  # 4 packed + 6 metadata planes
    leaky_slope: float = 0.2
    mu_w: float = 0.5
    sigma_w_sq: float = 0.01
    sigma_v_sq: float = 0.04

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        if len(self.conv_channels) != self.conv_stages:
            raise ValueError(
                f"BpnConfig: {self.conv_stages} stages need "
                f"{self.conv_stages} channel counts, got {self.conv_channels}"
            )
        if self.input_extent % (2**self.conv_stages):
            raise ValueError(
                f"BpnConfig: input_extent {self.input_extent} not divisible by "
                f"2**{self.conv_stages}"
            )
        if not self.fc_widths or self.fc_widths[-1] != 1:
            raise ValueError(f"BpnConfig: fc tail must end in width 1, got {self.fc_widths}")
        if self.sigma_w_sq <= 0.0 or self.sigma_v_sq <= 0.0:
            raise ValueError("BpnConfig: variance constants must be positive")


def bpn_param_shapes(config: BpnConfig) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    cin = config.input_channels
    for i, ch in enumerate(config.conv_channels):
        shapes[f"conv{i}_w"] = (ch, cin, 3, 3)
        shapes[f"conv{i}_b"] = (ch,)
        cin = ch
    width_in = config.conv_channels[-1]
    for i, width in enumerate(config.fc_widths):
        shapes[f"fc{i}_w"] = (width, width_in)
        shapes[f"fc{i}_b"] = (width,)
        width_in = width
    return shapes


def bpn_init(config: BpnConfig, seed) -> dict[str, Tensor]:
    """Fan-in scaled Gaussian weights, zero biases; deterministic per seed."""
    from .esn import _kaiming_params

    return _kaiming_params(bpn_param_shapes(config), seed)


def bpn_forward_z(
    packed_resized: Tensor,
    piev_planes: Tensor,
    params: dict[str, Tensor],
    config: BpnConfig,
) -> Tensor:
    """Pre-activation log guideline time, clamped to the supported range."""
    if packed_resized.shape[1:] != (config.input_extent, config.input_extent):
        raise ShapeError(
            f"bpn_forward: input extent {packed_resized.shape[1:]} does not "
            f"match configured {config.input_extent}"
        )
    if piev_planes.shape[1:] != packed_resized.shape[1:]:
        raise ShapeError(
            f"bpn_forward: metadata planes {piev_planes.shape} do not match "
            f"input extent"
        )
    x = channel_concat([packed_resized, piev_planes])
    if x.shape[0] != config.input_channels:
        raise ShapeError(
            f"bpn_forward: got {x.shape[0]} input channels, config expects "
            f"{config.input_channels}"
        )
    slope = config.leaky_slope
    for i in range(config.conv_stages):
        x = leaky_relu(conv2d(x, params[f"conv{i}_w"], params[f"conv{i}_b"], 2, 1), slope)
    x = x.mean(axis=(1, 2))  # global average pool -> (C,)
    for i in range(len(config.fc_widths)):
        x = linear(x, params[f"fc{i}_w"], params[f"fc{i}_b"])
        if i < len(config.fc_widths) - 1:
            x = leaky_relu(x, slope)
    z = x.sum()  # (1,) -> scalar
    return clamp(z, T1_LOG_MIN, T1_LOG_MAX)


def bpn_forward(
    packed_resized: Tensor,
    piev_planes: Tensor,
    params: dict[str, Tensor],
    config: BpnConfig,
) -> Tensor:
    """Strictly positive guideline exposure time, differentiable."""
    return texp(bpn_forward_z(packed_resized, piev_planes, params, config))


def aoi_weight_map(
    gray_gt: np.ndarray, mu_w: float = 0.5, sigma_w_sq: float = 0.01
) -> np.ndarray:
    """Softmax weight map concentrated on midtone pixels of the reference.

    Equals the two-step form (Gaussian bump around ``mu_w`` then global
    normalization); computed from the target image only, so no gradients.
    Entries are non-negative and sum to 1.
    """
    g = np.asarray(gray_gt, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"aoi_weight_map: expected (H,W) gray image, got {g.shape}")
    if g.min() < 0.0 or g.max() > 1.0:
        raise ValueError("aoi_weight_map: gray values must lie in [0,1]")
    if sigma_w_sq <= 0.0:
        raise ValueError(f"aoi_weight_map: sigma_w_sq must be positive, got {sigma_w_sq}")
    scores = -((g - mu_w) ** 2) / (2.0 * sigma_w_sq)
    e = np.exp(scores - scores.max())
    w = e / e.sum()
    assert w.min() >= 0.0 and abs(w.sum() - 1.0) < 1e-9
    return w


def loss_bp(
    est_gray: Tensor,
    weight_map: np.ndarray,
    mu_w: float = 0.5,
    sigma_v_sq: float = 0.04,
) -> Tensor:
    """Weighted midtone agreement, bounded in [-1/(mn), 0).

    -(1/(mn)) * sum_ij exp(-(est_ij - mu_w)^2 / (2 sigma_v^2)) * W_ij.
    Minimized (at exactly -1/(mn)) when the estimate sits at ``mu_w`` on
    every pixel carrying weight.
    """
    est_gray = est_gray if isinstance(est_gray, Tensor) else Tensor(est_gray)
    w = np.asarray(weight_map, dtype=np.float64)
    if est_gray.shape != w.shape:
        raise ShapeError(
            f"loss_bp: estimate {est_gray.shape} and weight map {w.shape} differ"
        )
    if sigma_v_sq <= 0.0:
        raise ValueError(f"loss_bp: sigma_v_sq must be positive, got {sigma_v_sq}")
    mn = est_gray.size
    d = est_gray - float(mu_w)
    bump = texp(d.square() * (-1.0 / (2.0 * sigma_v_sq)))
    return mul(bump, Tensor(w)).sum() * (-1.0 / mn)
