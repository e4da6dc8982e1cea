"""Exposure-shifting U-Net and its objective (MAE + multi-scale SSIM).

The network maps a packed 4-channel raw mosaic plus 7 constant metadata
planes to a full-resolution RGB estimate: encoder/decoder with skip
connections, nearest-neighbor upsampling followed by convolution on the way
up (no learned transpose convolutions), and a 12-channel head that is
pixel-shuffled to 3 channels at twice the packed extent.  A final sigmoid
bounds the output to (0,1), which both similarity losses and the histogram
metrics assume.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    GradTape,
    ShapeError,
    Tensor,
    avg_downsample_2x,
    channel_concat,
    clamp,
    conv2d,
    gaussian_blur,
    leaky_relu,
    max_pool_2x2,
    mul,
    nearest_upsample_2x,
    pixel_shuffle,
    pow_const,
    sigmoid,
)

__all__ = [
    "EsnConfig",
    "esn_param_shapes",
    "esn_init",
    "esn_forward",
    "loss_mae",
    "ms_ssim",
    "loss_ssim",
    "loss_es",
    "feasible_ssim_levels",
    "MS_SSIM_WEIGHTS",
]

# level weights of the standard 5-level construction
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_RADIUS = 5  # 11-tap window
_SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class EsnConfig:
    """U-Net geometry; the packed input extent must divide by 2**depth."""

    depth: int = 3
    base_channels: int = 16
    input_channels: int = 11  # 4 packed + 7 metadata planes
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"EsnConfig: depth must be >= 2, got {self.depth}")
        if self.base_channels < 4:
            raise ValueError(
                f"EsnConfig: base_channels must be >= 4, got {self.base_channels}"
            )
        if self.input_channels < 1:
            raise ValueError("EsnConfig: input_channels must be >= 1")


def esn_param_shapes(config: EsnConfig) -> dict[str, tuple]:
    """Canonical name -> shape table for every kernel and bias."""
    shapes: dict[str, tuple] = {}

    def conv(name, cout, cin, k):
        shapes[f"{name}_w"] = (cout, cin, k, k)
        shapes[f"{name}_b"] = (cout,)

    cin = config.input_channels
    for i in range(config.depth):
        ch = config.base_channels * (2**i)
        conv(f"enc{i}_c1", ch, cin, 3)
        conv(f"enc{i}_c2", ch, ch, 3)
        cin = ch
    bott = config.base_channels * (2**config.depth)
    conv("bott_c1", bott, cin, 3)
    conv("bott_c2", bott, bott, 3)
    cin = bott
    for i in reversed(range(config.depth)):
        ch = config.base_channels * (2**i)
        conv(f"dec{i}_up", ch, cin, 3)
        conv(f"dec{i}_c1", ch, 2 * ch, 3)
        conv(f"dec{i}_c2", ch, ch, 3)
        cin = ch
    conv("head", 12, cin, 1)
    return shapes


def _kaiming_params(shapes: dict[str, tuple], seed) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith("_b"):
            params[name] = Tensor(np.zeros(shape))
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))
    return params


def esn_init(config: EsnConfig, seed) -> dict[str, Tensor]:
    """Fan-in scaled Gaussian kernels, zero biases; deterministic per seed."""
    return _kaiming_params(esn_param_shapes(config), seed)


def esn_forward(
    packed: Tensor, iev_planes: Tensor, params: dict[str, Tensor], config: EsnConfig
) -> Tensor:
    """Run the U-Net; returns a (3, 2h, 2w) tensor in (0,1)."""
    if packed.shape[1:] != iev_planes.shape[1:]:
        raise ShapeError(
            f"esn_forward: metadata planes {iev_planes.shape} do not match "
            f"packed extent {packed.shape}"
        )
    h, w = packed.shape[1], packed.shape[2]
    div = 2**config.depth
    if h % div or w % div:
        raise ShapeError(
            f"esn_forward: extent {h}x{w} not divisible by {div}; pad to "
            f"{-h % div} extra rows and {-w % div} extra columns"
        )
    slope = config.leaky_slope

    def block(x, name):
        return leaky_relu(conv2d(x, params[f"{name}_w"], params[f"{name}_b"], 1, 1), slope)

    x = channel_concat([packed, iev_planes])
    if x.shape[0] != config.input_channels:
        raise ShapeError(
            f"esn_forward: got {x.shape[0]} input channels, config expects "
            f"{config.input_channels}"
        )
    skips = []
    for i in range(config.depth):
        x = block(block(x, f"enc{i}_c1"), f"enc{i}_c2")
        skips.append(x)
        x = max_pool_2x2(x)
    x = block(block(x, "bott_c1"), "bott_c2")
    for i in reversed(range(config.depth)):
        x = block(nearest_upsample_2x(x), f"dec{i}_up")
        x = channel_concat([x, skips[i]])
        x = block(block(x, f"dec{i}_c1"), f"dec{i}_c2")
    x = conv2d(x, params["head_w"], params["head_b"], 1, 0)
    return sigmoid(pixel_shuffle(x, 2))


def loss_mae(est, gt) -> Tensor:
    """Mean absolute difference, averaged over channels and pixels."""
    est = est if isinstance(est, Tensor) else Tensor(est)
    gt = gt if isinstance(gt, Tensor) else Tensor(gt)
    if est.shape != gt.shape:
        raise ShapeError(f"loss_mae: shapes differ, {est.shape} vs {gt.shape}")
    # channels share extent, so the channel-averaged per-channel MAE equals
    # the global mean
    return (est - gt).abs().mean()


def feasible_ssim_levels(extent: int, max_levels: int = 5) -> int:
    """Largest level count whose coarsest scale still fits an 11-tap window."""
    levels = 1
    while levels < max_levels and extent >= 11 * 2**levels:
        levels += 1
    return levels


def _split_channels(t: Tensor, sizes):
    """Split a recorded tensor along channels (inverse of channel_concat)."""
    from .autodiff import _record  # internal primitive, concat's adjoint inverse

    shape = t.data.shape
    outs = []
    offset = 0
    for size in sizes:
        lo, hi = offset, offset + size
        data = t.data[lo:hi]

        def bwd(g, needs, lo=lo, hi=hi):
            full = np.zeros(shape)
            full[lo:hi] = g
            return (full,)

        outs.append(_record(data, (t,), bwd))
        offset += size
    return outs


def ms_ssim(est, gt, levels: int = 5) -> Tensor:
    """Multi-scale structural similarity on unit-range images.

    Five levels by default with the standard weights; fewer levels use the
    leading weights renormalized.  Windowing is an 11-tap Gaussian
    (sigma 1.5) over the valid extent; between levels the images are 2x2
    block averaged.  Per-channel values are averaged at the end.
    """
    est = est if isinstance(est, Tensor) else Tensor(est)
    gt = gt if isinstance(gt, Tensor) else Tensor(gt)
    if est.shape != gt.shape:
        raise ShapeError(f"ms_ssim: shapes differ, {est.shape} vs {gt.shape}")
    if est.ndim != 3:
        raise ShapeError(f"ms_ssim: expected (C,H,W), got {est.shape}")
    if not (1 <= levels <= len(MS_SSIM_WEIGHTS)):
        raise ShapeError(f"ms_ssim: levels must be in 1..5, got {levels}")
    min_extent = 11 * 2 ** (levels - 1)
    if est.shape[1] < min_extent or est.shape[2] < min_extent:
        raise ShapeError(
            f"ms_ssim: extent {est.shape[1]}x{est.shape[2]} too small for "
            f"{levels} levels; needs at least {min_extent} per side"
        )
    for name, t in (("est", est), ("gt", gt)):
        if t.data.min() < 0.0 or t.data.max() > 1.0:
            raise ShapeError(f"ms_ssim: {name} values must lie in [0,1]")

    weights = np.array(MS_SSIM_WEIGHTS[:levels])
    weights = weights / weights.sum()
    c = est.shape[0]

    x, y = est, gt
    score = None
    for level in range(levels):
        stacked = gaussian_blur(
            channel_concat([x, y, x.square(), y.square(), mul(x, y)]),
            _SSIM_SIGMA,
            _SSIM_RADIUS,
        )
        mx, my, mxx, myy, mxy = _split_channels(stacked, [c] * 5)
        var_x = mxx - mx.square()
        var_y = myy - my.square()
        cov = mxy - mul(mx, my)
        cs_map = (2.0 * cov + _SSIM_C2) / (var_x + var_y + _SSIM_C2)
        cs = clamp(cs_map.mean(axis=(1, 2)), lo=1e-6)  # guard for the power
        term = pow_const(cs, float(weights[level]))
        score = term if score is None else mul(score, term)
        if level == levels - 1:
            lum_map = (2.0 * mul(mx, my) + _SSIM_C1) / (
                mx.square() + my.square() + _SSIM_C1
            )
            lum = clamp(lum_map.mean(axis=(1, 2)), lo=1e-6)
            score = mul(score, pow_const(lum, float(weights[level])))
        else:
            x = avg_downsample_2x(x)
            y = avg_downsample_2x(y)
    return score.mean()


def loss_ssim(est, gt, levels: int = 5) -> Tensor:
    return 1.0 - ms_ssim(est, gt, levels)


def loss_es(est, gt, alpha: float, levels: int = 5) -> Tensor:
    """(1 - alpha) * MAE + alpha * (1 - MS-SSIM), with 0 <= alpha < 1."""
    alpha = float(alpha)
    if not (0.0 <= alpha < 1.0):
        raise ValueError(f"loss_es: alpha must be in [0, 1), got {alpha}")
    mae = loss_mae(est, gt)
    if alpha == 0.0:
        return mae
    return (1.0 - alpha) * mae + alpha * loss_ssim(est, gt, levels)
