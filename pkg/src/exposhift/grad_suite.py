"""Finite-difference verification suite for every differentiable operation.

Each entry checks tape gradients of one primitive (or one composite loss)
against :func:`exposhift.autodiff.grad_check` on seeded random instances.
Readouts are weighted sums with weights frozen per instance, so linear ops
are exact under central differences and the relative error reflects the
backward pass, not the probe.  Test points stay away from the
non-differentiable kinks (abs at 0, clamp edges, pooling ties).  The two
big-image losses use a larger step because their per-pixel gradients are
O(1/pixels) and a 1e-5 probe would drown in double-precision roundoff.

Run via ``exposhift grad-check`` or the acceptance tests.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .bpn import aoi_weight_map, loss_bp
from .esn import loss_es, loss_mae, ms_ssim

__all__ = ["SuiteResult", "run_grad_suite", "DEFAULT_INSTANCES"]

DEFAULT_INSTANCES = 20
_PRIMITIVE_TOL = 1e-4
_MSSSIM_TOL = 1e-3


@dataclass(frozen=True)
class SuiteResult:
    name: str
    max_error: float
    tolerance: float
    instances: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _weights(rng, shape) -> Tensor:
    w = rng.uniform(0.5, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(w)


def _away_from_zero(rng, shape, gap=0.15):
    x = rng.uniform(gap, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _unit_pair(rng, shape, gap=0.02):
    """Two arrays in (0.05, 0.95) whose difference stays away from 0."""
    gt = rng.uniform(0.05, 0.93 - gap, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    est = gt + sign * rng.uniform(gap, 0.04, size=shape)
    return np.clip(est, 0.05, 0.95), gt


def _suite_entries():
    """(name, tolerance, builder); builder(rng) -> (fn, points, kwargs)."""
    E = []
    shape = (2, 3, 4)

    def entry(name, tol, builder):
        E.append((name, tol, builder))

    def weighted(op, rng, out_shape):
        c = _weights(rng, out_shape)
        return lambda *ts: (op(*ts) * c).sum()

    entry("add", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.add, rng, shape),
        [rng.normal(size=shape), rng.normal(size=shape)], {}))
    entry("sub", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.sub, rng, shape),
        [rng.normal(size=shape), rng.normal(size=shape)], {}))
    entry("mul", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.mul, rng, shape),
        [rng.normal(size=shape), rng.normal(size=shape)], {}))
    entry("div", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.div, rng, shape),
        [rng.normal(size=shape), _away_from_zero(rng, shape, 0.5)], {}))
    entry("scalar_mix", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a, s: a * 0.7 + 0.3 - s * a / 1.7, rng, shape),
        [rng.normal(size=shape), rng.normal(size=())], {}))
    entry("exp", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.texp, rng, shape),
        [rng.uniform(-2, 2, size=shape)], {}))
    entry("log", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.tlog, rng, shape),
        [rng.uniform(0.5, 3.0, size=shape)], {}))
    entry("abs", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.tabs, rng, shape),
        [_away_from_zero(rng, shape)], {}))
    entry("square", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.square, rng, shape),
        [rng.normal(size=shape)], {}))
    entry("pow_const", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a: ad.pow_const(a, 0.73), rng, shape),
        [rng.uniform(0.3, 2.0, size=shape)], {}))

    def clamp_points(rng):
        # interior points and far-outside points, 0.1 clear of the edges
        inside = rng.uniform(-0.35, 0.35, size=shape)
        outside = rng.uniform(0.65, 1.5, size=shape) * rng.choice([-1, 1], size=shape)
        return np.where(rng.uniform(size=shape) < 0.6, inside, outside)

    entry("clamp", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a: ad.clamp(a, -0.5, 0.5), rng, shape),
        [clamp_points(rng)], {}))
    entry("sigmoid", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.sigmoid, rng, shape),
        [rng.uniform(-3, 3, size=shape)], {}))
    entry("leaky_relu", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a: ad.leaky_relu(a, 0.2), rng, shape),
        [_away_from_zero(rng, shape)], {}))
    entry("sum_full", _PRIMITIVE_TOL, lambda rng: (
        lambda a: a.sum() * 0.37,
        [rng.normal(size=shape)], {}))
    entry("sum_axis", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a: a.sum(axis=(1, 2)), rng, (2,)),
        [rng.normal(size=shape)], {}))
    entry("mean_full", _PRIMITIVE_TOL, lambda rng: (
        lambda a: a.mean() * 1.3,
        [rng.normal(size=shape)], {}))
    entry("mean_axis", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a: a.mean(axis=0), rng, (3, 4)),
        [rng.normal(size=shape)], {}))
    entry("softmax_flat", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.softmax_flat, rng, shape),
        [rng.normal(size=shape)], {}))
    entry("broadcast_scalar", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a: ad.broadcast_scalar(a, (3, 5)), rng, (3, 5)),
        [rng.normal(size=())], {}))
    entry("channel_concat", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a, b: ad.channel_concat([a, b]), rng, (5, 3, 4)),
        [rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 3, 4))], {}))
    entry("conv2d_s1", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda x, w, b: ad.conv2d(x, w, b, 1, 1), rng, (3, 6, 6)),
        [rng.normal(size=(2, 6, 6)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)], {}))
    entry("conv2d_s2", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda x, w, b: ad.conv2d(x, w, b, 2, 1), rng, (3, 4, 4)),
        [rng.normal(size=(2, 7, 7)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)], {}))
    entry("linear", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.linear, rng, (4,)),
        [rng.normal(size=6), rng.normal(size=(4, 6)), rng.normal(size=4)], {}))

    def pool_points(rng):
        # distinct entries so the argmax tie rule never engages
        vals = rng.permutation(2 * 8 * 8).reshape(2, 8, 8).astype(np.float64)
        return vals / 16.0 + rng.uniform(0.0, 0.02, size=(2, 8, 8))

    entry("max_pool_2x2", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.max_pool_2x2, rng, (2, 4, 4)),
        [pool_points(rng)], {}))
    entry("nearest_upsample_2x", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.nearest_upsample_2x, rng, (2, 8, 8)),
        [rng.normal(size=(2, 4, 4))], {}))
    entry("avg_downsample_2x", _PRIMITIVE_TOL, lambda rng: (
        weighted(ad.avg_downsample_2x, rng, (2, 3, 4)),
        [rng.normal(size=(2, 7, 9))], {}))
    entry("pixel_shuffle", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a: ad.pixel_shuffle(a, 2), rng, (2, 6, 6)),
        [rng.normal(size=(8, 3, 3))], {}))
    entry("pixel_unshuffle", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a: ad.pixel_unshuffle(a, 2), rng, (8, 3, 3)),
        [rng.normal(size=(2, 6, 6))], {}))
    entry("gaussian_blur", _PRIMITIVE_TOL, lambda rng: (
        weighted(lambda a: ad.gaussian_blur(a, 1.5, 5), rng, (2, 4, 4)),
        [rng.normal(size=(2, 14, 14))], {}))

    # composite losses ------------------------------------------------
    entry("loss_mae", _PRIMITIVE_TOL, lambda rng: (
        lambda e, g: loss_mae(e, g),
        list(_unit_pair(rng, (3, 8, 8))), {}))

    def msssim_builder(rng):
        est, gt = _unit_pair(rng, (3, 176, 176))
        return (
            lambda e, g: ms_ssim(e, g, 5),
            [est, gt],
            {"max_coords": 4, "step": 1e-3},
        )

    entry("ms_ssim", _MSSSIM_TOL, msssim_builder)

    def loss_es_builder(rng):
        est, gt = _unit_pair(rng, (3, 176, 176))
        return (
            lambda e, g: loss_es(e, g, 0.15, 5),
            [est, gt],
            {"max_coords": 4, "step": 1e-3},
        )

    entry("loss_es", _PRIMITIVE_TOL, loss_es_builder)

    def loss_bp_builder(rng):
        est = rng.uniform(0.05, 0.95, size=(8, 8))
        w = aoi_weight_map(rng.uniform(0.0, 1.0, size=(8, 8)))
        return (lambda e: loss_bp(e, w), [est], {})

    entry("loss_bp", _PRIMITIVE_TOL, loss_bp_builder)
    return E


def run_grad_suite(instances: int = DEFAULT_INSTANCES, seed: int = 0) -> list[SuiteResult]:
    """Run every check ``instances`` times; returns per-op results."""
    results = []
    for name, tol, builder in _suite_entries():
        start = time.perf_counter()
        worst = 0.0
        for k in range(instances):
            rng = np.random.default_rng([0x9D, seed, zlib.crc32(name.encode()), k])
            fn, points, kwargs = builder(rng)
            kwargs.setdefault("step", 1e-5)
            err = grad_check(fn, points, seed=k, **kwargs)
            worst = max(worst, err)
        results.append(
            SuiteResult(
                name=name,
                max_error=worst,
                tolerance=tol,
                instances=instances,
                seconds=time.perf_counter() - start,
            )
        )
    return results
