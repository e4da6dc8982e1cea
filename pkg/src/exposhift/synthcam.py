"""Synthetic multi-exposure raw groups: scenes, sensor, sweeps, sampling.

Stands in for a tripod-captured dataset: each group renders one procedural
irradiance scene at 8 strictly descending exposure times through an
S-shaped response with signal-dependent Gaussian noise, then tags a
ground-truth frame (brightness closest to 0.40 among frames that are not
blown out) and any frames dark enough to be pure noise.

Groups serialize to a directory of .cidraw files plus a small manifest:

    group_<NNNN>/frame_<K>.cidraw   K = 0..7, descending exposure time
    group_<NNNN>/manifest.txt       "gt_index=<int>" and "invalid=<ints|empty>"
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .rawproc import (
    ExifMeta,
    RawFrame,
    brightness,
    meta_to_f32,
    raw_to_rgb_reference,
    read_cidraw,
    write_cidraw,
)

__all__ = [
    "Scene",
    "SensorModel",
    "ImageGroup",
    "GroupError",
    "synth_scene",
    "site_exposure",
    "expose",
    "pick_times",
    "make_group",
    "eligible_indices",
    "sample_pair",
    "random_crop",
    "generate_dataset",
    "write_group_dir",
    "read_group_dir",
    "load_dataset",
    "GT_BRIGHTNESS_TARGET",
    "GT_SATURATION_CAP",
    "INVALID_BRIGHTNESS",
    "SWEEP_RATIO",
]

GT_BRIGHTNESS_TARGET = 0.40
GT_SATURATION_CAP = 0.02
INVALID_BRIGHTNESS = 0.02
SWEEP_RATIO = 125.0
GROUP_SIZE = 8


class GroupError(RuntimeError):
    """A rendered group violates the selection rules."""


@dataclass(frozen=True, eq=False)
class Scene:
    """Per-color irradiance map (3,H,W), strictly positive."""

    irradiance: np.ndarray
    seed: tuple

    def __post_init__(self):
        irr = np.asarray(self.irradiance, dtype=np.float64)
        if irr.ndim != 3 or irr.shape[0] != 3:
            raise ValueError(f"Scene: irradiance must be (3,H,W), got {irr.shape}")
        if irr.min() <= 0.0:
            raise ValueError("Scene: irradiance must be strictly positive")
        object.__setattr__(self, "irradiance", irr)


@dataclass(frozen=True)
class SensorModel:
    """Logistic response in log exposure plus signal-dependent noise."""

    crf_a: float = 1.6
    crf_b: float = 0.0
    read_noise_sd: float = 3.0
    shot_noise_gain: float = 3.5
    black_level: int = 512
    white_level: int = 16383

    def __post_init__(self):
        if self.read_noise_sd < 0.0 or self.shot_noise_gain < 0.0:
            raise ValueError("SensorModel: noise parameters must be >= 0")
        if not 0 <= self.black_level < self.white_level <= 65535:
            raise ValueError(
                f"SensorModel: need black_level < white_level <= 65535, got "
                f"{self.black_level}, {self.white_level}"
            )

    def response(self, exposure: np.ndarray) -> np.ndarray:
        """Mean normalized brightness for a given exposure map (>= 0)."""
        e = np.asarray(exposure, dtype=np.float64)
        out = np.zeros_like(e)
        pos = e > 0.0
        out[pos] = 1.0 / (1.0 + np.exp(-self.crf_a * (np.log(e[pos]) - self.crf_b)))
        return out

    def exposure_for(self, level: float) -> float:
        """Exposure at which the response reaches ``level`` in (0,1)."""
        if not 0.0 < level < 1.0:
            raise ValueError(f"exposure_for: level must be in (0,1), got {level}")
        return math.exp(self.crf_b + math.log(level / (1.0 - level)) / self.crf_a)

    def saturation_exposure(self, level: float = 0.99) -> float:
        return self.exposure_for(level)

    def noiseless(self) -> "SensorModel":
        return replace(self, read_noise_sd=0.0, shot_noise_gain=0.0)


def _resize_bilinear(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear upsample of a (C,h,w) grid onto (C,height,width)."""
    c, h, w = arr.shape
    ys = np.linspace(0.0, h - 1.0, height)
    xs = np.linspace(0.0, w - 1.0, width)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    a = arr[:, y0[:, None], x0[None, :]]
    b = arr[:, y0[:, None], x1[None, :]]
    cc = arr[:, y1[:, None], x0[None, :]]
    d = arr[:, y1[:, None], x1[None, :]]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + cc * fy * (1 - fx) + d * fy * fx)


def synth_scene(seed, height: int, width: int) -> Scene:
    """Deterministic procedural scene: smooth base, light discs, a dark patch.

    The irradiance histogram spans several decades by construction: at least
    one disc sits ~3 decades above the scene median (a light source that
    saturates the response at the longest sweep times) and one region is
    scaled 1e-3 below it (near-black sky).  An overall log-uniform
    illumination factor differentiates mild from extreme groups.
    """
    if height < 32 or width < 32 or height % 2 or width % 2:
        raise ValueError(
            f"synth_scene: extent must be even and >= 32, got {height}x{width}"
        )
    seed_key = tuple(np.atleast_1d(seed).tolist())
    rng = np.random.default_rng([0x5CE7E, *seed_key])

    ch, cw = height // 16 + 2, width // 16 + 2
    luma = rng.normal(size=(1, ch, cw))
    tint = rng.normal(size=(3, ch, cw))
    field = 1.1 * _resize_bilinear(np.repeat(luma, 3, axis=0), height, width)
    field += 0.35 * _resize_bilinear(tint, height, width)
    base = np.exp(field)

    illumination = 10.0 ** rng.uniform(-1.0, 1.0)
    irr = base / np.median(base) * illumination

    # near-black rectangle pinned to one corner quadrant (before the light
    # sources so a disc can never be darkened away)
    dy = int(rng.integers(height // 5, height // 3))
    dx = int(rng.integers(width // 5, width // 3))
    corner = int(rng.integers(0, 4))
    ysl = slice(0, dy) if corner in (0, 1) else slice(height - dy, height)
    xsl = slice(0, dx) if corner in (0, 2) else slice(width - dx, width)
    irr[:, ysl, xsl] *= 1e-3

    # light sources: bright enough to saturate at the longest sweep times,
    # small enough that blown sites stay well under the ground-truth cap
    yy, xx = np.mgrid[0:height, 0:width]
    n_discs = int(rng.integers(1, 3))
    for _ in range(n_discs):
        cy = rng.uniform(0.1, 0.9) * height
        cx = rng.uniform(0.1, 0.9) * width
        radius = rng.uniform(height / 28.0, height / 17.0)
        level = illumination * 10.0 ** rng.uniform(2.6, 3.2)
        tint3 = rng.uniform(0.7, 1.3, size=3)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
        irr[:, mask] = level * tint3[:, None]

    span = irr.max() / irr.min()
    if span < 1e3:
        raise GroupError(f"synth_scene: irradiance spans only {span:.1f}x (< 3 decades)")
    return Scene(irradiance=irr, seed=seed_key)


def _mosaic(planes: np.ndarray) -> np.ndarray:
    """Sample the (3,H,W) per-color map at its RGGB sites -> (H,W)."""
    _, h, w = planes.shape
    m = np.empty((h, w))
    m[0::2, 0::2] = planes[0, 0::2, 0::2]
    m[0::2, 1::2] = planes[1, 0::2, 1::2]
    m[1::2, 0::2] = planes[1, 1::2, 0::2]
    m[1::2, 1::2] = planes[2, 1::2, 1::2]
    return m


def site_exposure(scene: Scene, t: float) -> np.ndarray:
    """Per-site exposure map: irradiance at the site's color times t."""
    if t <= 0.0:
        raise ValueError(f"site_exposure: t must be positive, got {t}")
    return _mosaic(scene.irradiance) * t


def expose(
    scene: Scene,
    t: float,
    model: SensorModel,
    meta: ExifMeta,
    noise_seed,
) -> RawFrame:
    """Render one raw frame of the scene at exposure time ``t`` seconds.

    Counts are black_level + response * (white - black) plus Gaussian noise
    with variance read^2 + shot_gain * response * (white - black), rounded
    and clamped to the 16-bit ceiling.
    """
    if t <= 0.0:
        raise ValueError(f"expose: exposure time must be positive, got {t}")
    e = site_exposure(scene, t)
    br = model.response(e)
    span = float(model.white_level - model.black_level)
    mean = model.black_level + br * span
    var = model.read_noise_sd**2 + model.shot_noise_gain * br * span
    if np.any(var > 0.0):
        rng = np.random.default_rng([0xE4B05E, *np.atleast_1d(noise_seed).tolist()])
        mean = mean + rng.standard_normal(mean.shape) * np.sqrt(var)
    counts = np.clip(np.rint(mean), 0, 65535).astype(np.uint16)
    h, w = counts.shape
    frame_meta = meta_to_f32(replace(meta, exposure_time=float(t)))
    return RawFrame(
        width=w,
        height=h,
        black_level=model.black_level,
        white_level=model.white_level,
        counts=counts,
        meta=frame_meta,
    )


def pick_times(
    scene: Scene,
    model: SensorModel,
    rng: np.random.Generator,
    ratio: float = SWEEP_RATIO,
    count: int = GROUP_SIZE,
) -> np.ndarray:
    """Geometric exposure sweep calibrated so the first frame runs bright.

    The upper limit maps a high quantile of the scene irradiance to a
    slightly-overexposed response level (with jitter), mirroring a capture
    protocol that picks the longest time just past overexposure and walks
    down from there.
    """
    target = rng.uniform(0.55, 0.72)
    ref = float(np.quantile(scene.irradiance, 0.6))
    t_max = model.exposure_for(target) / ref
    steps = np.arange(count, dtype=np.float64) / (count - 1)
    return t_max * ratio ** (-steps)


@dataclass(frozen=True, eq=False)
class ImageGroup:
    """Eight frames of one scene at strictly descending exposure times."""

    frames: tuple
    gt_index: int
    invalid: frozenset

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) != GROUP_SIZE:
            raise ValueError(f"ImageGroup: needs exactly {GROUP_SIZE} frames, got {len(frames)}")
        times = [f.meta.exposure_time for f in frames]
        if not all(a > b for a, b in zip(times, times[1:])):
            raise ValueError(f"ImageGroup: exposure times must strictly descend, got {times}")
        invalid = frozenset(int(i) for i in self.invalid)
        if not 0 <= self.gt_index < GROUP_SIZE:
            raise ValueError(f"ImageGroup: gt_index {self.gt_index} out of range")
        if self.gt_index in invalid:
            raise ValueError(f"ImageGroup: gt_index {self.gt_index} is tagged invalid")
        first = frames[0].meta
        for f in frames[1:]:
            if f.meta.iso != first.iso or f.meta.wb_gains != first.wb_gains:
                raise ValueError("ImageGroup: all frames must share ISO and gains")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "invalid", invalid)

    @property
    def gt_time(self) -> float:
        return self.frames[self.gt_index].meta.exposure_time


def make_group(
    scene: Scene,
    model: SensorModel,
    meta: ExifMeta,
    times,
    noise_seed,
) -> ImageGroup:
    """Render 8 frames and apply the ground-truth / invalid tagging rules.

    Ground truth: reference brightness nearest 0.40 among frames with fewer
    than 2% saturated sites.  Invalid: reference brightness below 0.02.
    """
    times = np.asarray(times, dtype=np.float64)
    if times.shape != (GROUP_SIZE,):
        raise ValueError(f"make_group: needs {GROUP_SIZE} times, got {times.shape}")
    if np.any(times <= 0.0) or np.any(np.diff(times) >= 0.0):
        raise ValueError(f"make_group: times must be positive and strictly descending")
    seed_key = tuple(np.atleast_1d(noise_seed).tolist())
    frames = [
        expose(scene, float(t), model, meta, noise_seed=(*seed_key, k))
        for k, t in enumerate(times)
    ]
    brights = [brightness(raw_to_rgb_reference(f)) for f in frames]
    saturated = [float((f.counts >= model.white_level).mean()) for f in frames]

    candidates = [k for k in range(GROUP_SIZE) if saturated[k] < GT_SATURATION_CAP]
    if not candidates:
        raise GroupError(
            f"make_group: no ground-truth candidate (saturation fractions "
            f"{[f'{s:.3f}' for s in saturated]})"
        )
    gt = min(candidates, key=lambda k: (abs(brights[k] - GT_BRIGHTNESS_TARGET), k))
    if brights[gt] < INVALID_BRIGHTNESS:
        raise GroupError(
            f"make_group: best candidate frame {gt} is itself near-black "
            f"(brightness {brights[gt]:.4f}); group too dark"
        )
    invalid = frozenset(k for k in range(GROUP_SIZE) if brights[k] < INVALID_BRIGHTNESS)
    return ImageGroup(frames=tuple(frames), gt_index=gt, invalid=invalid)


def eligible_indices(group: ImageGroup) -> list[int]:
    """Frames usable as low-light inputs: shorter than ground truth, valid."""
    t_g = group.gt_time
    return [
        k
        for k in range(GROUP_SIZE)
        if group.frames[k].meta.exposure_time < t_g and k not in group.invalid
    ]


def sample_pair(group: ImageGroup, rng: np.random.Generator):
    """Uniformly draw one (input, ground truth) pair from a group.

    Returns (x_frame, y_frame, t0, t_g) with t0 < t_g always.
    """
    eligible = eligible_indices(group)
    if not eligible:
        raise GroupError(
            f"sample_pair: group has no eligible frame "
            f"(gt_index={group.gt_index}, invalid={sorted(group.invalid)})"
        )
    k = int(rng.choice(np.asarray(eligible)))
    x = group.frames[k]
    y = group.frames[group.gt_index]
    return x, y, x.meta.exposure_time, group.gt_time


def random_crop(
    x_packed: np.ndarray,
    y_rgb: np.ndarray,
    size: int,
    rng: np.random.Generator,
):
    """Aligned random crop: (4,size,size) from x and (3,2size,2size) from y."""
    if size % 2:
        raise ValueError(f"random_crop: size must be even, got {size}")
    _, h, w = x_packed.shape
    if y_rgb.shape[1] != 2 * h or y_rgb.shape[2] != 2 * w:
        raise ValueError(
            f"random_crop: target extent {y_rgb.shape[1:]} is not twice the "
            f"packed extent {(h, w)}"
        )
    if size > h or size > w:
        raise ValueError(f"random_crop: size {size} exceeds packed extent {h}x{w}")
    oy = int(rng.integers(0, h - size + 1))
    ox = int(rng.integers(0, w - size + 1))
    xc = x_packed[:, oy : oy + size, ox : ox + size]
    yc = y_rgb[:, 2 * oy : 2 * (oy + size), 2 * ox : 2 * (ox + size)]
    return xc, yc


# ---------------------------------------------------------------------------
# dataset generation and directory round-trip
# ---------------------------------------------------------------------------


EXTREME_SWEEP_RATIO = 1000.0


def generate_dataset(
    n_groups: int,
    extent: int = 288,
    seed: int = 0,
    out_dir: str | Path | None = None,
    model: SensorModel | None = None,
    extreme_every: int = 4,
) -> list[ImageGroup]:
    """Render ``n_groups`` synthetic groups; optionally persist them.

    Every ``extreme_every``-th group widens its sweep ratio (the lower
    exposure limit is pushed far into the dark) so the tail frames are
    extreme low-light and exercise the invalid-frame tag.  The upper limit
    stays calibrated to the scene for every group.
    """
    if model is None:
        model = SensorModel()
    groups = []
    for gi in range(n_groups):
        scene = synth_scene((seed, gi), extent, extent)
        rng = np.random.default_rng([0x0D47A, seed, gi])
        iso = float(np.float32(round(10.0 ** rng.uniform(2.0, 3.5))))
        gains = (
            float(np.float32(rng.uniform(1.6, 2.4))),
            1.0,
            float(np.float32(rng.uniform(1.4, 2.2))),
            1.0,
        )
        meta = ExifMeta(iso=iso, exposure_time=1.0, wb_gains=gains, aperture=2.8)
        ratio = SWEEP_RATIO
        if extreme_every and gi % extreme_every == extreme_every - 1:
            ratio = EXTREME_SWEEP_RATIO
        times = pick_times(scene, model, rng, ratio=ratio)
        group = make_group(scene, model, meta, times, noise_seed=(seed, gi))
        groups.append(group)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for gi, group in enumerate(groups):
            write_group_dir(group, out_dir / f"group_{gi:04d}")
    return groups


def write_group_dir(group: ImageGroup, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(group.frames):
        (path / f"frame_{k}.cidraw").write_bytes(write_cidraw(frame))
    invalid = ",".join(str(i) for i in sorted(group.invalid))
    (path / "manifest.txt").write_text(
        f"gt_index={group.gt_index}\ninvalid={invalid}\n"
    )


def read_group_dir(path: str | Path) -> ImageGroup:
    path = Path(path)
    frames = tuple(
        read_cidraw((path / f"frame_{k}.cidraw").read_bytes()) for k in range(GROUP_SIZE)
    )
    manifest = {}
    for line in (path / "manifest.txt").read_text().splitlines():
        line = line.strip()
        if line:
            key, _, value = line.partition("=")
            manifest[key] = value
    gt_index = int(manifest["gt_index"])
    invalid = frozenset(
        int(tok) for tok in manifest.get("invalid", "").split(",") if tok
    )
    return ImageGroup(frames=frames, gt_index=gt_index, invalid=invalid)


def load_dataset(root: str | Path) -> list[ImageGroup]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("group_"))
    if not dirs:
        raise FileNotFoundError(f"load_dataset: no group_* directories under {root}")
    return [read_group_dir(p) for p in dirs]
