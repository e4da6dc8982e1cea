"""End-to-end training, evaluation, sequence processing, and persistence.

Phase one trains the exposure-shifting U-Net on (low-light frame, reference
frame) pairs with the guideline slot of the metadata vector filled by the
reference frame's real exposure time.  Phase two freezes those weights
bit-for-bit and trains the brightness predictor through them: its scalar
output becomes the guideline plane, the frozen network renders the
estimate, and the midtone-weighted loss scores the result against the
reference's weight map.  Batch size is 1 and the learning rate decays
log-linearly per epoch.
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import (
    GradTape,
    Tensor,
    adam_init,
    adam_step,
    broadcast_scalar,
    channel_concat,
)
from .bpn import (
    BpnConfig,
    aoi_weight_map,
    bpn_forward_z,
    bpn_init,
    bpn_param_shapes,
    loss_bp,
)
from .conditioning import (
    IEV_LENGTH,
    NormStats,
    build_iev,
    build_piev,
    normalize_and_broadcast,
    normalize_packed,
)
from .esn import (
    EsnConfig,
    esn_forward,
    esn_init,
    esn_param_shapes,
    feasible_ssim_levels,
    loss_es,
)
from .metrics import group_brightness_stats, t1_filter
from .rawproc import (
    FormatError,
    RawFrame,
    brightness,
    pack_bayer,
    raw_to_rgb_reference,
    resize_nearest,
)
from .synthcam import ImageGroup, eligible_indices, random_crop, sample_pair

__all__ = [
    "TrainConfig",
    "TrainLog",
    "Checkpoint",
    "CheckpointError",
    "split_groups",
    "epoch_learning_rate",
    "params_digest",
    "train_esn",
    "train_bpn",
    "predict_t1",
    "enhance_with_t1",
    "evaluate",
    "enhance_sequence",
    "save_checkpoint",
    "load_checkpoint",
    "save_norm_stats",
    "load_norm_stats",
    "group_cv_report",
    "ablation_bpn_direct",
]


class CheckpointError(FormatError):
    """Malformed or inconsistent checkpoint bytes."""


@dataclass
class TrainConfig:
    """Hyperparameters for both phases; defaults are the desk-scale preset."""

    alpha: float = 0.15
    lr_start: float = 2e-4
    lr_end: float = 1e-5
    esn_epochs: int = 40
    bpn_epochs: int = 15
    patch_size: int = 64  # packed units; reference patches are twice this
    bpn_input_extent: int = 64
    esn_depth: int = 3
    esn_base_channels: int = 16
    bpn_conv_channels: tuple = (16, 32, 64, 64)
    bpn_fc_widths: tuple = (32, 1)
    ssim_levels: int = 5  # upper bound; the trainer fits this to the patch
    val_fraction: float = 0.2
    data_seed: int = 0
    init_seed: int = 1
    train_seed: int = 2

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end >= 0.0):
            raise ValueError(
                f"TrainConfig: need lr_start >= lr_end >= 0, got "
                f"{self.lr_start}, {self.lr_end}"
            )
        if self.esn_epochs < 1 or self.bpn_epochs < 1:
            raise ValueError("TrainConfig: epoch counts must be >= 1")
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError(f"TrainConfig: alpha must be in [0,1), got {self.alpha}")
        if self.patch_size % (2**self.esn_depth):
            raise ValueError(
                f"TrainConfig: patch_size {self.patch_size} not divisible by "
                f"2**{self.esn_depth}"
            )

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        """Full-scale preset: 512x512 patches, 300 + 100 epochs."""
        base = dict(
            patch_size=512,
            bpn_input_extent=512,
            esn_epochs=300,
            bpn_epochs=100,
            esn_depth=4,
            esn_base_channels=32,
        )
        base.update(overrides)
        return cls(**base)

    def esn_config(self) -> EsnConfig:
        return EsnConfig(
            depth=self.esn_depth,
            base_channels=self.esn_base_channels,
            input_channels=4 + IEV_LENGTH,
        )

    def bpn_config(self) -> BpnConfig:
        return BpnConfig(
            conv_stages=len(self.bpn_conv_channels),
            conv_channels=tuple(self.bpn_conv_channels),
            fc_widths=tuple(self.bpn_fc_widths),
            input_extent=self.bpn_input_extent,
        )


@dataclass
class TrainLog:
    """Per-epoch means plus the final epoch's raw step losses."""

    phase: str
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    final_step_losses: list = field(default_factory=list)
    ssim_levels: int = 0


def epoch_learning_rate(config: TrainConfig, epoch: int, total_epochs: int) -> float:
    """Log-linear decay; equals lr_start and lr_end exactly at the ends."""
    if epoch <= 0 or total_epochs <= 1:
        return config.lr_start
    if epoch >= total_epochs - 1:
        return config.lr_end
    frac = epoch / (total_epochs - 1)
    return float(
        np.exp(
            np.log(config.lr_start)
            + frac * (np.log(config.lr_end) - np.log(config.lr_start))
        )
    )


def split_groups(n_groups: int, val_fraction: float, seed: int):
    """Deterministic group-identity split into (train, held-out) indices."""
    if n_groups < 1:
        raise ValueError("split_groups: empty dataset")
    order = np.random.default_rng([0x5B17, seed]).permutation(n_groups)
    n_val = int(round(n_groups * val_fraction))
    if n_groups >= 2 and val_fraction > 0.0:
        n_val = min(max(n_val, 1), n_groups - 1)
    else:
        n_val = 0
    val = sorted(int(i) for i in order[:n_val])
    train = sorted(int(i) for i in order[n_val:])
    return train, val


def params_digest(params: dict[str, Tensor]) -> str:
    """SHA-256 over canonical (name-sorted) float64 parameter bytes."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].data.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# phase one: exposure shifting
# ---------------------------------------------------------------------------


class _GroupCache:
    """Per-group precomputation shared by both phases."""

    def __init__(self, groups):
        self.groups = list(groups)
        self.gt_rgb = [raw_to_rgb_reference(g.frames[g.gt_index]) for g in self.groups]
        self.eligible = [eligible_indices(g) for g in self.groups]

    def packed(self, gi: int, fi: int) -> np.ndarray:
        return pack_bayer(self.groups[gi].frames[fi])


def _center_offsets(extent: int, size: int):
    o = (extent - size) // 2
    return o, o


def _esn_pair_loss(
    cache, gi, fi, oy, ox, params, esn_cfg, stats, config, levels, tape=None
):
    """Loss of one (frame, crop) pair; records on ``tape`` when given."""
    group = cache.groups[gi]
    frame = group.frames[fi]
    size = config.patch_size
    packed = cache.packed(gi, fi)[:, oy : oy + size, ox : ox + size]
    target = cache.gt_rgb[gi][:, 2 * oy : 2 * (oy + size), 2 * ox : 2 * (ox + size)]
    iev = build_iev(frame.meta, group.gt_time)
    planes = normalize_and_broadcast(iev, stats, size, size)
    est = esn_forward(normalize_packed(packed, stats), planes, params, esn_cfg)
    return loss_es(est, Tensor(target), config.alpha, levels)


def train_esn(groups, stats: NormStats, config: TrainConfig):
    """Phase one; returns (params, esn_config, log)."""
    if not groups:
        raise ValueError("train_esn: empty dataset")
    esn_cfg = config.esn_config()
    params = esn_init(esn_cfg, config.init_seed)
    state = adam_init(params)
    train_idx, val_idx = split_groups(len(groups), config.val_fraction, config.data_seed)
    cache = _GroupCache(groups)
    levels = feasible_ssim_levels(2 * config.patch_size, config.ssim_levels)
    log = TrainLog(phase="esn", ssim_levels=levels)
    rng = np.random.default_rng([0x7E5A, config.train_seed])

    for epoch in range(config.esn_epochs):
        lr = epoch_learning_rate(config, epoch, config.esn_epochs)
        step_losses = []
        for gi in rng.permutation(np.asarray(train_idx)):
            gi = int(gi)
            group = cache.groups[gi]
            x_frame, _, _, _ = sample_pair(group, rng)
            fi = group.frames.index(x_frame)
            h = group.frames[fi].height // 2
            w = group.frames[fi].width // 2
            oy = int(rng.integers(0, h - config.patch_size + 1))
            ox = int(rng.integers(0, w - config.patch_size + 1))
            with GradTape() as tape:
                for p in params.values():
                    tape.watch(p)
                loss = _esn_pair_loss(
                    cache, gi, fi, oy, ox, params, esn_cfg, stats, config, levels
                )
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"train_esn: non-finite loss at epoch {epoch}, group {gi}, "
                    f"frame {fi}, crop ({oy},{ox})"
                )
            grads = tape.gradients(loss, params)
            adam_step(params, grads, state, lr)
            step_losses.append(value)
        log.train_loss.append(float(np.mean(step_losses)))
        log.learning_rate.append(lr)
        log.val_loss.append(
            _esn_validation_loss(cache, val_idx, params, esn_cfg, stats, config, levels)
        )
        if epoch == config.esn_epochs - 1:
            log.final_step_losses = step_losses
    return params, esn_cfg, log


def _esn_validation_loss(cache, val_idx, params, esn_cfg, stats, config, levels):
    if not val_idx:
        return float("nan")
    losses = []
    for gi in val_idx:
        group = cache.groups[gi]
        eligible = cache.eligible[gi]
        if not eligible:
            continue
        fi = eligible[len(eligible) // 2]
        h = group.frames[fi].height // 2
        oy, ox = _center_offsets(h, config.patch_size)
        loss = _esn_pair_loss(
            cache, gi, fi, oy, ox, params, esn_cfg, stats, config, levels
        )
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else float("nan")


# ---------------------------------------------------------------------------
# phase two: brightness prediction through the frozen shifter
# ---------------------------------------------------------------------------


def _bpn_pair_loss(
    cache, gi, fi, oy, ox, bpn_params, bpn_cfg, esn_params, esn_cfg, stats, config
):
    """Midtone-weighted loss for one pair; frozen net stays off-tape."""
    group = cache.groups[gi]
    frame = group.frames[fi]
    size = 2 * config.patch_size
    packed = cache.packed(gi, fi)[:, oy : oy + size, ox : ox + size]
    target = cache.gt_rgb[gi][:, 2 * oy : 2 * (oy + size), 2 * ox : 2 * (ox + size)]
    weight = aoi_weight_map(target.mean(axis=0), bpn_cfg.mu_w, bpn_cfg.sigma_w_sq)

    piev = build_piev(frame.meta)
    small = resize_nearest(packed, bpn_cfg.input_extent)
    piev_planes = normalize_and_broadcast(
        piev, stats, bpn_cfg.input_extent, bpn_cfg.input_extent
    )
    z = bpn_forward_z(normalize_packed(small, stats), piev_planes, bpn_params, bpn_cfg)

    # the scalar becomes the guideline plane, standardized like any log-time
    z_norm = (z - float(stats.iev_mean[6])) * (1.0 / float(stats.iev_std[6]))
    t1_plane = broadcast_scalar(z_norm, (1, size, size))
    const_planes = normalize_and_broadcast(piev, stats, size, size)
    planes = channel_concat([const_planes, t1_plane])

    est = esn_forward(normalize_packed(packed, stats), planes, esn_params, esn_cfg)
    est_gray = est.mean(axis=0)
    loss = loss_bp(est_gray, weight, bpn_cfg.mu_w, bpn_cfg.sigma_v_sq)
    return loss, z


def train_bpn(groups, esn_params, esn_cfg: EsnConfig, stats: NormStats, config: TrainConfig):
    """Phase two; returns (bpn_params, bpn_config, log).

    The shifter parameters are never watched on the tape (structurally no
    gradient can reach them) and their digest is asserted unchanged.
    """
    if not groups:
        raise ValueError("train_bpn: empty dataset")
    bpn_cfg = config.bpn_config()
    bpn_params = bpn_init(bpn_cfg, config.init_seed + 1)
    state = adam_init(bpn_params)
    train_idx, val_idx = split_groups(len(groups), config.val_fraction, config.data_seed)
    cache = _GroupCache(groups)
    patch = 2 * config.patch_size
    log = TrainLog(phase="bpn")
    rng = np.random.default_rng([0xB9A2, config.train_seed])
    digest_before = params_digest(esn_params)

    for epoch in range(config.bpn_epochs):
        lr = epoch_learning_rate(config, epoch, config.bpn_epochs)
        step_losses = []
        for gi in rng.permutation(np.asarray(train_idx)):
            gi = int(gi)
            group = cache.groups[gi]
            x_frame, _, _, _ = sample_pair(group, rng)
            fi = group.frames.index(x_frame)
            h = group.frames[fi].height // 2
            w = group.frames[fi].width // 2
            if patch > h or patch > w:
                raise ValueError(
                    f"train_bpn: patch {patch} exceeds packed extent {h}x{w}"
                )
            oy = int(rng.integers(0, h - patch + 1))
            ox = int(rng.integers(0, w - patch + 1))
            with GradTape() as tape:
                for p in bpn_params.values():
                    tape.watch(p)
                loss, _ = _bpn_pair_loss(
                    cache, gi, fi, oy, ox, bpn_params, bpn_cfg, esn_params,
                    esn_cfg, stats, config,
                )
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"train_bpn: non-finite loss at epoch {epoch}, group {gi}, "
                    f"frame {fi}, crop ({oy},{ox})"
                )
            grads = tape.gradients(loss, bpn_params)
            adam_step(bpn_params, grads, state, lr)
            step_losses.append(value)
        log.train_loss.append(float(np.mean(step_losses)))
        log.learning_rate.append(lr)
        log.val_loss.append(
            _bpn_validation_loss(
                cache, val_idx, bpn_params, bpn_cfg, esn_params, esn_cfg, stats, config
            )
        )
        if epoch == config.bpn_epochs - 1:
            log.final_step_losses = step_losses

    if params_digest(esn_params) != digest_before:
        raise RuntimeError(
            "train_bpn: frozen exposure-shifter parameters changed during the "
            "phase; aborting"
        )
    return bpn_params, bpn_cfg, log


def _bpn_validation_loss(
    cache, val_idx, bpn_params, bpn_cfg, esn_params, esn_cfg, stats, config
):
    if not val_idx:
        return float("nan")
    patch = 2 * config.patch_size
    losses = []
    for gi in val_idx:
        group = cache.groups[gi]
        eligible = cache.eligible[gi]
        if not eligible:
            continue
        fi = eligible[len(eligible) // 2]
        h = group.frames[fi].height // 2
        oy, ox = _center_offsets(h, patch)
        loss, _ = _bpn_pair_loss(
            cache, gi, fi, oy, ox, bpn_params, bpn_cfg, esn_params, esn_cfg,
            stats, config,
        )
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else float("nan")


# ---------------------------------------------------------------------------
# checkpointed model and inference
# ---------------------------------------------------------------------------


@dataclass
class Provenance:
    data_seed: int = 0
    init_seed: int = 0
    train_seed: int = 0
    esn_epochs: int = 0
    bpn_epochs: int = 0
    final_train_loss: float = float("nan")
    final_val_loss: float = float("nan")
    final_bpn_loss: float = float("nan")


@dataclass
class Checkpoint:
    esn_config: EsnConfig
    esn_params: dict
    stats: NormStats
    bpn_config: BpnConfig | None = None
    bpn_params: dict | None = None
    provenance: Provenance = field(default_factory=Provenance)


def predict_t1(frame: RawFrame, ckpt: Checkpoint) -> float:
    """Guideline exposure time for one frame (requires the predictor)."""
    if ckpt.bpn_params is None or ckpt.bpn_config is None:
        raise CheckpointError(
            "checkpoint has no brightness predictor; use the shifter-only "
            "path with an explicit guideline time (enhance --t1 <seconds>)"
        )
    cfg = ckpt.bpn_config
    packed = pack_bayer(frame)
    small = resize_nearest(packed, cfg.input_extent)
    piev_planes = normalize_and_broadcast(
        build_piev(frame.meta), ckpt.stats, cfg.input_extent, cfg.input_extent
    )
    z = bpn_forward_z(
        normalize_packed(small, ckpt.stats), piev_planes, ckpt.bpn_params, cfg
    )
    return float(np.exp(z.data))


def enhance_with_t1(frame: RawFrame, ckpt: Checkpoint, t1: float) -> np.ndarray:
    """Shifter-only enhancement with an explicit guideline time.

    Packed extents that do not divide by 2**depth are reflect-padded on the
    bottom/right and the output cropped back.
    """
    packed = pack_bayer(frame)
    _, h, w = packed.shape
    div = 2**ckpt.esn_config.depth
    ph, pw = (-h) % div, (-w) % div
    if ph or pw:
        packed = np.pad(packed, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    planes = normalize_and_broadcast(
        build_iev(frame.meta, t1), ckpt.stats, h + ph, w + pw
    )
    est = esn_forward(
        normalize_packed(packed, ckpt.stats), planes, ckpt.esn_params, ckpt.esn_config
    )
    return est.data[:, : 2 * h, : 2 * w]


def evaluate(frame: RawFrame, ckpt: Checkpoint):
    """Full two-stage enhancement; returns (rgb image, guideline time)."""
    t1 = predict_t1(frame, ckpt)
    return enhance_with_t1(frame, ckpt, t1), t1


def enhance_sequence(
    frames, ckpt: Checkpoint, filter_mode: str = "identity", beta: float = 0.5
):
    """Per-frame enhancement with optional guideline-time smoothing.

    Returns (enhanced images, raw t1 trace, filtered t1 trace).  Each frame
    is processed independently; smoothing only reorders which time the
    shifter is finally conditioned on.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("enhance_sequence: needs at least one frame")
    raw_trace = []
    for i, frame in enumerate(frames):
        try:
            raw_trace.append(predict_t1(frame, ckpt))
        except Exception as exc:
            raise RuntimeError(f"enhance_sequence: frame {i} failed: {exc}") from exc
    filtered = t1_filter(raw_trace, filter_mode, beta)
    images = []
    for i, (frame, t1) in enumerate(zip(frames, filtered)):
        try:
            images.append(enhance_with_t1(frame, ckpt, t1))
        except Exception as exc:
            raise RuntimeError(f"enhance_sequence: frame {i} failed: {exc}") from exc
    return images, raw_trace, filtered


# ---------------------------------------------------------------------------
# binary persistence
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"ESBP"
_CKPT_VERSION = 1
_STATS_MAGIC = b"NSTA"
_STATS_VERSION = 1


def _pack_stats(stats: NormStats) -> bytes:
    out = struct.pack("<I", stats.version)
    for arr in (stats.channel_mean, stats.channel_std, stats.iev_mean, stats.iev_std):
        out += np.asarray(arr, dtype="<f8").tobytes()
    return out


def _unpack_stats(buf: io.BytesIO) -> NormStats:
    (version,) = struct.unpack("<I", buf.read(4))
    arrays = []
    for n in (4, 4, IEV_LENGTH, IEV_LENGTH):
        raw = buf.read(8 * n)
        if len(raw) != 8 * n:
            raise CheckpointError("stats block truncated")
        arrays.append(np.frombuffer(raw, dtype="<f8").copy())
    return NormStats(*arrays, version=version)


def save_norm_stats(stats: NormStats, path: str | Path) -> None:
    Path(path).write_bytes(
        _STATS_MAGIC + struct.pack("<H", _STATS_VERSION) + _pack_stats(stats)
    )


def load_norm_stats(path: str | Path) -> NormStats:
    data = Path(path).read_bytes()
    if data[:4] != _STATS_MAGIC:
        raise FormatError(f"stats file: bad magic {data[:4]!r}")
    (version,) = struct.unpack("<H", data[4:6])
    if version != _STATS_VERSION:
        raise FormatError(f"stats file: unsupported version {version}")
    return _unpack_stats(io.BytesIO(data[6:]))


def _pack_params(prefix: str, params: dict) -> bytes:
    out = b""
    for name in sorted(params):
        full = f"{prefix}/{name}".encode()
        data = params[name].data
        out += struct.pack("<H", len(full)) + full
        out += struct.pack("<I", data.ndim)
        out += struct.pack(f"<{data.ndim}I", *data.shape)
        out += data.astype("<f4").tobytes()
    return out


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    has_bpn = ckpt.bpn_params is not None and ckpt.bpn_config is not None
    out = bytearray()
    out += _CKPT_MAGIC
    out += struct.pack("<HB", _CKPT_VERSION, 1 if has_bpn else 0)
    ec = ckpt.esn_config
    out += struct.pack("<IIId", ec.depth, ec.base_channels, ec.input_channels, ec.leaky_slope)
    if has_bpn:
        bc = ckpt.bpn_config
        out += struct.pack("<I", bc.conv_stages)
        out += struct.pack(f"<{bc.conv_stages}I", *bc.conv_channels)
        out += struct.pack("<I", len(bc.fc_widths))
        out += struct.pack(f"<{len(bc.fc_widths)}I", *bc.fc_widths)
        out += struct.pack(
            "<IIdddd",
            bc.input_extent,
            bc.input_channels,
            bc.leaky_slope,
            bc.mu_w,
            bc.sigma_w_sq,
            bc.sigma_v_sq,
        )
    out += _pack_stats(ckpt.stats)
    p = ckpt.provenance
    out += struct.pack(
        "<qqqIIddd",
        p.data_seed,
        p.init_seed,
        p.train_seed,
        p.esn_epochs,
        p.bpn_epochs,
        p.final_train_loss,
        p.final_val_loss,
        p.final_bpn_loss,
    )
    blobs = _pack_params("esn", ckpt.esn_params)
    count = len(ckpt.esn_params)
    if has_bpn:
        blobs += _pack_params("bpn", ckpt.bpn_params)
        count += len(ckpt.bpn_params)
    out += struct.pack("<I", count)
    out += blobs
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    buf = io.BytesIO(data)

    def read(n: int) -> bytes:
        raw = buf.read(n)
        if len(raw) != n:
            raise CheckpointError(
                f"checkpoint truncated at byte {buf.tell() - len(raw)}"
            )
        return raw

    def unpack(fmt: str):
        return struct.unpack(fmt, read(struct.calcsize(fmt)))

    if read(4) != _CKPT_MAGIC:
        raise CheckpointError("checkpoint: bad magic")
    version, has_bpn = unpack("<HB")
    if version != _CKPT_VERSION:
        raise CheckpointError(f"checkpoint: unsupported version {version}")
    depth, base, in_ch, slope = unpack("<IIId")
    esn_cfg = EsnConfig(depth=depth, base_channels=base, input_channels=in_ch, leaky_slope=slope)
    bpn_cfg = None
    if has_bpn:
        (stages,) = unpack("<I")
        channels = unpack(f"<{stages}I")
        (n_fc,) = unpack("<I")
        fc = unpack(f"<{n_fc}I")
        extent, bin_ch, bslope, mu_w, sw, sv = unpack("<IIdddd")
        bpn_cfg = BpnConfig(
            conv_stages=stages,
            conv_channels=channels,
            fc_widths=fc,
            input_extent=extent,
            input_channels=bin_ch,
            leaky_slope=bslope,
            mu_w=mu_w,
            sigma_w_sq=sw,
            sigma_v_sq=sv,
        )
    stats = _unpack_stats(buf)
    prov = Provenance(*unpack("<qqqIIddd"))
    (count,) = unpack("<I")

    expected: dict[str, tuple] = {
        f"esn/{k}": v for k, v in esn_param_shapes(esn_cfg).items()
    }
    if bpn_cfg is not None:
        expected.update(
            {f"bpn/{k}": v for k, v in bpn_param_shapes(bpn_cfg).items()}
        )
    if count != len(expected):
        raise CheckpointError(
            f"checkpoint: has {count} parameters, configs require {len(expected)}"
        )
    esn_params: dict = {}
    bpn_params: dict = {}
    for _ in range(count):
        (name_len,) = unpack("<H")
        full = read(name_len).decode()
        (rank,) = unpack("<I")
        dims = unpack(f"<{rank}I")
        if full not in expected:
            raise CheckpointError(f"checkpoint: unexpected parameter {full!r}")
        if dims != expected[full]:
            raise CheckpointError(
                f"checkpoint: parameter {full!r} has shape {dims}, configs "
                f"require {expected[full]}"
            )
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(read(4 * n), dtype="<f4").astype(np.float64).reshape(dims)
        scope, _, name = full.partition("/")
        (esn_params if scope == "esn" else bpn_params)[name] = Tensor(arr)
    if buf.read(1):
        raise CheckpointError("checkpoint: trailing bytes after parameter records")
    return Checkpoint(
        esn_config=esn_cfg,
        esn_params=esn_params,
        stats=stats,
        bpn_config=bpn_cfg,
        bpn_params=bpn_params if has_bpn else None,
        provenance=prov,
    )


# ---------------------------------------------------------------------------
# evaluation reports
# ---------------------------------------------------------------------------


def group_cv_report(groups, ckpt: Checkpoint, group_ids=None):
    """Pre/post brightness statistics per group, via the full two-stage path.

    Returns a list of dicts with pre/post mean and CV, plus the mean input
    and predicted guideline times over the group's eligible frames.
    """
    rows = []
    for gi, group in enumerate(groups):
        eligible = eligible_indices(group)
        if len(eligible) < 2:
            continue
        inputs = [group.frames[k] for k in eligible]
        pre_images = [raw_to_rgb_reference(f) for f in inputs]
        outputs = []
        t1s = []
        for f in inputs:
            rgb, t1 = evaluate(f, ckpt)
            outputs.append(rgb)
            t1s.append(t1)
        gid = str(group_ids[gi]) if group_ids is not None else str(gi)
        pre = group_brightness_stats(pre_images, gid)
        post = group_brightness_stats(outputs, gid)
        rows.append(
            {
                "group": gid,
                "pre_mu": pre.mu,
                "pre_cv": pre.cv,
                "post_mu": post.mu,
                "post_cv": post.cv,
                "mean_t0": float(np.mean([f.meta.exposure_time for f in inputs])),
                "mean_t1": float(np.mean(t1s)),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# direct-regression ablation
# ---------------------------------------------------------------------------


def ablation_bpn_direct(groups, stats: NormStats, config: TrainConfig):
    """Train the predictor as plain log-time regression onto t_g.

    This is the approach the two-stage design replaces: the reference
    frame's exposure time is a single high-variance draw per group, so the
    regressor can only learn its coarse trend.  Returns (params, config,
    held-out log-time absolute error).
    """
    if not groups:
        raise ValueError("ablation_bpn_direct: empty dataset")
    bpn_cfg = config.bpn_config()
    params = bpn_init(bpn_cfg, config.init_seed + 2)
    state = adam_init(params)
    train_idx, val_idx = split_groups(len(groups), config.val_fraction, config.data_seed)
    cache = _GroupCache(groups)
    rng = np.random.default_rng([0xD14C, config.train_seed])
    patch = 2 * config.patch_size

    def forward_z(gi, fi, oy, ox):
        group = cache.groups[gi]
        frame = group.frames[fi]
        packed = cache.packed(gi, fi)[:, oy : oy + patch, ox : ox + patch]
        small = resize_nearest(packed, bpn_cfg.input_extent)
        piev_planes = normalize_and_broadcast(
            build_piev(frame.meta), stats, bpn_cfg.input_extent, bpn_cfg.input_extent
        )
        return bpn_forward_z(
            normalize_packed(small, stats), piev_planes, params, bpn_cfg
        )

    for epoch in range(config.bpn_epochs):
        lr = epoch_learning_rate(config, epoch, config.bpn_epochs)
        for gi in rng.permutation(np.asarray(train_idx)):
            gi = int(gi)
            group = cache.groups[gi]
            x_frame, _, _, t_g = sample_pair(group, rng)
            fi = group.frames.index(x_frame)
            h = group.frames[fi].height // 2
            w = group.frames[fi].width // 2
            oy = int(rng.integers(0, h - patch + 1))
            ox = int(rng.integers(0, w - patch + 1))
            with GradTape() as tape:
                for p in params.values():
                    tape.watch(p)
                z = forward_z(gi, fi, oy, ox)
                loss = (z - float(np.log(t_g))).square()
            grads = tape.gradients(loss, params)
            adam_step(params, grads, state, lr)

    errors = []
    for gi in val_idx:
        group = cache.groups[gi]
        eligible = cache.eligible[gi]
        if not eligible:
            continue
        fi = eligible[len(eligible) // 2]
        h = group.frames[fi].height // 2
        oy, ox = _center_offsets(h, patch)
        z = forward_z(gi, fi, oy, ox)
        errors.append(abs(float(z.data) - float(np.log(group.gt_time))))
    heldout_err = float(np.mean(errors)) if errors else float("nan")
    return params, bpn_cfg, heldout_err
