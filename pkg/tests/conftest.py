"""Shared helpers: hand-built groups and tiny trained models."""

import numpy as np
import pytest

from exposhift.rawproc import ExifMeta, RawFrame
from exposhift.synthcam import ImageGroup


def build_frame(level, t, extent=16, iso=800.0, gains=(2.0, 1.0, 1.5, 1.0)):
    """Constant-count frame at normalized value ``level`` in [0,1]."""
    black, white = 512, 16383
    counts = np.full((extent, extent), round(black + level * (white - black)),
                     dtype=np.uint16)
    meta = ExifMeta(iso=iso, exposure_time=float(np.float32(t)), wb_gains=gains,
                    aperture=2.8)
    return RawFrame(width=extent, height=extent, black_level=black,
                    white_level=white, counts=counts, meta=meta)


def build_group(levels, gt_index=2, invalid=(), extent=16, iso=800.0,
                gains=(2.0, 1.0, 1.5, 1.0), t_max=0.5):
    """Hand-made 8-frame group with given per-frame normalized levels."""
    assert len(levels) == 8
    times = t_max * (0.5 ** np.arange(8))
    frames = tuple(
        build_frame(levels[k], times[k], extent=extent, iso=iso, gains=gains)
        for k in range(8)
    )
    return ImageGroup(frames=frames, gt_index=gt_index, invalid=frozenset(invalid))


@pytest.fixture(scope="session")
def tiny_dataset():
    from exposhift.synthcam import generate_dataset

    return generate_dataset(8, extent=96, seed=3)


@pytest.fixture(scope="session")
def tiny_config():
    from exposhift.harness import TrainConfig

    return TrainConfig(
        patch_size=16,
        esn_depth=2,
        esn_base_channels=8,
        esn_epochs=2,
        bpn_epochs=2,
        bpn_input_extent=16,
        bpn_conv_channels=(8, 16),
        bpn_fc_widths=(8, 1),
        data_seed=3,
        init_seed=4,
        train_seed=5,
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_dataset, tiny_config):
    """Small end-to-end trained checkpoint shared by harness tests."""
    from exposhift.conditioning import fit_norm_stats
    from exposhift.harness import (
        Checkpoint,
        Provenance,
        split_groups,
        train_bpn,
        train_esn,
    )

    cfg = tiny_config
    train_idx, _ = split_groups(len(tiny_dataset), cfg.val_fraction, cfg.data_seed)
    stats = fit_norm_stats([tiny_dataset[i] for i in train_idx])
    params, esn_cfg, esn_log = train_esn(tiny_dataset, stats, cfg)
    bpn_params, bpn_cfg, bpn_log = train_bpn(tiny_dataset, params, esn_cfg, stats, cfg)
    ckpt = Checkpoint(
        esn_config=esn_cfg,
        esn_params=params,
        stats=stats,
        bpn_config=bpn_cfg,
        bpn_params=bpn_params,
        provenance=Provenance(
            data_seed=cfg.data_seed,
            init_seed=cfg.init_seed,
            train_seed=cfg.train_seed,
            esn_epochs=cfg.esn_epochs,
            bpn_epochs=cfg.bpn_epochs,
            final_train_loss=esn_log.train_loss[-1],
            final_val_loss=esn_log.val_loss[-1],
            final_bpn_loss=bpn_log.train_loss[-1],
        ),
    )
    return ckpt, esn_log, bpn_log
