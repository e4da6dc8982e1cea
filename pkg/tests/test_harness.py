"""Training phases, schedules, persistence, inference, and the CLI surface."""

import dataclasses

import numpy as np
import pytest

from exposhift import cli
from exposhift.conditioning import fit_norm_stats
from exposhift.harness import (
    Checkpoint,
    CheckpointError,
    TrainConfig,
    enhance_sequence,
    enhance_with_t1,
    epoch_learning_rate,
    evaluate,
    load_checkpoint,
    load_norm_stats,
    params_digest,
    predict_t1,
    save_checkpoint,
    save_norm_stats,
    split_groups,
    train_bpn,
    train_esn,
)
from exposhift.rawproc import read_cidraw, write_cidraw


class TestSchedule:
    def test_endpoints_exact(self):
        cfg = TrainConfig(esn_epochs=40)
        assert epoch_learning_rate(cfg, 0, 40) == cfg.lr_start
        assert epoch_learning_rate(cfg, 39, 40) == cfg.lr_end

    def test_monotone_descent(self):
        cfg = TrainConfig()
        lrs = [epoch_learning_rate(cfg, e, 25) for e in range(25)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_single_epoch_uses_start(self):
        cfg = TrainConfig()
        assert epoch_learning_rate(cfg, 0, 1) == cfg.lr_start

    def test_config_validation(self):
        with pytest.raises(ValueError, match="lr"):
            TrainConfig(lr_start=1e-5, lr_end=2e-4)
        with pytest.raises(ValueError, match="alpha"):
            TrainConfig(alpha=1.0)
        with pytest.raises(ValueError, match="divisible"):
            TrainConfig(patch_size=20, esn_depth=3)


class TestSplit:
    def test_deterministic_and_disjoint(self):
        a = split_groups(20, 0.2, 7)
        b = split_groups(20, 0.2, 7)
        assert a == b
        train, val = a
        assert sorted(train + val) == list(range(20))
        assert len(val) == 4

    def test_always_leaves_training_data(self):
        train, val = split_groups(2, 0.9, 0)
        assert len(train) >= 1 and len(val) == 1

    def test_different_seed_differs(self):
        assert split_groups(20, 0.2, 1) != split_groups(20, 0.2, 2)


class TestTrainingContracts:
    def test_zero_learning_rate_keeps_params(self, tiny_dataset):
        cfg = TrainConfig(
            patch_size=16, esn_depth=2, esn_base_channels=8, esn_epochs=1,
            bpn_epochs=1, bpn_input_extent=16, bpn_conv_channels=(8, 16),
            bpn_fc_widths=(8, 1), lr_start=0.0, lr_end=0.0,
            data_seed=3, init_seed=4, train_seed=5,
        )
        stats = fit_norm_stats(tiny_dataset)
        from exposhift.esn import esn_init

        params, esn_cfg, _ = train_esn(tiny_dataset, stats, cfg)
        reference = esn_init(esn_cfg, cfg.init_seed)
        for k in params:
            np.testing.assert_array_equal(params[k].data, reference[k].data)

        from exposhift.bpn import bpn_init

        bpn_params, bpn_cfg, _ = train_bpn(tiny_dataset, params, esn_cfg, stats, cfg)
        reference = bpn_init(bpn_cfg, cfg.init_seed + 1)
        for k in bpn_params:
            np.testing.assert_array_equal(bpn_params[k].data, reference[k].data)

    def test_deterministic_retrain(self, tiny_dataset, tiny_config):
        cfg = dataclasses.replace(tiny_config, esn_epochs=1)
        stats = fit_norm_stats(tiny_dataset)
        p1, _, _ = train_esn(tiny_dataset, stats, cfg)
        p2, _, _ = train_esn(tiny_dataset, stats, cfg)
        assert params_digest(p1) == params_digest(p2)

    def test_frozen_shifter_digest(self, tiny_dataset, tiny_config):
        stats = fit_norm_stats(tiny_dataset)
        params, esn_cfg, _ = train_esn(
            tiny_dataset, stats, dataclasses.replace(tiny_config, esn_epochs=1)
        )
        before = params_digest(params)
        train_bpn(
            tiny_dataset, params, esn_cfg, stats,
            dataclasses.replace(tiny_config, bpn_epochs=1),
        )
        assert params_digest(params) == before

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train_esn([], None, TrainConfig())


class TestCheckpoint:
    def test_roundtrip_to_f32(self, tiny_model, tmp_path):
        ckpt, _, _ = tiny_model
        path = tmp_path / "model.esbp"
        save_checkpoint(ckpt, path)
        back = load_checkpoint(path)
        assert back.esn_config == ckpt.esn_config
        assert back.bpn_config == ckpt.bpn_config
        assert back.provenance == ckpt.provenance
        np.testing.assert_array_equal(back.stats.iev_mean, ckpt.stats.iev_mean)
        for k, p in ckpt.esn_params.items():
            np.testing.assert_array_equal(
                back.esn_params[k].data, p.data.astype(np.float32).astype(np.float64)
            )

    def test_load_save_byte_identical(self, tiny_model, tmp_path):
        ckpt, _, _ = tiny_model
        p1 = tmp_path / "a.esbp"
        p2 = tmp_path / "b.esbp"
        save_checkpoint(ckpt, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_dim_detected(self, tiny_model, tmp_path):
        ckpt, _, _ = tiny_model
        path = tmp_path / "model.esbp"
        save_checkpoint(ckpt, path)
        blob = bytearray(path.read_bytes())
        # find the first parameter name and corrupt the dim field after it
        idx = blob.find(b"esn/bott_c1_b")
        assert idx > 0
        dim_at = idx + len(b"esn/bott_c1_b") + 4  # skip rank u32
        blob[dim_at:dim_at + 4] = (9999).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="shape|truncated"):
            load_checkpoint(path)

    def test_truncation_detected(self, tiny_model, tmp_path):
        ckpt, _, _ = tiny_model
        path = tmp_path / "model.esbp"
        save_checkpoint(ckpt, path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_bad_magic_and_version(self, tiny_model, tmp_path):
        ckpt, _, _ = tiny_model
        path = tmp_path / "model.esbp"
        save_checkpoint(ckpt, path)
        blob = bytearray(path.read_bytes())
        blob[0] = 0
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)
        blob = bytearray(save_and_read(ckpt, path))
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_norm_stats_file_roundtrip(self, tiny_model, tmp_path):
        ckpt, _, _ = tiny_model
        path = tmp_path / "stats.nsta"
        save_norm_stats(ckpt.stats, path)
        back = load_norm_stats(path)
        np.testing.assert_array_equal(back.channel_mean, ckpt.stats.channel_mean)
        np.testing.assert_array_equal(back.iev_std, ckpt.stats.iev_std)


def save_and_read(ckpt, path):
    save_checkpoint(ckpt, path)
    return path.read_bytes()


class TestInference:
    def test_evaluate_deterministic(self, tiny_dataset, tiny_model):
        ckpt, _, _ = tiny_model
        frame = tiny_dataset[0].frames[5]
        rgb1, t1a = evaluate(frame, ckpt)
        rgb2, t1b = evaluate(frame, ckpt)
        assert t1a == t1b
        np.testing.assert_array_equal(rgb1, rgb2)
        assert rgb1.shape == (3, 96, 96)

    def test_missing_predictor_instructs_explicit_time(self, tiny_dataset, tiny_model):
        ckpt, _, _ = tiny_model
        esn_only = Checkpoint(
            esn_config=ckpt.esn_config, esn_params=ckpt.esn_params, stats=ckpt.stats
        )
        with pytest.raises(CheckpointError, match="explicit"):
            evaluate(tiny_dataset[0].frames[5], esn_only)
        # shifter-only path still works with an explicit guideline time
        rgb = enhance_with_t1(tiny_dataset[0].frames[5], esn_only, 0.5)
        assert rgb.shape == (3, 96, 96)

    def test_padding_for_awkward_extents(self, tiny_dataset, tiny_model):
        ckpt, _, _ = tiny_model
        frame = tiny_dataset[0].frames[4]
        # crop the frame to a packed extent not divisible by 2**depth
        import dataclasses as dc

        cropped = dc.replace(frame, width=84, height=84,
                             counts=frame.counts[:84, :84])
        rgb = enhance_with_t1(cropped, ckpt, 0.5)
        assert rgb.shape == (3, 84, 84)

    def test_single_frame_sequence_matches_evaluate(self, tiny_dataset, tiny_model):
        ckpt, _, _ = tiny_model
        frame = tiny_dataset[0].frames[5]
        images, raw, filt = enhance_sequence([frame], ckpt, "identity")
        rgb, t1 = evaluate(frame, ckpt)
        assert raw == [t1] and filt == [t1]
        np.testing.assert_array_equal(images[0], rgb)

    def test_filtering_contracts_range(self, tiny_dataset, tiny_model):
        ckpt, _, _ = tiny_model
        frames = [tiny_dataset[0].frames[k] for k in (4, 5, 6, 7)]
        _, raw, filt = enhance_sequence(frames, ckpt, "ema", beta=0.6)
        ratio = lambda xs: max(xs) / min(xs)
        assert ratio(filt) <= ratio(raw) + 1e-12

    def test_predict_t1_positive(self, tiny_dataset, tiny_model):
        ckpt, _, _ = tiny_model
        for k in (4, 5, 6):
            assert predict_t1(tiny_dataset[0].frames[k], ckpt) > 0.0


class TestEsnOnlyConsistency:
    def test_loss_against_training_log(self, tiny_dataset, tiny_model):
        """Shifter-only enhancement of a training pair scores near the
        logged final training losses."""
        from exposhift.esn import loss_es
        from exposhift.synthcam import eligible_indices
        from exposhift.rawproc import raw_to_rgb_reference

        ckpt, esn_log, _ = tiny_model
        group = tiny_dataset[1]
        fi = eligible_indices(group)[-1]
        rgb = enhance_with_t1(group.frames[fi], ckpt, group.gt_time)
        target = raw_to_rgb_reference(group.frames[group.gt_index])
        value = loss_es(rgb, target, 0.15, esn_log.ssim_levels).item()
        losses = np.asarray(esn_log.final_step_losses)
        assert value <= losses.mean() + 3.0 * losses.std()


class TestCli:
    @pytest.mark.parametrize(
        "command",
        ["gen-data", "fit-stats", "train-esn", "train-bpn", "enhance",
         "enhance-seq", "eval-metrics", "grad-check", "ablate-direct-bpn"],
    )
    def test_help_exits_cleanly(self, command, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main([command, "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "--" in out  # flags are documented

    def test_enhance_roundtrip(self, tiny_dataset, tiny_model, tmp_path):
        ckpt, _, _ = tiny_model
        save_checkpoint(ckpt, tmp_path / "m.esbp")
        frame = tiny_dataset[0].frames[5]
        (tmp_path / "frame.cidraw").write_bytes(write_cidraw(frame))
        rc = cli.main([
            "enhance", str(tmp_path / "frame.cidraw"),
            "--checkpoint", str(tmp_path / "m.esbp"),
            "--out", str(tmp_path / "out.ppm"),
        ])
        assert rc == 0
        blob = (tmp_path / "out.ppm").read_bytes()
        assert blob.startswith(b"P6\n96 96\n255\n")

    def test_config_file_parsing(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("alpha=0.3\nesn_epochs=7\nbpn_conv_channels=8,8\n# comment\n")
        args = type("A", (), {"config": str(cfg_file), "seed": 9, "paper_scale": False})
        cfg = cli._train_config(args)
        assert cfg.alpha == 0.3
        assert cfg.esn_epochs == 7
        assert cfg.bpn_conv_channels == (8, 8)
        assert (cfg.data_seed, cfg.init_seed, cfg.train_seed) == (9, 10, 11)

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("not_a_field=3\n")
        args = type("A", (), {"config": str(cfg_file), "seed": None, "paper_scale": False})
        with pytest.raises(SystemExit, match="unknown key"):
            cli._train_config(args)
