"""Scene synthesis, the exposure law, group assembly, and sampling."""

import numpy as np
import pytest
from scipy import stats as sstats

from conftest import build_group
from exposhift.rawproc import ExifMeta, brightness, pack_bayer, raw_to_rgb_reference
from exposhift.synthcam import (
    GroupError,
    ImageGroup,
    Scene,
    SensorModel,
    eligible_indices,
    expose,
    generate_dataset,
    load_dataset,
    make_group,
    pick_times,
    random_crop,
    read_group_dir,
    sample_pair,
    site_exposure,
    synth_scene,
    write_group_dir,
)

META = ExifMeta(iso=800.0, exposure_time=1.0, wb_gains=(2.0, 1.0, 1.5, 1.0), aperture=2.8)


def flat_scene(level=1.0, extent=32):
    return Scene(irradiance=np.full((3, extent, extent), level), seed=(0,))


class TestScene:
    def test_deterministic_per_seed(self):
        a = synth_scene(5, 64, 64)
        b = synth_scene(5, 64, 64)
        np.testing.assert_array_equal(a.irradiance, b.irradiance)
        c = synth_scene(6, 64, 64)
        assert not np.array_equal(a.irradiance, c.irradiance)

    def test_histogram_spans_three_decades(self):
        for seed in range(8):
            irr = synth_scene(seed, 64, 64).irradiance
            assert irr.max() / irr.min() >= 1e3

    def test_saturating_region_exists(self):
        model = SensorModel()
        for seed in range(4):
            scene = synth_scene(seed, 64, 64)
            rng = np.random.default_rng(seed)
            times = pick_times(scene, model, rng)
            assert scene.irradiance.max() * times[0] > model.saturation_exposure()

    def test_extent_validation(self):
        with pytest.raises(ValueError, match="extent"):
            synth_scene(0, 16, 64)
        with pytest.raises(ValueError, match="extent"):
            synth_scene(0, 33, 64)


class TestExpose:
    def test_dark_limit_hits_black_level(self):
        model = SensorModel().noiseless()
        scene = flat_scene(1e-30)
        frame = expose(scene, 1.0, model, META, noise_seed=0)
        np.testing.assert_array_equal(frame.counts, model.black_level)

    def test_monotone_in_time_noiseless(self):
        model = SensorModel().noiseless()
        scene = synth_scene(1, 32, 32)
        prev = expose(scene, 0.01, model, META, noise_seed=0)
        for t in (0.02, 0.04, 0.08, 0.16):
            cur = expose(scene, t, model, META, noise_seed=0)
            assert np.all(cur.counts.astype(int) >= prev.counts.astype(int))
            prev = cur

    def test_log_shift_identity(self):
        scene = synth_scene(2, 32, 32)
        e1 = site_exposure(scene, 0.05)
        e2 = site_exposure(scene, 0.10)
        np.testing.assert_allclose(np.log(e2) - np.log(e1), np.log(2.0), atol=1e-12)

    def test_monte_carlo_mean(self):
        model = SensorModel()
        scene = flat_scene(0.8, extent=8)
        span = model.white_level - model.black_level
        br = model.response(site_exposure(scene, 1.0))
        mean = model.black_level + br * span
        var = model.read_noise_sd**2 + model.shot_noise_gain * br * span
        n = 10_000
        acc = np.zeros((8, 8))
        for k in range(n):
            acc += expose(scene, 1.0, model, META, noise_seed=(777, k)).counts
        sample_mean = acc / n
        se = np.sqrt(var / n)
        assert np.all(np.abs(sample_mean - mean) < 3.0 * se)

    def test_nonpositive_time_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            expose(flat_scene(), 0.0, SensorModel(), META, noise_seed=0)

    def test_metadata_rounds_to_f32(self):
        frame = expose(flat_scene(), 0.0123456789, SensorModel(), META, noise_seed=0)
        assert frame.meta.exposure_time == float(np.float32(0.0123456789))


class TestMakeGroup:
    def test_gt_in_brighter_half_on_mid_scene(self):
        model = SensorModel()
        scene = synth_scene(3, 64, 64)
        times = 0.5 * (250.0 / 2.0) ** (-np.arange(8) / 7.0)  # 1/2 s .. 1/250 s
        group = make_group(scene, model, META, times, noise_seed=1)
        assert group.gt_index < 4

    def test_dark_tail_tagged_invalid(self):
        model = SensorModel()
        scene = synth_scene(4, 64, 64)
        rng = np.random.default_rng(0)
        times = pick_times(scene, model, rng, ratio=30000.0)
        group = make_group(scene, model, META, times, noise_seed=2)
        assert 7 in group.invalid
        assert group.gt_index not in group.invalid

    def test_gt_never_invalid_across_generated(self):
        for group in generate_dataset(6, extent=96, seed=5):
            assert group.gt_index not in group.invalid

    def test_rejects_when_nothing_qualifies(self):
        model = SensorModel()
        scene = flat_scene(1e-12, extent=32)
        times = 0.1 * 2.0 ** (-np.arange(8, dtype=float))
        with pytest.raises(GroupError, match="near-black|candidate"):
            make_group(scene, model, META, times, noise_seed=0)

    def test_times_must_descend(self):
        with pytest.raises(ValueError, match="descending"):
            make_group(flat_scene(), SensorModel(), META, np.ones(8), noise_seed=0)

    def test_group_determinism(self):
        a = generate_dataset(2, extent=96, seed=9)
        b = generate_dataset(2, extent=96, seed=9)
        for ga, gb in zip(a, b):
            assert ga.gt_index == gb.gt_index and ga.invalid == gb.invalid
            for fa, fb in zip(ga.frames, gb.frames):
                np.testing.assert_array_equal(fa.counts, fb.counts)


class TestSamplePair:
    def test_eligible_set_construction(self):
        group = build_group([0.9, 0.7, 0.5, 0.3, 0.2, 0.1, 0.05, 0.03],
                            gt_index=2, invalid=(7,))
        assert eligible_indices(group) == [3, 4, 5, 6]

    def test_uniformity_chi_square(self):
        group = build_group([0.9, 0.7, 0.5, 0.3, 0.2, 0.1, 0.05, 0.03],
                            gt_index=2, invalid=(7,))
        rng = np.random.default_rng(0)
        counts = {3: 0, 4: 0, 5: 0, 6: 0}
        for _ in range(10_000):
            x, y, t0, t_g = sample_pair(group, rng)
            counts[group.frames.index(x)] += 1
        _, p = sstats.chisquare(list(counts.values()))
        assert p > 0.01

    def test_t0_below_gt_time_always(self):
        group = build_group([0.9, 0.7, 0.5, 0.3, 0.2, 0.1, 0.05, 0.03], gt_index=3)
        rng = np.random.default_rng(1)
        for _ in range(200):
            _, _, t0, t_g = sample_pair(group, rng)
            assert t0 < t_g

    def test_no_eligible_frame_errors(self):
        group = build_group([0.9, 0.7, 0.5, 0.3, 0.2, 0.1, 0.05, 0.03],
                            gt_index=7, invalid=())
        with pytest.raises(GroupError, match="eligible"):
            sample_pair(group, np.random.default_rng(0))


class TestRandomCrop:
    def test_zero_offset_is_top_left(self):
        x = np.arange(4 * 8 * 8, dtype=float).reshape(4, 8, 8)
        y = np.arange(3 * 16 * 16, dtype=float).reshape(3, 16, 16)

        class FixedRng:
            def integers(self, lo, hi):
                return 0

        xc, yc = random_crop(x, y, 4, FixedRng())
        np.testing.assert_array_equal(xc, x[:, :4, :4])
        np.testing.assert_array_equal(yc, y[:, :8, :8])

    def test_alignment_index_oracle(self):
        rng = np.random.default_rng(2)
        x = np.arange(4 * 10 * 12, dtype=float).reshape(4, 10, 12)
        y = np.arange(3 * 20 * 24, dtype=float).reshape(3, 20, 24)
        for _ in range(20):
            xc, yc = random_crop(x, y, 4, rng)
            # recover the offsets from the unique corner value
            flat = int(xc[0, 0, 0])
            oy, ox = divmod(flat, 12)
            np.testing.assert_array_equal(xc, x[:, oy : oy + 4, ox : ox + 4])
            np.testing.assert_array_equal(yc, y[:, 2 * oy : 2 * oy + 8, 2 * ox : 2 * ox + 8])

    def test_size_validation(self):
        x = np.zeros((4, 8, 8))
        y = np.zeros((3, 16, 16))
        with pytest.raises(ValueError, match="even"):
            random_crop(x, y, 3, np.random.default_rng(0))
        with pytest.raises(ValueError, match="exceeds"):
            random_crop(x, y, 10, np.random.default_rng(0))
        with pytest.raises(ValueError, match="twice"):
            random_crop(x, np.zeros((3, 8, 8)), 4, np.random.default_rng(0))


class TestDatasetIo:
    def test_directory_roundtrip(self, tmp_path):
        groups = generate_dataset(2, extent=96, seed=7)
        write_group_dir(groups[0], tmp_path / "group_0000")
        back = read_group_dir(tmp_path / "group_0000")
        assert back.gt_index == groups[0].gt_index
        assert back.invalid == groups[0].invalid
        for fa, fb in zip(groups[0].frames, back.frames):
            np.testing.assert_array_equal(fa.counts, fb.counts)
            assert fa.meta == fb.meta

    def test_load_dataset_ordering(self, tmp_path):
        generate_dataset(3, extent=96, seed=8, out_dir=tmp_path)
        groups = load_dataset(tmp_path)
        assert len(groups) == 3

    def test_manifest_contents(self, tmp_path):
        group = build_group([0.9, 0.7, 0.5, 0.3, 0.2, 0.1, 0.05, 0.03],
                            gt_index=2, invalid=(6, 7))
        write_group_dir(group, tmp_path / "group_0000")
        text = (tmp_path / "group_0000" / "manifest.txt").read_text()
        assert "gt_index=2" in text and "invalid=6,7" in text
        assert sorted(p.name for p in (tmp_path / "group_0000").glob("*.cidraw")) == [
            f"frame_{k}.cidraw" for k in range(8)
        ]


class TestGroupInvariants:
    def test_exactly_eight_frames(self):
        frames = build_group([0.9] * 8).frames[:7]
        with pytest.raises(ValueError, match="8 frames"):
            ImageGroup(frames=frames, gt_index=0, invalid=frozenset())

    def test_gt_not_invalid(self):
        group = build_group([0.9, 0.7, 0.5, 0.3, 0.2, 0.1, 0.05, 0.03])
        with pytest.raises(ValueError, match="invalid"):
            ImageGroup(frames=group.frames, gt_index=2, invalid=frozenset({2}))
