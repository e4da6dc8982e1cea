"""Metadata vectors, normalization statistics, and constant-plane broadcast."""

import numpy as np
import pytest

from conftest import build_group
from exposhift.conditioning import (
    NormStats,
    build_iev,
    build_piev,
    denormalize_vector,
    fit_norm_stats,
    normalize_and_broadcast,
    normalize_packed,
    normalize_vector,
)
from exposhift.rawproc import ExifMeta


META = ExifMeta(iso=800.0, exposure_time=0.01, wb_gains=(2.0, 1.0, 1.5, 1.0))


class TestVectors:
    def test_iev_ordering(self):
        vec = build_iev(META, 0.1)
        np.testing.assert_allclose(vec, [2.0, 1.0, 1.5, 1.0, 800.0, 0.01, 0.1])

    def test_piev_is_prefix(self):
        np.testing.assert_array_equal(build_piev(META), build_iev(META, 0.1)[:6])

    def test_nonpositive_t1_rejected(self):
        with pytest.raises(ValueError, match="t1"):
            build_iev(META, 0.0)
        with pytest.raises(ValueError, match="t1"):
            build_iev(META, -1.0)


class TestFitStats:
    def test_two_point_channel_mean(self):
        # two eligible frames near packed levels 0.2 and 0.4 (counts quantize)
        from exposhift.rawproc import pack_bayer

        group = build_group([0.9, 0.8, 0.5, 0.2, 0.4, 0.3, 0.25, 0.22],
                            gt_index=2, invalid=(5, 6, 7))
        stats = fit_norm_stats([group])
        v3 = pack_bayer(group.frames[3])[0, 0, 0]
        v4 = pack_bayer(group.frames[4])[0, 0, 0]
        np.testing.assert_allclose(stats.channel_mean, (v3 + v4) / 2.0, atol=1e-12)
        np.testing.assert_allclose(stats.channel_mean, 0.3, atol=1e-3)

    def test_constant_iso_floors_std(self):
        group = build_group([0.9, 0.8, 0.5, 0.2, 0.4, 0.3, 0.25, 0.22], gt_index=2)
        stats = fit_norm_stats([group])
        assert stats.iev_std[4] == pytest.approx(1e-6)
        z = normalize_vector(build_iev(META, 0.1), stats)
        assert abs(z[4]) < 1e-6  # iso equals the fitted mean, normalizes to ~0

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            fit_norm_stats([])

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        groups = [
            build_group(
                rng.uniform(0.1, 0.9, size=8),
                gt_index=1,
                iso=float(rng.integers(100, 3200)),
                gains=(
                    float(np.float32(rng.uniform(1.5, 2.5))), 1.0,
                    float(np.float32(rng.uniform(1.5, 2.5))), 1.0,
                ),
                t_max=float(10 ** rng.uniform(-2, 0)),
            )
            for _ in range(4)
        ]
        stats = fit_norm_stats(groups)

        # independent two-pass computation over the same sample set
        from exposhift.rawproc import pack_bayer
        from exposhift.synthcam import eligible_indices

        vectors, channels = [], []
        for g in groups:
            for k in eligible_indices(g):
                frame = g.frames[k]
                vec = build_iev(frame.meta, g.gt_time).astype(float)
                vec[5] = np.log(vec[5])
                vec[6] = np.log(vec[6])
                vectors.append(vec)
                channels.append(pack_bayer(frame).reshape(4, -1))
        vectors = np.stack(vectors)
        channels = np.concatenate(channels, axis=1)
        np.testing.assert_allclose(stats.iev_mean, vectors.mean(axis=0), rtol=1e-10)
        np.testing.assert_allclose(
            stats.iev_std,
            np.maximum(vectors.std(axis=0), 1e-6),
            rtol=1e-8,
        )
        np.testing.assert_allclose(stats.channel_mean, channels.mean(axis=1), rtol=1e-10)
        np.testing.assert_allclose(
            stats.channel_std,
            np.maximum(channels.std(axis=1), 1e-6),
            rtol=1e-8,
        )


def simple_stats():
    return NormStats(
        channel_mean=np.array([0.1, 0.2, 0.3, 0.4]),
        channel_std=np.array([0.5, 0.5, 0.5, 0.5]),
        iev_mean=np.array([2.0, 1.0, 1.5, 1.0, 800.0, -4.0, -2.0]),
        iev_std=np.array([0.3, 1e-6, 0.2, 1e-6, 100.0, 1.0, 1.0]),
    )


class TestBroadcast:
    def test_mean_maps_to_zero_plane(self):
        stats = simple_stats()
        vec = np.array([2.0, 1.0, 1.5, 1.0, 800.0, np.exp(-4.0), np.exp(-2.0)])
        planes = normalize_and_broadcast(vec, stats, 4, 5)
        assert planes.shape == (7, 4, 5)
        np.testing.assert_allclose(planes.data, 0.0, atol=1e-9)

    def test_degenerate_extent(self):
        stats = simple_stats()
        vec = build_iev(META, 0.1)
        planes = normalize_and_broadcast(vec, stats, 1, 1)
        assert planes.shape == (7, 1, 1)
        np.testing.assert_allclose(planes.data[:, 0, 0], normalize_vector(vec, stats))

    def test_planes_are_spatially_constant(self):
        stats = simple_stats()
        planes = normalize_and_broadcast(build_iev(META, 0.1), stats, 6, 6).data
        # every entry of a plane is the same bit pattern, so the spread is 0
        for k in range(planes.shape[0]):
            assert np.ptp(planes[k]) == 0.0
        assert planes.var(axis=(1, 2)).max() < 1e-30

    def test_piev_broadcast_has_six_planes(self):
        stats = simple_stats()
        planes = normalize_and_broadcast(build_piev(META), stats, 3, 3)
        assert planes.shape == (6, 3, 3)

    def test_normalize_roundtrip(self):
        stats = simple_stats()
        vec = build_iev(META, 0.1)
        back = denormalize_vector(normalize_vector(vec, stats), stats)
        np.testing.assert_allclose(back, vec, rtol=1e-12)

    def test_normalize_packed_shape(self):
        stats = simple_stats()
        packed = np.random.default_rng(0).uniform(size=(4, 3, 3))
        z = normalize_packed(packed, stats)
        np.testing.assert_allclose(
            z.data, (packed - stats.channel_mean[:, None, None]) / 0.5, atol=1e-15
        )

    def test_dimension_mismatch_rejected(self):
        stats = simple_stats()
        with pytest.raises(ValueError, match="length"):
            normalize_vector(np.ones(5), stats)
