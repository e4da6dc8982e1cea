"""Group statistics, noise estimation, entropy, guideline-time filtering."""

import numpy as np
import pytest

from exposhift.metrics import entropy, group_brightness_stats, noise_variance, t1_filter


class TestGroupStats:
    def test_identical_images_zero_cv(self):
        img = np.full((3, 4, 4), 0.3)
        stats = group_brightness_stats([img, img, img], "g")
        assert stats.cv == 0.0 and stats.mu == pytest.approx(0.3)

    def test_two_point_closed_form(self):
        imgs = [np.full((1, 2, 2), 0.2), np.full((1, 2, 2), 0.4)]
        stats = group_brightness_stats(imgs)
        assert stats.mu == pytest.approx(0.3, abs=1e-15)
        assert stats.cv == pytest.approx(0.1 / 0.3, rel=1e-12)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        imgs = [rng.uniform(size=(3, 5, 5)) for _ in range(6)]
        stats = group_brightness_stats(imgs)
        values = [img.mean() for img in imgs]
        mu = sum(values) / len(values)
        sd = np.sqrt(sum((v - mu) ** 2 for v in values) / len(values))
        assert stats.mu == pytest.approx(mu, rel=1e-12)
        assert stats.cv == pytest.approx(sd / mu, rel=1e-12)

    def test_rejects_single_image(self):
        with pytest.raises(ValueError, match="at least 2"):
            group_brightness_stats([np.zeros((1, 2, 2))])


class TestNoiseVariance:
    def test_constant_image_zero(self):
        assert noise_variance(np.full((16, 16), 0.4)) == 0.0

    def test_affine_ramp_zero(self):
        i, j = np.mgrid[0:16, 0:16]
        ramp = 0.1 + 0.02 * i + 0.03 * j
        assert noise_variance(ramp) == pytest.approx(0.0, abs=1e-12)

    def test_recovers_gaussian_sigma(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            img = 0.5 + rng.normal(0, 0.05, size=(256, 256))
            est = noise_variance(img)
            assert abs(est - 0.05) < 0.2 * 0.05, f"seed {seed}: {est}"

    def test_invariant_to_constant_and_ramp(self):
        rng = np.random.default_rng(1)
        img = rng.normal(0, 0.05, size=(64, 64))
        i, j = np.mgrid[0:64, 0:64]
        shifted = img + 0.3 + 0.01 * i - 0.005 * j
        assert noise_variance(shifted) == pytest.approx(noise_variance(img), abs=1e-12)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="3x3"):
            noise_variance(np.zeros((2, 5)))


class TestEntropy:
    def test_constant_zero(self):
        assert entropy(np.full((32, 32), 0.7)) == 0.0

    def test_uniform_8bit_noise_near_eight(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(512, 512)) / 255.0
        assert entropy(img) == pytest.approx(8.0, abs=0.05)

    def test_uniform_continuous_near_eight(self):
        rng = np.random.default_rng(1)
        assert entropy(rng.uniform(size=(512, 512))) == pytest.approx(8.0, abs=0.05)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(16, 16))
        perm = rng.permutation(img.size)
        assert entropy(img.ravel()[perm].reshape(16, 16)) == entropy(img)

    def test_rgb_reduces_to_channel_mean(self):
        rng = np.random.default_rng(3)
        rgb = rng.uniform(size=(3, 32, 32))
        assert entropy(rgb) == entropy(rgb.mean(axis=0))

    def test_range_validation(self):
        with pytest.raises(ValueError, match=r"\[0,1\]"):
            entropy(np.full((4, 4), 1.5))


class TestT1Filter:
    def test_identity(self):
        seq = [0.5, 1.0, 0.25]
        assert t1_filter(seq, "identity") == seq

    def test_beta_zero_unchanged(self):
        seq = [0.5, 1.0, 0.25]
        np.testing.assert_allclose(t1_filter(seq, "ema", 0.0), seq, rtol=1e-15)

    def test_log_domain_recurrence(self):
        out = t1_filter([1.0, 2.0], "ema", 0.5)
        assert out[0] == pytest.approx(1.0)
        assert out[1] == pytest.approx(np.exp(0.5 * np.log(1.0) + 0.5 * np.log(2.0)), rel=1e-12)
        assert out[1] == pytest.approx(1.4142, abs=1e-4)

    def test_stays_within_input_envelope(self):
        rng = np.random.default_rng(4)
        seq = list(10 ** rng.uniform(-2, 1, size=30))
        for beta in (0.2, 0.5, 0.9):
            out = t1_filter(seq, "ema", beta)
            assert min(out) >= min(seq) - 1e-12
            assert max(out) <= max(seq) + 1e-12

    def test_validation(self):
        with pytest.raises(ValueError, match="mode"):
            t1_filter([1.0], "median")
        with pytest.raises(ValueError, match="positive"):
            t1_filter([1.0, -0.5], "identity")
        with pytest.raises(ValueError, match="beta"):
            t1_filter([1.0], "ema", 1.5)
