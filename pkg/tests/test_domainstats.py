"""Style transfer, warm-up ramp, MMD, and VAE statistics."""

import math

import numpy as np
import pytest

from fewdet.core import ValidationError
from fewdet.domainstats import (
    ChannelStats,
    MMDConfig,
    VaeLosses,
    combined_objective,
    mmd,
    reparameterize,
    style_gap,
    style_transfer,
    vae_losses,
    warmup_alpha,
)

from oracles import oracle_mmd, oracle_reparameterize, oracle_vae


class TestStyleTransfer:
    def test_identity_stats_is_exact_identity(self, rng):
        x = rng.normal(size=(5, 6, 3))
        stats = ChannelStats.from_array(x)
        assert np.array_equal(style_transfer(x, stats, stats), x)

    def test_hand_affine(self):
        x = np.array([[1.0]])
        src = ChannelStats(np.array([0.0]), np.array([1.0]))
        tgt = ChannelStats(np.array([5.0]), np.array([2.0]))
        assert style_transfer(x, src, tgt)[0, 0] == pytest.approx(7.0, abs=0)

    def test_output_stats_reproduce_target(self, rng):
        x = rng.normal(loc=3.0, scale=2.0, size=(200, 4))
        src = ChannelStats.from_array(x)
        tgt = ChannelStats(rng.normal(size=4), rng.uniform(0.5, 2.0, size=4))
        out = style_transfer(x, src, tgt)
        restyled = ChannelStats.from_array(out)
        assert np.allclose(restyled.mu, tgt.mu, atol=1e-9)
        assert np.allclose(restyled.sigma, tgt.sigma, atol=1e-9)

    def test_zero_variance_guard_warns(self):
        x = np.array([[2.0], [2.0]])
        src = ChannelStats.from_array(x)
        tgt = ChannelStats(np.array([1.0]), np.array([1.0]))
        with pytest.warns(UserWarning, match="zero-variance"):
            out = style_transfer(x, src, tgt)
        assert np.all(np.isfinite(out))

    def test_channel_mismatch(self):
        with pytest.raises(ValidationError, match="channel"):
            style_transfer(np.ones((2, 3)),
                           ChannelStats(np.zeros(2), np.ones(2)),
                           ChannelStats(np.zeros(3), np.ones(3)))

    def test_style_gap_zero_at_target(self, rng):
        x = rng.normal(size=(50, 3))
        src = ChannelStats.from_array(x)
        tgt = ChannelStats(rng.normal(size=3), rng.uniform(0.5, 2.0, size=3))
        assert style_gap(x, src, tgt) == pytest.approx(0.0, abs=1e-15)


class TestWarmupAlpha:
    @pytest.mark.parametrize("t,expected", [(0, 0.0), (250, 0.5), (500, 1.0),
                                            (10**6, 1.0)])
    def test_fixture(self, t, expected):
        assert warmup_alpha(t, 500) == expected

    def test_non_decreasing_and_bounded(self):
        values = [warmup_alpha(t, 500) for t in range(0, 1200, 37)]
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert all(0.0 <= v <= 1.0 for v in values)

    def test_validation(self):
        with pytest.raises(ValidationError):
            warmup_alpha(-1, 500)
        with pytest.raises(ValidationError):
            warmup_alpha(5, 0)


class TestMmd:
    def test_identical_multisets_vanish(self, rng):
        x = rng.normal(size=(6, 3))
        assert abs(mmd(x, x)) <= 1e-12
        shuffled = x[rng.permutation(6)]
        assert abs(mmd(x, shuffled)) <= 1e-12

    def test_singleton_hand_value(self):
        x = np.array([[0.0]])
        y = np.array([[1.0]])
        expected = 2.0 - 2.0 * math.exp(-0.5)
        assert mmd(x, y, MMDConfig((1.0,))) == pytest.approx(expected, abs=1e-12)

    def test_symmetry(self, rng):
        for _ in range(50):
            x = rng.normal(size=(int(rng.integers(1, 7)), 3))
            y = rng.normal(size=(int(rng.integers(1, 7)), 3))
            assert mmd(x, y) == pytest.approx(mmd(y, x), abs=1e-12)

    def test_non_negative(self, rng):
        for _ in range(100):
            x = rng.normal(size=(int(rng.integers(1, 7)), 2))
            y = rng.normal(size=(int(rng.integers(1, 7)), 2))
            assert mmd(x, y) >= -1e-12

    def test_triple_loop_oracle(self, rng):
        for _ in range(100):
            x = rng.normal(size=(5, 3))
            y = rng.normal(size=(4, 3))
            bandwidths = (0.5, 1.0, 2.0, 5.0)
            assert mmd(x, y, MMDConfig(bandwidths)) == pytest.approx(
                oracle_mmd(x, y, bandwidths), abs=1e-9)

    def test_default_bandwidths(self):
        assert MMDConfig().bandwidths == (0.5, 1.0, 2.0, 5.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError, match="dimension"):
            mmd(np.ones((2, 2)), np.ones((2, 3)))

    def test_bandwidth_validation(self):
        with pytest.raises(ValidationError):
            MMDConfig(())
        with pytest.raises(ValidationError):
            MMDConfig((0.0,))


class TestVaeLosses:
    def test_perfect_reconstruction_and_prior(self):
        x = np.ones((3, 2))
        out = vae_losses(x, x, np.zeros((3, 2)), np.zeros((3, 2)))
        assert out == VaeLosses(0.0, 0.0, 0.0)

    def test_kl_hand_value(self):
        x = np.ones((1, 1))
        out = vae_losses(x, x, np.array([[1.0]]), np.array([[0.0]]))
        assert out.kl == pytest.approx(0.5, abs=0)
        assert out.total == pytest.approx(0.5, abs=0)

    def test_loop_oracle(self, rng):
        for _ in range(100):
            n, d, z = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
            x = rng.normal(size=(n, d))
            x_hat = rng.normal(size=(n, d))
            mu = rng.normal(size=(n, z))
            log_var = rng.uniform(-2, 2, size=(n, z))
            ours = vae_losses(x, x_hat, mu, log_var)
            ref = oracle_vae(x, x_hat, mu, log_var)
            assert ours.reconstruction == pytest.approx(ref[0], abs=1e-9)
            assert ours.kl == pytest.approx(ref[1], abs=1e-9)
            assert ours.total == pytest.approx(ref[2], abs=1e-9)

    def test_kl_non_negative(self, rng):
        for _ in range(1000):
            mu = rng.normal(size=(2, 3))
            log_var = rng.uniform(-4, 4, size=(2, 3))
            x = rng.normal(size=(2, 2))
            out = vae_losses(x, x, mu, log_var)
            assert out.kl >= 0.0
            assert out.reconstruction >= 0.0
            assert out.total == pytest.approx(out.reconstruction + out.kl, abs=0)

    def test_shape_validation(self):
        with pytest.raises(ValidationError):
            vae_losses(np.ones((2, 2)), np.ones((3, 2)), np.ones((2, 1)), np.ones((2, 1)))


class TestReparameterize:
    def test_zero_noise_returns_mu(self, rng):
        mu = rng.normal(size=(2, 3))
        assert np.array_equal(reparameterize(mu, np.zeros((2, 3)), np.zeros((2, 3))), mu)

    def test_unit_sigma(self, rng):
        mu = rng.normal(size=(2, 2))
        out = reparameterize(mu, np.zeros((2, 2)), np.ones((2, 2)))
        assert np.allclose(out, mu + 1.0, atol=0)

    def test_elementwise_oracle(self, rng):
        for _ in range(100):
            shape = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
            mu = rng.normal(size=shape)
            log_var = rng.uniform(-2, 2, size=shape)
            noise = rng.normal(size=shape)
            assert np.allclose(reparameterize(mu, log_var, noise),
                               oracle_reparameterize(mu, log_var, noise), atol=1e-9)


def test_combined_objective_defaults():
    assert combined_objective(1.0, 2.0, 3.0) == pytest.approx(1.0 + 0.16 * 2.0 + 0.12 * 3.0)
