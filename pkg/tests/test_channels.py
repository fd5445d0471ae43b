import math

import numpy as np
import pytest

from precoderlab import channels
from precoderlab.channels import SizeDistribution, SVConfig


def rng(seed=0):
    return channels.sample_rng(seed, 0)


class TestRayleigh:
    def test_shape(self):
        assert channels.rayleigh_sample(3, 4, rng()).shape == (4, 3)

    def test_deterministic(self):
        a = channels.rayleigh_sample(3, 4, rng(5))
        b = channels.rayleigh_sample(3, 4, rng(5))
        np.testing.assert_array_equal(a, b)

    def test_unit_variance(self):
        h = channels.rayleigh_sample(100, 1000, rng(1))
        power = np.mean(np.abs(h) ** 2)
        assert 0.98 <= power <= 1.02
        assert np.var(h.real) == pytest.approx(0.5, rel=0.02)
        assert np.var(h.imag) == pytest.approx(0.5, rel=0.02)


class TestArrayResponse:
    def test_broadside(self):
        np.testing.assert_allclose(channels.array_response(0.0, 4), np.ones(4))

    def test_single_element(self):
        np.testing.assert_allclose(channels.array_response(1.3, 1), [1.0])

    def test_endfire(self):
        np.testing.assert_allclose(channels.array_response(np.pi / 2, 2), [1, -1], atol=1e-15)


class TestSV:
    def test_single_path_constant_modulus(self):
        cfg = SVConfig(1, 1)
        h = channels.sv_sample(3, 8, cfg, rng(2))
        mags = np.abs(h)
        np.testing.assert_allclose(mags, mags[:1, :].repeat(8, 0), atol=1e-12)

    def test_mean_power_equals_n(self):
        r = rng(3)
        n = 8
        total = sum(np.sum(np.abs(channels.sv_sample(1, n, SVConfig(), r)) ** 2) for _ in range(10_000))
        assert 7.6 <= total / 10_000 <= 8.4

    def test_deterministic(self):
        a = channels.sv_sample(2, 6, SVConfig(), rng(9))
        b = channels.sv_sample(2, 6, SVConfig(), rng(9))
        np.testing.assert_array_equal(a, b)


class TestSampleSize:
    def test_fixed(self):
        assert channels.sample_size(SizeDistribution.fixed(6), rng()) == 6

    def test_clamped_range(self):
        d = SizeDistribution.exp(2.0, 8)
        r = rng(4)
        draws = [channels.sample_size(d, r) for _ in range(5000)]
        assert min(draws) >= 1 and max(draws) <= 8

    def test_mean(self):
        # Oracle: exact expectation of clamp(floor(X + 1/2), 1, 8), X ~ Exp(mean 2).
        lam = 1 / 2.0
        cdf = lambda x: 1 - math.exp(-lam * x)  # noqa: E731
        expect = 1 * cdf(1.5)  # values 0 and 1 map to 1
        for v in range(2, 8):
            expect += v * (cdf(v + 0.5) - cdf(v - 0.5))
        expect += 8 * (1 - cdf(7.5))
        assert 1.8 <= expect <= 2.6
        d = SizeDistribution.exp(2.0, 8)
        r = rng(5)
        draws = np.array([channels.sample_size(d, r) for _ in range(100_000)])
        assert 1.8 <= draws.mean() <= 2.6
        assert draws.mean() == pytest.approx(expect, abs=0.02)

    def test_parse(self):
        assert SizeDistribution.parse("6") == SizeDistribution.fixed(6)
        assert SizeDistribution.parse("exp:mean=2,max=8") == SizeDistribution.exp(2, 8)
        with pytest.raises(ValueError):
            SizeDistribution.parse("exp:mean=2")

    def test_invalid(self):
        with pytest.raises(ValueError):
            SizeDistribution.exp(0.0, 8)
        with pytest.raises(ValueError):
            SizeDistribution.fixed(0)


class TestDataset:
    def test_fixed_sizes(self, tmp_path):
        path = tmp_path / "d.bin"
        b = channels.gen_dataset("rayleigh", SizeDistribution.fixed(4), SizeDistribution.fixed(8), 10, 1, path)
        assert len(b) == 10
        assert all(h.shape == (8, 4) for h in b.samples)

    def test_roundtrip_bit_identical(self, tmp_path):
        path = tmp_path / "d.bin"
        b = channels.gen_dataset("sv", SizeDistribution.fixed(3), SizeDistribution.fixed(5), 7, 11, path)
        back = channels.read_dataset(path)
        assert back.model == "sv" and back.seed == 11
        for a, c in zip(b.samples, back.samples):
            assert a.tobytes() == c.tobytes()

    def test_variable_k(self, tmp_path):
        path = tmp_path / "d.bin"
        channels.gen_dataset(
            "rayleigh", SizeDistribution.exp(2, 8), SizeDistribution.fixed(12), 100, 7, path
        )
        back = channels.read_dataset(path)
        ks = [k for k, n in back.sizes]
        assert back.variable_size
        assert max(ks) <= 8 and min(ks) >= 1
        assert all(n == 12 for _, n in back.sizes)

    def test_header_magic(self, tmp_path):
        path = tmp_path / "d.bin"
        channels.gen_dataset("rayleigh", SizeDistribution.fixed(1), SizeDistribution.fixed(1), 1, 0, path)
        assert path.read_bytes()[:12] == b"PRECODERLAB1"

    def test_order_independent_streams(self):
        a = channels.generate("rayleigh", SizeDistribution.fixed(2), SizeDistribution.fixed(3), 5, 3)
        b = channels.generate("rayleigh", SizeDistribution.fixed(2), SizeDistribution.fixed(3), 9, 3)
        for x, y in zip(a.samples, b.samples):
            np.testing.assert_array_equal(x, y)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"nope")
        with pytest.raises(ValueError):
            channels.read_dataset(path)

    def test_unknown_model(self):
        with pytest.raises(ValueError):
            channels.generate("ricean", SizeDistribution.fixed(1), SizeDistribution.fixed(1), 1, 0)
