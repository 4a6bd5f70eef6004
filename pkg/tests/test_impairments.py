"""Tests for the front-end impairment model and parameter sampling."""

import math

import numpy as np
import pytest

from impairlab.impairments import (ImpairmentParams, ImpairmentRanges, PARAM_NAMES,
                                   apply_all, apply_gain_quadrature, apply_iq_offset,
                                   apply_phase_noise, sample_params)
from impairlab.sigproc import SampleBuffer


def buf(values):
    return SampleBuffer(np.asarray(values, dtype=np.complex128))


def rand_buf(n=64, seed=0):
    rng = np.random.default_rng(seed)
    return buf(rng.standard_normal(n) + 1j * rng.standard_normal(n))


# Reference composition used as an independent oracle: the three distortion
# formulas written out directly on scalar I/Q pairs.
def oracle_apply_all(z, ig, qg, psi, phi, io, qo):
    re = ig * z.real + qg * math.sin(psi) * z.imag
    im = qg * math.cos(psi) * z.imag
    rotated = complex(re, im) * complex(math.cos(phi), math.sin(phi))
    return rotated + complex(io, qo)


class TestGainQuadrature:
    def test_identity(self):
        x = rand_buf()
        y = apply_gain_quadrature(x, 1.0, 1.0, 0.0)
        assert np.allclose(y.samples, x.samples, atol=0)

    def test_single_point_direct_evaluation(self):
        y = apply_gain_quadrature(buf([1 + 1j]), 1.3, 0.8, 0.9)
        expected_re = 1.3 + 0.8 * math.sin(0.9)
        expected_im = 0.8 * math.cos(0.9)
        assert y.samples[0].real == pytest.approx(expected_re, abs=1e-12)
        assert y.samples[0].imag == pytest.approx(expected_im, abs=1e-12)

    def test_quarter_tilt_collapses_q_rail(self):
        x = rand_buf(seed=3)
        y = apply_gain_quadrature(x, 1.0, 1.0, math.pi / 2)
        assert np.allclose(y.samples.imag, 0.0, atol=1e-12)

    def test_zero_tilt_scales_rails_independently(self):
        x = rand_buf(seed=4)
        y = apply_gain_quadrature(x, 1.2, 0.4, 0.0)
        assert np.allclose(y.samples.real, 1.2 * x.samples.real, atol=0)
        assert np.allclose(y.samples.imag, 0.4 * x.samples.imag, atol=0)

    def test_linear_in_signal(self):
        x = rand_buf(seed=5)
        y1 = apply_gain_quadrature(x, 1.3, 0.8, 0.9)
        y2 = apply_gain_quadrature(x.with_samples(2.5 * x.samples), 1.3, 0.8, 0.9)
        assert np.allclose(y2.samples, 2.5 * y1.samples, atol=1e-12)


class TestPhaseNoise:
    def test_identity(self):
        x = rand_buf()
        assert np.allclose(apply_phase_noise(x, 0.0).samples, x.samples, atol=0)

    def test_quarter_rotation(self):
        y = apply_phase_noise(buf([1 + 0j]), math.pi / 2)
        assert y.samples[0].real == pytest.approx(0.0, abs=1e-15)
        assert y.samples[0].imag == pytest.approx(1.0, abs=1e-15)

    def test_third_rotation(self):
        y = apply_phase_noise(buf([1 + 0j]), math.pi / 3)
        assert y.samples[0].real == pytest.approx(0.5, abs=1e-12)
        assert y.samples[0].imag == pytest.approx(0.86603, abs=1e-5)

    def test_preserves_magnitudes(self):
        x = rand_buf(seed=6)
        y = apply_phase_noise(x, 1.234)
        assert np.allclose(np.abs(y.samples), np.abs(x.samples), atol=1e-12)


class TestIqOffset:
    def test_identity(self):
        x = rand_buf()
        assert np.allclose(apply_iq_offset(x, 0.0, 0.0).samples, x.samples, atol=0)

    def test_on_zero_signal(self):
        y = apply_iq_offset(buf([0j]), 0.21, -0.15)
        assert y.samples[0] == pytest.approx(0.21 - 0.15j, abs=1e-15)

    def test_shifts_mean_exactly(self):
        x = rand_buf(seed=7)
        y = apply_iq_offset(x, 0.21, -0.15)
        assert (y.samples.mean() - x.samples.mean()) == pytest.approx(0.21 - 0.15j, abs=1e-12)

    def test_affine_not_linear(self):
        x = rand_buf(seed=8)
        a = 2.0
        fax = apply_iq_offset(x.with_samples(a * x.samples), 0.21, -0.15).samples
        afx = a * apply_iq_offset(x, 0.21, -0.15).samples
        assert np.allclose(fax, afx - (a - 1) * (0.21 - 0.15j), atol=1e-12)


class TestApplyAll:
    def test_identity_params(self):
        x = rand_buf()
        y = apply_all(x, ImpairmentParams.identity())
        assert np.allclose(y.samples, x.samples, atol=0)

    def test_constellation_matches_oracle(self):
        points = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2)
        params = ImpairmentParams(1.3, 0.8, 0.9, math.pi / 3, 0.21, -0.15)
        y = apply_all(buf(points), params)
        for got, z in zip(y.samples, points):
            want = oracle_apply_all(z, 1.3, 0.8, 0.9, math.pi / 3, 0.21, -0.15)
            assert abs(got - want) < 1e-12

    def test_phase_only_degenerates(self):
        x = rand_buf(seed=9)
        p = ImpairmentParams(1.0, 1.0, 0.0, 0.7, 0.0, 0.0)
        assert np.allclose(apply_all(x, p).samples,
                           apply_phase_noise(x, 0.7).samples, atol=0)

    def test_out_of_range_rejected(self):
        x = rand_buf()
        with pytest.raises(ValueError, match="i_gain"):
            apply_all(x, ImpairmentParams(2.0, 1.0, 0.0, 0.0, 0.0, 0.0))
        with pytest.raises(ValueError, match="phase_rad"):
            apply_all(x, ImpairmentParams(1.0, 1.0, 0.0, 3.0, 0.0, 0.0))

    def test_matrix_plus_offset_form(self):
        # multiplicative part is a real 2x2 mixing rotated by the phase;
        # the offset is purely additive
        x = rand_buf(seed=10)
        ig, qg, psi, phi, io, qo = 1.1, 0.6, -0.4, 0.5, 0.3, -0.2
        p = ImpairmentParams(ig, qg, psi, phi, io, qo)
        got = apply_all(x, p).samples
        m = np.array([[ig, qg * math.sin(psi)], [0.0, qg * math.cos(psi)]])
        vec = np.stack([x.samples.real, x.samples.imag])
        mixed = m @ vec
        want = (mixed[0] + 1j * mixed[1]) * np.exp(1j * phi) + (io + 1j * qo)
        assert np.allclose(got, want, atol=1e-12)


class TestSampleParams:
    def test_degenerate_ranges_exact(self):
        r = ImpairmentRanges(i_gain=(1.0, 1.0), q_gain=(1.0, 1.0),
                             quad_offset_rad=(0.0, 0.0), phase_rad=(0.5, 0.5),
                             i_offset=(0.0, 0.0), q_offset=(0.0, 0.0))
        p = sample_params(r, 123)
        assert p == ImpairmentParams(1.0, 1.0, 0.0, 0.5, 0.0, 0.0)

    def test_deterministic(self):
        r = ImpairmentRanges()
        assert sample_params(r, 42) == sample_params(r, 42)
        assert sample_params(r, 42) != sample_params(r, 43)

    def test_phase_moments_over_many_draws(self):
        r = ImpairmentRanges()
        draws = np.array([sample_params(r, s).phase_rad for s in range(100_000)])
        mean = math.pi / 4
        var = (math.pi / 2) ** 2 / 12
        # 3 sigma of the sample mean around the true mean
        assert abs(draws.mean() - mean) < 3 * math.sqrt(var / draws.size)
        assert abs(draws.var() - var) < 0.05 * var

    def test_all_params_within_ranges(self):
        r = ImpairmentRanges()
        for s in range(500):
            assert r.contains(sample_params(r, s))

    def test_vector_round_trip(self):
        p = sample_params(ImpairmentRanges(), 5)
        assert ImpairmentParams.from_vector(p.as_vector()) == p
        assert [getattr(p, n) for n in PARAM_NAMES] == list(p.as_vector())
