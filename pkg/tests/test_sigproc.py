"""Tests for sequence generation, modulation, pulse shaping and framing."""

import numpy as np
import pytest

from impairlab.sigproc import (FrameConfig, SampleBuffer, build_frame,
                               generate_m_sequence, preamble_symbols,
                               qpsk_demodulate, qpsk_modulate, rrc_taps,
                               upsample_filter)


def periodic_autocorr(chips):
    n = chips.size
    return np.array([np.dot(chips, np.roll(chips, k)) for k in range(n)])


def brute_force_lfsr(degree, taps, seed):
    """Independent oracle: same register stepped with explicit bit lists."""
    state = list(seed)
    out = []
    for _ in range(2 ** degree - 1):
        out.append(state[-1])
        fb = 0
        for t in taps:
            fb ^= state[t - 1]
        state = [fb] + state[:-1]
    return np.array(out)


class TestMSequence:
    def test_degree9_length_and_values(self):
        m = generate_m_sequence(9)
        assert m.size == 511
        assert set(np.unique(m)) == {-1.0, 1.0}

    def test_degree9_autocorrelation_two_valued(self):
        m = generate_m_sequence(9)
        ac = periodic_autocorr(m)
        assert ac[0] == 511.0
        assert np.all(ac[1:] == -1.0)

    def test_degree3_matches_brute_force_enumeration(self):
        taps = (3, 1)
        seed = [1, 1, 1]
        m = generate_m_sequence(3, taps=taps, seed_state=seed)
        bits = brute_force_lfsr(3, taps, seed)
        assert np.array_equal(m, 1.0 - 2.0 * bits)
        ac = periodic_autocorr(m)
        assert ac[0] == 7.0 and np.all(ac[1:] == -1.0)

    @pytest.mark.parametrize("degree", range(3, 10))
    def test_balance_property(self, degree):
        m = generate_m_sequence(degree)
        assert m.sum() == -1.0
        ac = periodic_autocorr(m)
        assert ac[0] == 2 ** degree - 1 and np.all(ac[1:] == -1.0)

    def test_zero_seed_rejected(self):
        with pytest.raises(ValueError, match="non-zero"):
            generate_m_sequence(4, seed_state=[0, 0, 0, 0])

    def test_non_primitive_taps_rejected(self):
        # x^4 + x^2 + 1 = (x^2 + x + 1)^2 has period 6, not 15
        with pytest.raises(ValueError, match="not primitive"):
            generate_m_sequence(4, taps=(4, 2))

    def test_bad_degree_rejected(self):
        with pytest.raises(ValueError):
            generate_m_sequence(0)
        with pytest.raises(ValueError):
            generate_m_sequence(17)


class TestQpsk:
    def test_known_points(self):
        sym = qpsk_modulate([0, 0, 1, 1])
        assert sym[0] == pytest.approx((1 + 1j) / np.sqrt(2), abs=1e-15)
        assert sym[1] == pytest.approx((-1 - 1j) / np.sqrt(2), abs=1e-15)

    def test_unit_mean_power(self):
        rng = np.random.default_rng(0)
        bits = rng.integers(0, 2, 128)
        sym = qpsk_modulate(bits)
        assert sym.size == 64
        assert np.mean(np.abs(sym) ** 2) == pytest.approx(1.0, abs=1e-12)

    def test_odd_bit_count_rejected(self):
        with pytest.raises(ValueError, match="even"):
            qpsk_modulate([0, 1, 0])

    def test_demod_known_points(self):
        assert np.array_equal(qpsk_demodulate([0.70711 + 0.70711j]), [0, 0])
        assert np.array_equal(qpsk_demodulate([-0.2 + 0.9j]), [1, 0])

    def test_round_trip_all_symbols(self):
        bits = np.array([0, 0, 0, 1, 1, 0, 1, 1])
        assert np.array_equal(qpsk_demodulate(qpsk_modulate(bits)), bits)

    def test_ties_resolve_to_zero(self):
        assert np.array_equal(qpsk_demodulate([0.0 + 0.0j]), [0, 0])


class TestRrcTaps:
    def test_center_tap_closed_form(self):
        beta = 0.3
        h = rrc_taps(beta, 4, 10, normalized=False)
        assert h[h.size // 2] == pytest.approx(1 - beta + 4 * beta / np.pi, abs=1e-12)

    def test_symmetry(self):
        h = rrc_taps(0.3, 4, 10)
        assert np.allclose(h, h[::-1], atol=0)

    def test_unit_energy(self):
        h = rrc_taps(0.3, 4, 10)
        assert np.sum(h * h) == pytest.approx(1.0, abs=1e-12)

    def test_singular_point_handled(self):
        # with rolloff 0.25 and 4 samples/symbol, |t| = 1/(4*beta) = 1 symbol
        # falls exactly on a sample
        h = rrc_taps(0.25, 4, 10)
        assert np.isfinite(h).all()
        beta = 0.25
        expected = (beta / np.sqrt(2)) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
            + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
        )
        unnorm = rrc_taps(beta, 4, 10, normalized=False)
        mid = unnorm.size // 2
        assert unnorm[mid + 4] == pytest.approx(expected, abs=1e-12)

    def test_zero_rolloff_rejected(self):
        with pytest.raises(ValueError):
            rrc_taps(0.0, 4, 10)

    def test_odd_span_rejected(self):
        with pytest.raises(ValueError):
            rrc_taps(0.3, 4, 9)

    def test_nyquist_cascade_isi(self):
        # shaping + matched filter sampled at symbol instants is close to a
        # unit pulse; neighbor ISI below 1e-3 of the peak at span 10
        cfg = FrameConfig()
        h = rrc_taps(cfg.rrc_rolloff, cfg.oversample, cfg.rrc_span_symbols)
        cascade = np.convolve(h, h)
        center = cascade.size // 2
        peak = cascade[center]
        assert peak == pytest.approx(1.0, abs=1e-6)
        neighbors = cascade[center % cfg.oversample:: cfg.oversample]
        neighbors = neighbors[np.abs(neighbors - peak) > 1e-9]
        assert np.max(np.abs(neighbors)) < 1e-3 * peak


class TestUpsampleFilter:
    def test_impulse_reproduces_taps(self):
        cfg = FrameConfig()
        out = upsample_filter(np.array([1.0 + 0j]), cfg)
        h = rrc_taps(cfg.rrc_rolloff, cfg.oversample, cfg.rrc_span_symbols)
        assert np.allclose(out.samples[: h.size], h, atol=1e-15)
        assert np.allclose(out.samples[h.size:], 0.0, atol=0)

    def test_output_length(self):
        cfg = FrameConfig()
        out = upsample_filter(np.ones(17, dtype=complex), cfg)
        assert len(out) == 17 * cfg.oversample + cfg.rrc_span_symbols * cfg.oversample

    def test_deterministic(self):
        cfg = FrameConfig()
        sym = qpsk_modulate(np.arange(40) % 2)
        a = upsample_filter(sym, cfg)
        b = upsample_filter(sym, cfg)
        assert np.array_equal(a.samples, b.samples)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            upsample_filter(np.array([], dtype=complex), FrameConfig())


class TestFrameConfig:
    def test_default_lengths(self):
        cfg = FrameConfig()
        assert cfg.cp_len == 16
        assert cfg.mseq_len == 511
        assert cfg.frame_symbol_count == 2067
        assert cfg.nn_input_len() == 8176

    def test_bad_cp_ratio_rejected(self):
        with pytest.raises(ValueError, match="integer"):
            FrameConfig(block_len=10, cp_ratio=0.15)

    def test_short_guard_rejected(self):
        with pytest.raises(ValueError, match="guard"):
            FrameConfig(guard_len=4)


class TestBuildFrame:
    def setup_method(self):
        self.cfg = FrameConfig()
        rng = np.random.default_rng(7)
        self.bits = rng.integers(0, 2, self.cfg.payload_bit_count)

    def test_symbol_and_sample_counts(self):
        frame, buf = build_frame(self.bits, self.cfg)
        assert frame.symbol_count == 2067
        assert len(buf) == 2067 * 4 + 40

    def test_cp_matches_block_tail(self):
        frame, _ = build_frame(self.bits, self.cfg)
        for block in frame.payload_blocks:
            cp = block[: self.cfg.cp_len]
            data = block[self.cfg.cp_len:]
            assert np.array_equal(cp, data[-self.cfg.cp_len:])

    def test_deterministic(self):
        _, a = build_frame(self.bits, self.cfg, seed=1)
        _, b = build_frame(self.bits, self.cfg, seed=1)
        assert np.array_equal(a.samples, b.samples)

    def test_wrong_payload_length_rejected(self):
        with pytest.raises(ValueError, match="1280 bits"):
            build_frame(np.zeros(100, dtype=int), self.cfg)

    def test_preamble_unit_power_and_repetition(self):
        pre = preamble_symbols(self.cfg)
        assert pre.size == self.cfg.preamble_len
        assert np.allclose(np.abs(pre) ** 2, 1.0, atol=1e-12)
        assert np.array_equal(pre[: self.cfg.mseq_len], pre[self.cfg.mseq_len:])


class TestSampleBuffer:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="finite"):
            SampleBuffer(np.array([1.0 + 0j, np.nan + 0j]))

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError, match="positive"):
            SampleBuffer(np.ones(3, dtype=complex), sample_rate_hz=0.0)
