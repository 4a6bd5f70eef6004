"""Deterministic baseband DSP: maximal-length sequences, QPSK mapping,
root-raised-cosine pulse shaping, and frame assembly.

Complex baseband samples are plain ``numpy`` complex128 arrays wrapped in
:class:`SampleBuffer` together with the sample rate. All functions here are
pure; identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

# Feedback stage positions of a primitive polynomial per register length.
# Any choice that passes the maximal-period check is acceptable; these are
# the conventional ones.
_PRIMITIVE_TAPS = {
    1: (1,),
    2: (2, 1),
    3: (3, 1),
    4: (4, 1),
    5: (5, 2),
    6: (6, 1),
    7: (7, 1),
    8: (8, 4, 3, 2),
    9: (9, 5),
    10: (10, 3),
    11: (11, 2),
    12: (12, 6, 4, 1),
    13: (13, 4, 3, 1),
    14: (14, 10, 6, 1),
    15: (15, 1),
    16: (16, 12, 3, 1),
}


@dataclass(frozen=True)
class FrameConfig:
    """Waveform constants; the single source of truth for all frame lengths."""

    n_blocks: int = 10
    block_len: int = 64
    cp_ratio: float = 0.25
    oversample: int = 4
    sample_rate_hz: float = 4e6
    mseq_degree: int = 9
    preamble_reps: int = 2
    guard_len: int = 245
    rrc_rolloff: float = 0.3
    rrc_span_symbols: int = 10

    def __post_init__(self):
        if min(self.n_blocks, self.block_len, self.oversample, self.preamble_reps) < 1:
            raise ValueError("n_blocks, block_len, oversample, preamble_reps must be >= 1")
        if not 1 <= self.mseq_degree <= 16:
            raise ValueError(f"mseq_degree must be in 1..16, got {self.mseq_degree}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        cp = self.block_len * self.cp_ratio
        if abs(cp - round(cp)) > 1e-9:
            raise ValueError(f"block_len * cp_ratio = {cp} is not an integer")
        if not 0 < self.rrc_rolloff <= 1:
            raise ValueError("rrc_rolloff must be in (0, 1]")
        if self.rrc_span_symbols % 2 != 0 or self.rrc_span_symbols < 2:
            raise ValueError("rrc_span_symbols must be a positive even integer")
        if self.guard_len < self.rrc_span_symbols:
            raise ValueError("guard_len must cover the pulse-shaping filter span")

    @property
    def cp_len(self) -> int:
        return round(self.block_len * self.cp_ratio)

    @property
    def mseq_len(self) -> int:
        return 2 ** self.mseq_degree - 1

    @property
    def preamble_len(self) -> int:
        """Preamble length in symbols."""
        return self.preamble_reps * self.mseq_len

    @property
    def frame_symbol_count(self) -> int:
        return self.preamble_len + self.n_blocks * (self.cp_len + self.block_len) + self.guard_len

    @property
    def payload_bit_count(self) -> int:
        return 2 * self.n_blocks * self.block_len

    def nn_input_len(self) -> int:
        """Length of the real-valued estimator input vector (I and Q halves)."""
        return self.preamble_reps * self.mseq_len * self.oversample * 2

    def frame_sample_count(self) -> int:
        """Samples produced by pulse shaping a full frame (full convolution)."""
        return self.frame_symbol_count * self.oversample + self.rrc_span_symbols * self.oversample

    def active_sample_count(self) -> int:
        """Samples carrying signal energy, i.e. everything before the guard
        tail (the filter transient is absorbed by the guard)."""
        active_syms = self.frame_symbol_count - self.guard_len
        return active_syms * self.oversample + self.rrc_span_symbols * self.oversample


@dataclass
class SampleBuffer:
    """Complex baseband samples plus sample-rate metadata."""

    samples: np.ndarray
    sample_rate_hz: float = 4e6

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.samples.size and not np.isfinite(self.samples.view(np.float64)).all():
            raise ValueError("samples must be finite")

    def __len__(self) -> int:
        return self.samples.size

    def with_samples(self, samples: np.ndarray) -> "SampleBuffer":
        return SampleBuffer(samples, self.sample_rate_hz)


@dataclass
class SymbolFrame:
    """Symbol-level frame: preamble, CP-prefixed payload blocks, guard."""

    preamble: np.ndarray
    payload_blocks: list = field(default_factory=list)
    guard: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.complex128))

    def all_symbols(self) -> np.ndarray:
        return np.concatenate([self.preamble, *self.payload_blocks, self.guard])

    @property
    def symbol_count(self) -> int:
        return len(self.all_symbols())


def generate_m_sequence(degree: int, taps=None, seed_state=None) -> np.ndarray:
    """Generate one period of a maximal-length sequence as +/-1 chips.

    A Fibonacci LFSR of the given register length is stepped for one full
    period. ``taps`` are the 1-based stage positions fed back (they must
    describe a primitive polynomial); ``seed_state`` is the initial register
    content, all ones by default.

    Returns a float array of length ``2**degree - 1`` with values in
    {+1.0, -1.0}. Non-primitive taps are rejected by an exact period check;
    an all-zero seed is rejected because the register would lock up.
    """
    if not 1 <= degree <= 16:
        raise ValueError(f"degree must be in 1..16, got {degree}")
    if taps is None:
        taps = _PRIMITIVE_TAPS[degree]
    taps = tuple(int(t) for t in taps)
    if not taps or len(set(taps)) != len(taps) or min(taps) < 1 or max(taps) > degree:
        raise ValueError(f"taps must be distinct stage positions in 1..{degree}")
    if seed_state is None:
        seed_state = [1] * degree
    seed = [int(b) & 1 for b in seed_state]
    if len(seed) != degree:
        raise ValueError(f"seed_state must hold {degree} bits")
    if not any(seed):
        raise ValueError("seed_state must be non-zero")

    n = 2 ** degree - 1
    state = list(seed)
    bits = np.empty(n, dtype=np.int64)
    for i in range(n):
        bits[i] = state[-1]
        fb = 0
        for t in taps:
            fb ^= state[t - 1]
        state = [fb] + state[:-1]
        if state == seed and i < n - 1:
            raise ValueError(f"taps {taps} are not primitive: period {i + 1} < {n}")
    if state != seed:
        raise ValueError(f"taps {taps} are not primitive: period exceeds {n}")
    return 1.0 - 2.0 * bits.astype(np.float64)


def qpsk_modulate(bits) -> np.ndarray:
    """Gray-map bit pairs (b0, b1) -> ((1-2*b0) + 1j*(1-2*b1)) / sqrt(2)."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1 or bits.size % 2 != 0:
        raise ValueError("bit count must be even")
    b0 = bits[0::2]
    b1 = bits[1::2]
    return ((1 - 2 * b0) + 1j * (1 - 2 * b1)) / np.sqrt(2.0)


def qpsk_demodulate(symbols) -> np.ndarray:
    """Hard quadrant decision inverting :func:`qpsk_modulate`.

    Ties on an axis resolve to bit 0.
    """
    s = np.asarray(symbols, dtype=np.complex128)
    bits = np.empty(2 * s.size, dtype=np.int64)
    bits[0::2] = (s.real < 0).astype(np.int64)
    bits[1::2] = (s.imag < 0).astype(np.int64)
    return bits


def rrc_taps(rolloff: float, samples_per_symbol: int, span_symbols: int,
             normalized: bool = True) -> np.ndarray:
    """Root-raised-cosine impulse response.

    Produces ``span_symbols * samples_per_symbol + 1`` symmetric taps. The
    closed form has removable singularities at t = 0 and |t| = 1/(4*rolloff)
    symbol periods, which are evaluated by their analytic limits. With
    ``normalized`` the taps are scaled to unit energy.
    """
    beta = float(rolloff)
    if not 0 < beta <= 1:
        raise ValueError("rolloff must be in (0, 1]")
    if samples_per_symbol < 1:
        raise ValueError("samples_per_symbol must be >= 1")
    if span_symbols < 2 or span_symbols % 2 != 0:
        raise ValueError("span_symbols must be a positive even integer")

    n = span_symbols * samples_per_symbol + 1
    t = (np.arange(n) - (n - 1) / 2) / samples_per_symbol

    at_zero = t == 0.0
    at_sing = np.isclose(np.abs(t), 1.0 / (4.0 * beta), rtol=1e-12, atol=1e-12)
    regular = ~(at_zero | at_sing)

    h = np.empty(n, dtype=np.float64)
    h[at_zero] = 1.0 - beta + 4.0 * beta / np.pi
    h[at_sing] = (beta / np.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * beta))
        + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * beta))
    )
    tr = t[regular]
    h[regular] = (
        np.sin(np.pi * tr * (1.0 - beta)) + 4.0 * beta * tr * np.cos(np.pi * tr * (1.0 + beta))
    ) / (np.pi * tr * (1.0 - (4.0 * beta * tr) ** 2))

    if normalized:
        h = h / np.sqrt(np.sum(h * h))
    return h


@lru_cache(maxsize=8)
def _taps_for(cfg: FrameConfig) -> np.ndarray:
    return rrc_taps(cfg.rrc_rolloff, cfg.oversample, cfg.rrc_span_symbols)


def upsample_filter(symbols, cfg: FrameConfig) -> SampleBuffer:
    """Zero-stuff symbols by the oversampling factor and pulse shape them.

    Full convolution: the output holds ``len(symbols) * oversample`` samples
    plus the filter transient of ``span * oversample`` samples.
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    if symbols.size == 0:
        raise ValueError("symbols must be non-empty")
    stuffed = np.zeros(symbols.size * cfg.oversample, dtype=np.complex128)
    stuffed[:: cfg.oversample] = symbols
    shaped = np.convolve(stuffed, _taps_for(cfg))
    return SampleBuffer(shaped, cfg.sample_rate_hz)


@lru_cache(maxsize=8)
def preamble_symbols(cfg: FrameConfig) -> np.ndarray:
    """Known preamble: repeated maximal-length sequence as complex symbols.

    The I rail carries the chip sequence and the Q rail a half-period cyclic
    shift of it, scaled to unit symbol energy. The two rails are therefore
    nearly orthogonal copies, so both mixer branches are independently
    excited by the known part of the frame.
    """
    chips = generate_m_sequence(cfg.mseq_degree)
    shifted = np.roll(chips, chips.size // 2)
    one_rep = (chips + 1j * shifted) / np.sqrt(2.0)
    out = np.tile(one_rep, cfg.preamble_reps)
    out.setflags(write=False)
    return out


def build_frame(payload_bits, cfg: FrameConfig, seed: int = 0):
    """Assemble preamble, CP-prefixed QPSK blocks and guard, then pulse shape.

    Returns ``(SymbolFrame, SampleBuffer)``. ``seed`` is accepted for
    uniformity with the seeded generators; assembly itself is fully
    determined by the bits and the config.
    """
    del seed
    bits = np.asarray(payload_bits, dtype=np.int64)
    if bits.size != cfg.payload_bit_count:
        raise ValueError(
            f"payload must hold {cfg.payload_bit_count} bits, got {bits.size}"
        )
    preamble = preamble_symbols(cfg).copy()
    bits_per_block = 2 * cfg.block_len
    blocks = []
    for i in range(cfg.n_blocks):
        data = qpsk_modulate(bits[i * bits_per_block: (i + 1) * bits_per_block])
        blocks.append(np.concatenate([data[-cfg.cp_len:], data]))
    guard = np.zeros(cfg.guard_len, dtype=np.complex128)
    frame = SymbolFrame(preamble=preamble, payload_blocks=blocks, guard=guard)
    return frame, upsample_filter(frame.all_symbols(), cfg)
