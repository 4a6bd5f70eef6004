"""Analog front-end imperfections applied to a baseband signal.

Four effects are modeled, always in this order: I/Q gain imbalance together
with quadrature offset, then a constant phase rotation, then an additive
I/Q offset. The baseband-equivalent form assumes ideal up/downconversion,
so the carrier frequency drops out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sigproc import SampleBuffer

# Canonical label order used for dataset labels and estimator outputs.
PARAM_NAMES = ("i_gain", "q_gain", "quad_offset_rad", "phase_rad", "i_offset", "q_offset")


@dataclass(frozen=True)
class ImpairmentParams:
    """The six front-end parameters, in canonical label order."""

    i_gain: float
    q_gain: float
    quad_offset_rad: float
    phase_rad: float
    i_offset: float
    q_offset: float

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES], dtype=np.float64)

    @classmethod
    def from_vector(cls, vec) -> "ImpairmentParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (len(PARAM_NAMES),):
            raise ValueError(f"expected {len(PARAM_NAMES)} values, got shape {vec.shape}")
        return cls(*(float(v) for v in vec))

    @classmethod
    def identity(cls) -> "ImpairmentParams":
        """Parameters that leave the signal unchanged."""
        return cls(1.0, 1.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ImpairmentRanges:
    """Per-parameter (low, high) bounds for uniform sampling."""

    i_gain: tuple = (0.0, 1.5)
    q_gain: tuple = (0.0, 1.5)
    quad_offset_rad: tuple = (-1.0, 1.0)
    phase_rad: tuple = (0.0, math.pi / 2)
    i_offset: tuple = (-0.5, 0.5)
    q_offset: tuple = (-0.5, 0.5)

    def __post_init__(self):
        for name in PARAM_NAMES:
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"invalid range for {name}: ({lo}, {hi})")

    def bounds(self, name: str) -> tuple:
        return getattr(self, name)

    def contains(self, params: ImpairmentParams) -> bool:
        for name in PARAM_NAMES:
            lo, hi = getattr(self, name)
            v = getattr(params, name)
            if not lo <= v <= hi:
                return False
        return True


def apply_gain_quadrature(x: SampleBuffer, i_gain: float, q_gain: float,
                          quad_offset_rad: float) -> SampleBuffer:
    """Scale the I and Q rails and tilt the Q mixer by the quadrature offset.

    Baseband equivalent of unequal branch gains with an imperfect 90 degree
    splitter: out.re = i_gain*re + q_gain*sin(quad)*im,
    out.im = q_gain*cos(quad)*im.
    """
    for v in (i_gain, q_gain, quad_offset_rad):
        if not math.isfinite(v):
            raise ValueError("impairment parameters must be finite")
    re = x.samples.real
    im = x.samples.imag
    out = (i_gain * re + q_gain * math.sin(quad_offset_rad) * im) \
        + 1j * (q_gain * math.cos(quad_offset_rad) * im)
    return x.with_samples(out)


def apply_phase_noise(x: SampleBuffer, phase_rad: float) -> SampleBuffer:
    """Rotate every sample by a constant phase. Magnitudes are preserved."""
    if not math.isfinite(phase_rad):
        raise ValueError("phase must be finite")
    return x.with_samples(x.samples * np.exp(1j * phase_rad))


def apply_iq_offset(x: SampleBuffer, i_offset: float, q_offset: float) -> SampleBuffer:
    """Add a constant complex shift (DC leakage) to every sample."""
    if not (math.isfinite(i_offset) and math.isfinite(q_offset)):
        raise ValueError("offsets must be finite")
    return x.with_samples(x.samples + (i_offset + 1j * q_offset))


def apply_all(x: SampleBuffer, params: ImpairmentParams,
              ranges: ImpairmentRanges | None = None) -> SampleBuffer:
    """Apply gain/quadrature, then phase rotation, then I/Q offset.

    Parameters outside the allowed ranges (defaults if none given) are
    rejected.
    """
    ranges = ranges if ranges is not None else ImpairmentRanges()
    if not ranges.contains(params):
        bad = [
            name for name in PARAM_NAMES
            if not ranges.bounds(name)[0] <= getattr(params, name) <= ranges.bounds(name)[1]
        ]
        raise ValueError(f"parameters out of range: {', '.join(bad)}")
    y = apply_gain_quadrature(x, params.i_gain, params.q_gain, params.quad_offset_rad)
    y = apply_phase_noise(y, params.phase_rad)
    return apply_iq_offset(y, params.i_offset, params.q_offset)


def sample_params(ranges: ImpairmentRanges, rng_seed: int) -> ImpairmentParams:
    """Draw each parameter independently and uniformly over its range.

    Deterministic given the seed; degenerate ranges return exact constants.
    """
    rng = np.random.default_rng(rng_seed)
    values = [float(rng.uniform(*ranges.bounds(name))) for name in PARAM_NAMES]
    return ImpairmentParams(*values)
