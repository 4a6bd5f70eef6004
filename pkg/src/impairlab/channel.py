"""Frequency-selective Rayleigh fading and additive white Gaussian noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sigproc import SampleBuffer

DEFAULT_N_TAPS = 8
DEFAULT_DECAY_DB_PER_TAP = 3.0


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of a symbol-spaced impulse response.

    Taps are independent zero-mean complex Gaussians with an exponential
    power-delay profile normalized to unit total average power, so the
    per-tap magnitudes are Rayleigh distributed.
    """

    taps: np.ndarray
    snr_db: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "taps", np.asarray(self.taps, dtype=np.complex128))
        if self.taps.ndim != 1 or self.taps.size == 0:
            raise ValueError("taps must be a non-empty 1-D array")


def draw_channel(n_taps: int, decay_db_per_tap: float, rng_seed: int,
                 cp_len: int = 16, snr_db: float = math.inf) -> ChannelRealization:
    """Draw a Rayleigh channel realization, deterministic given the seed.

    The maximum excess delay must fit inside the cyclic prefix, so
    ``n_taps`` may not exceed ``cp_len``.
    """
    if not 1 <= n_taps <= cp_len:
        raise ValueError(f"n_taps must be in 1..{cp_len} (cyclic prefix bound), got {n_taps}")
    profile = 10.0 ** (-decay_db_per_tap * np.arange(n_taps) / 10.0)
    profile = profile / profile.sum()
    rng = np.random.default_rng(rng_seed)
    scale = np.sqrt(profile / 2.0)
    taps = scale * (rng.standard_normal(n_taps) + 1j * rng.standard_normal(n_taps))
    return ChannelRealization(taps=taps, snr_db=snr_db)


def apply_channel(x: SampleBuffer, ch: ChannelRealization, oversample: int) -> SampleBuffer:
    """Convolve with the impulse response; tap k sits at delay k symbols."""
    if len(x) == 0:
        raise ValueError("input buffer is empty")
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    n_taps = ch.taps.size
    h = np.zeros((n_taps - 1) * oversample + 1, dtype=np.complex128)
    h[::oversample] = ch.taps
    return x.with_samples(np.convolve(x.samples, h))


def add_awgn(x: SampleBuffer, snr_db: float, rng_seed: int,
             signal_power: float | None = None) -> SampleBuffer:
    """Add circularly symmetric complex Gaussian noise at the given SNR.

    The noise variance is ``signal_power / 10**(snr_db/10)``; when no
    reference power is passed, the mean power of the whole buffer is used.
    ``snr_db = inf`` is the no-noise sentinel and returns the input
    unchanged.
    """
    if len(x) == 0:
        raise ValueError("input buffer is empty")
    if math.isinf(snr_db) and snr_db > 0:
        return x.with_samples(x.samples.copy())
    if signal_power is None:
        signal_power = float(np.mean(np.abs(x.samples) ** 2))
    sigma2 = signal_power / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(rng_seed)
    n = x.samples.size
    noise = np.sqrt(sigma2 / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return x.with_samples(x.samples + noise)
