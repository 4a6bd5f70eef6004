"""Receive chain: matched filtering, coarse frame synchronization by
preamble correlation, and extraction of the estimator input window."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal as _signal

from .sigproc import FrameConfig, SampleBuffer, _taps_for, preamble_symbols, qpsk_demodulate, upsample_filter

SYNC_THRESHOLD = 0.2
ORACLE_MIN_COHERENCE = 0.1


class SyncError(RuntimeError):
    """Raised when no credible preamble correlation peak is found."""


@dataclass(frozen=True)
class SyncResult:
    start_index: int
    peak_metric: float


def matched_filter(x: SampleBuffer, cfg: FrameConfig) -> SampleBuffer:
    """Convolve with the same unit-energy pulse-shaping taps (full mode)."""
    if len(x) == 0:
        raise ValueError("input buffer is empty")
    return x.with_samples(np.convolve(x.samples, _taps_for(cfg)))


@lru_cache(maxsize=8)
def preamble_template(cfg: FrameConfig) -> np.ndarray:
    """Known preamble waveform after pulse shaping and matched filtering.

    Sample 0 of the template corresponds to the first output sample of the
    matched-filtered frame, so a frame starting at buffer offset d
    correlates with the template at lag d.
    """
    shaped = upsample_filter(preamble_symbols(cfg), cfg)
    tpl = matched_filter(shaped, cfg).samples
    tpl.setflags(write=False)
    return tpl


def coarse_sync(rx: SampleBuffer, cfg: FrameConfig,
                threshold: float = SYNC_THRESHOLD) -> SyncResult:
    """Locate the frame start by correlating against the known preamble.

    ``rx`` is the matched-filtered receive buffer. The start index is the
    lag with the largest correlation magnitude; the peak metric is that
    correlation normalized by the window and template energies, so it lies
    in [0, 1]. A metric below ``threshold`` raises :class:`SyncError`.
    """
    tpl = preamble_template(cfg)
    n = len(rx)
    if n < tpl.size:
        raise SyncError(f"buffer too short for sync: {n} < {tpl.size} samples")
    corr = _signal.fftconvolve(rx.samples, np.conj(tpl[::-1]), mode="valid")
    k = int(np.argmax(np.abs(corr)))

    power = np.abs(rx.samples) ** 2
    cum = np.concatenate([[0.0], np.cumsum(power)])
    window_energy = cum[k + tpl.size] - cum[k]
    tpl_energy = float(np.sum(np.abs(tpl) ** 2))
    denom = np.sqrt(window_energy * tpl_energy)
    metric = float(np.abs(corr[k]) / denom) if denom > 0 else 0.0
    metric = min(metric, 1.0)
    if metric < threshold:
        raise SyncError(f"sync not found: peak metric {metric:.3f} < {threshold}")
    return SyncResult(start_index=k, peak_metric=metric)


def _window(rx: SampleBuffer, sync: SyncResult, cfg: FrameConfig) -> np.ndarray:
    width = cfg.preamble_len * cfg.oversample
    stop = sync.start_index + width
    if sync.start_index < 0 or stop > len(rx):
        raise ValueError(
            f"window [{sync.start_index}, {stop}) out of bounds for {len(rx)} samples"
        )
    return rx.samples[sync.start_index:stop]


def extract_nn_input(rx: SampleBuffer, sync: SyncResult, cfg: FrameConfig,
                     normalizer: float = 1.0) -> np.ndarray:
    """Flatten the synchronized preamble window into one real vector.

    The in-phase parts of the window come first, then the quadrature parts.
    Values are divided by the dataset-wide normalizer.
    """
    w = _window(rx, sync, cfg)
    return np.concatenate([w.real, w.imag]) / normalizer


def phase_oracle(rx: SampleBuffer, sync: SyncResult, cfg: FrameConfig) -> float:
    """Estimate the constant phase rotation from the preamble window.

    The sample mean is removed from both the window and the clean reference
    before correlating, which cancels any additive I/Q offset, so the
    estimate is unbiased whenever rotation and offset are the only
    distortions present. The first filter span of samples is skipped: an
    offset added before the matched filter is only flat once the filter has
    rung up, and mean removal cancels it exactly only over that flat region.
    """
    skip = cfg.rrc_span_symbols * cfg.oversample
    w = _window(rx, sync, cfg)[skip:]
    ref = preamble_template(cfg)[skip: skip + w.size]
    w0 = w - w.mean()
    r0 = ref - ref.mean()
    corr = np.vdot(r0, w0)
    denom = np.linalg.norm(w0) * np.linalg.norm(r0)
    if denom == 0 or abs(corr) / denom < ORACLE_MIN_COHERENCE:
        raise SyncError("phase oracle: correlation magnitude too small")
    return float(np.angle(corr))


def recover_payload_bits(rx: SampleBuffer, sync: SyncResult, cfg: FrameConfig) -> np.ndarray:
    """Sample the matched-filtered buffer at symbol instants and demodulate.

    Skips cyclic prefixes. The combined group delay of the shaping and
    matched filters is one filter span of samples.
    """
    delay = cfg.rrc_span_symbols * cfg.oversample
    block_stride = cfg.cp_len + cfg.block_len
    symbols = np.empty(cfg.n_blocks * cfg.block_len, dtype=np.complex128)
    for i in range(cfg.n_blocks):
        first = cfg.preamble_len + i * block_stride + cfg.cp_len
        idx = sync.start_index + delay + (first + np.arange(cfg.block_len)) * cfg.oversample
        if idx[-1] >= len(rx):
            raise ValueError("buffer too short to hold the full payload")
        symbols[i * cfg.block_len:(i + 1) * cfg.block_len] = rx.samples[idx]
    return qpsk_demodulate(symbols)
