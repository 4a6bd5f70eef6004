"""End-to-end sample generation, stratified splits, and binary storage.

One record is produced by running a freshly seeded frame through the
impairment, channel, noise and receive chains, then windowing the
synchronized preamble into the estimator input vector. Records are stored
in a fixed-width little-endian format with a self-describing header and a
human-readable JSON manifest next to each file.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import channel as chan
from .impairments import ImpairmentRanges, PARAM_NAMES, apply_all, sample_params
from .receiver import SyncError, coarse_sync, extract_nn_input, matched_filter
from .sigproc import FrameConfig, build_frame

MAGIC = b"RFIMPR01"
VERSION = 1
ZERO_DIGEST = bytes(32)

# Stream tags for deriving independent sub-seeds from one master seed.
_STREAM_CHANNEL = 1
_STREAM_RECORD = 2
_SPLIT_NAMES = ("train", "val", "test")


class DatasetError(Exception):
    """Base class for dataset file problems."""


class BadMagicError(DatasetError):
    pass


class VersionMismatchError(DatasetError):
    pass


class TruncatedDatasetError(DatasetError):
    pass


class DigestMismatchError(DatasetError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    """Per-SNR record counts for the three splits."""

    train_per_snr: int = 6000
    val_per_snr: int = 10000
    test_per_snr: int = 10000
    snr_grid: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)

    def __post_init__(self):
        if min(self.train_per_snr, self.val_per_snr, self.test_per_snr) < 1:
            raise ValueError("split counts must be >= 1")
        if len(self.snr_grid) == 0:
            raise ValueError("snr_grid must be non-empty")
        object.__setattr__(self, "snr_grid", tuple(float(s) for s in self.snr_grid))

    def count_for(self, split: str) -> int:
        return {"train": self.train_per_snr, "val": self.val_per_snr,
                "test": self.test_per_snr}[split]


@dataclass(frozen=True)
class DatasetHeader:
    input_len: int
    label_len: int
    record_count: int
    snr_grid: tuple
    normalizer: float
    config_digest: bytes
    version: int = VERSION

    def record_nbytes(self) -> int:
        return 4 * self.input_len + 4 * self.label_len + 8 + 8

    def header_nbytes(self) -> int:
        return 8 + 4 + 4 + 4 + 8 + 4 + 8 * len(self.snr_grid) + 8 + 32


@dataclass
class DatasetRecord:
    """One training example: input window, label vector, SNR tag and seed."""

    input: np.ndarray
    label: np.ndarray
    snr_db: float
    seed: int


def derive_seed(*parts) -> int:
    """Stable 64-bit seed derived from a tuple of non-negative integers."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_record(cfg: FrameConfig, ranges: ImpairmentRanges, snr_db: float, seed: int,
                    channel_taps: int = chan.DEFAULT_N_TAPS,
                    channel_decay_db: float = chan.DEFAULT_DECAY_DB_PER_TAP,
                    channel_seed: int | None = None,
                    max_sync_retries: int = 8) -> DatasetRecord:
    """Run the full chain for one seeded example.

    Sub-generators (payload bits, impairment parameters, channel, noise)
    each get an independent seed derived from ``seed``. When the given
    ``channel_seed`` is None a fresh channel is drawn per record. A sync
    failure retries with a derived seed up to ``max_sync_retries`` times.
    """
    for attempt in range(max_sync_retries + 1):
        sub = np.random.SeedSequence([int(seed), attempt]).generate_state(4, np.uint64)
        bits_seed, params_seed, chan_seed, noise_seed = (int(s) for s in sub)
        if channel_seed is not None:
            chan_seed = int(channel_seed)

        bits = np.random.default_rng(bits_seed).integers(0, 2, cfg.payload_bit_count)
        params = sample_params(ranges, params_seed)
        _, tx = build_frame(bits, cfg)
        impaired = apply_all(tx, params, ranges)
        ref_power = float(np.mean(np.abs(impaired.samples[: cfg.active_sample_count()]) ** 2))
        ch = chan.draw_channel(channel_taps, channel_decay_db, chan_seed, cp_len=cfg.cp_len,
                               snr_db=snr_db)
        rx = chan.apply_channel(impaired, ch, cfg.oversample)
        rx = chan.add_awgn(rx, snr_db, noise_seed, signal_power=ref_power)
        mf = matched_filter(rx, cfg)
        try:
            sync = coarse_sync(mf, cfg)
        except SyncError:
            continue
        vec = extract_nn_input(mf, sync, cfg)
        return DatasetRecord(
            input=vec.astype(np.float32),
            label=params.as_vector().astype(np.float32),
            snr_db=float(snr_db),
            seed=int(seed),
        )
    raise SyncError(f"record seed {seed}: sync failed {max_sync_retries + 1} times")


def _pack_record(rec: DatasetRecord) -> bytes:
    return (
        rec.input.astype("<f4").tobytes()
        + rec.label.astype("<f4").tobytes()
        + struct.pack("<d", rec.snr_db)
        + struct.pack("<Q", rec.seed)
    )


def _pack_header(h: DatasetHeader) -> bytes:
    out = [MAGIC,
           struct.pack("<I", h.version),
           struct.pack("<I", h.input_len),
           struct.pack("<I", h.label_len),
           struct.pack("<Q", h.record_count),
           struct.pack("<I", len(h.snr_grid))]
    out.extend(struct.pack("<d", s) for s in h.snr_grid)
    out.append(struct.pack("<d", h.normalizer))
    if len(h.config_digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    out.append(h.config_digest)
    return b"".join(out)


def read_header(path) -> DatasetHeader:
    path = Path(path)
    with open(path, "rb") as f:
        fixed = f.read(32)
        if len(fixed) < 32:
            raise TruncatedDatasetError(f"{path}: file shorter than the fixed header")
        if fixed[:8] != MAGIC:
            raise BadMagicError(f"{path}: bad magic {fixed[:8]!r}")
        version, input_len, label_len = struct.unpack("<III", fixed[8:20])
        if version != VERSION:
            raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
        (record_count,) = struct.unpack("<Q", fixed[20:28])
        (n_snr,) = struct.unpack("<I", fixed[28:32])
        rest = f.read(8 * n_snr + 8 + 32)
        if len(rest) < 8 * n_snr + 8 + 32:
            raise TruncatedDatasetError(f"{path}: header truncated")
        snr_grid = struct.unpack(f"<{n_snr}d", rest[: 8 * n_snr])
        (normalizer,) = struct.unpack("<d", rest[8 * n_snr: 8 * n_snr + 8])
        digest = rest[8 * n_snr + 8:]
    header = DatasetHeader(input_len=input_len, label_len=label_len,
                           record_count=record_count, snr_grid=tuple(snr_grid),
                           normalizer=normalizer, config_digest=digest, version=version)
    body = path.stat().st_size - header.header_nbytes()
    if body != record_count * header.record_nbytes():
        raise TruncatedDatasetError(
            f"{path}: body holds {body} bytes, expected {record_count * header.record_nbytes()}"
        )
    return header


def read_records(path, start: int = 0, count: int | None = None) -> list:
    """Read a contiguous range of records; the full file by default."""
    header = read_header(path)
    if count is None:
        count = header.record_count - start
    if start < 0 or count < 0 or start + count > header.record_count:
        raise IndexError(
            f"record range [{start}, {start + count}) out of bounds "
            f"for {header.record_count} records"
        )
    rec_size = header.record_nbytes()
    records = []
    with open(path, "rb") as f:
        f.seek(header.header_nbytes() + start * rec_size)
        for _ in range(count):
            raw = f.read(rec_size)
            if len(raw) < rec_size:
                raise TruncatedDatasetError(f"{path}: record body truncated")
            inp = np.frombuffer(raw, dtype="<f4", count=header.input_len)
            lab = np.frombuffer(raw, dtype="<f4", count=header.label_len,
                                offset=4 * header.input_len)
            off = 4 * (header.input_len + header.label_len)
            (snr_db,) = struct.unpack_from("<d", raw, off)
            (seed,) = struct.unpack_from("<Q", raw, off + 8)
            records.append(DatasetRecord(input=inp.copy(), label=lab.copy(),
                                         snr_db=snr_db, seed=seed))
    return records


def read_arrays(path, normalized: bool = True, expected_digest: bytes | None = None):
    """Bulk-load a dataset file as (inputs, labels, snr, header).

    Inputs come back as float32, divided by the stored normalizer when
    ``normalized`` is set; labels as float64. An ``expected_digest``
    mismatch raises :class:`DigestMismatchError` before any bulk read.
    """
    header = read_header(path)
    if expected_digest is not None and header.config_digest != expected_digest:
        raise DigestMismatchError(
            f"{path}: dataset was generated under a different configuration"
        )
    rec_size = header.record_nbytes()
    with open(path, "rb") as f:
        f.seek(header.header_nbytes())
        raw = f.read(header.record_count * rec_size)
    table = np.frombuffer(raw, dtype=np.uint8).reshape(header.record_count, rec_size)
    inputs = table[:, : 4 * header.input_len].copy().view("<f4")
    lab_off = 4 * header.input_len
    labels = table[:, lab_off: lab_off + 4 * header.label_len].copy().view("<f4")
    snr = table[:, lab_off + 4 * header.label_len: lab_off + 4 * header.label_len + 8]
    snr = snr.copy().view("<f8").ravel()
    if normalized and header.normalizer != 1.0:
        inputs = (inputs / np.float32(header.normalizer)).astype(np.float32)
    return inputs, labels.astype(np.float64), snr.astype(np.float64), header


def _record_task(args):
    cfg, ranges, snr_db, seed, taps, decay, chan_seed = args
    return generate_record(cfg, ranges, snr_db, seed, channel_taps=taps,
                           channel_decay_db=decay, channel_seed=chan_seed)


def _split_jobs(split_idx, split, spec, cfg, ranges, master_seed, taps, decay, chan_seed):
    jobs = []
    for snr_idx, snr_db in enumerate(spec.snr_grid):
        for i in range(spec.count_for(split)):
            seed = derive_seed(master_seed, _STREAM_RECORD, split_idx, snr_idx, i)
            jobs.append((cfg, ranges, snr_db, seed, taps, decay, chan_seed))
    return jobs


def generate_split(spec: SplitSpec, cfg: FrameConfig, ranges: ImpairmentRanges,
                   master_seed: int, out_dir,
                   channel_taps: int = chan.DEFAULT_N_TAPS,
                   channel_decay_db: float = chan.DEFAULT_DECAY_DB_PER_TAP,
                   config_digest: bytes = ZERO_DIGEST,
                   workers: int = 1,
                   manifest_extra: dict | None = None) -> dict:
    """Generate train/val/test dataset files with disjoint seed streams.

    All records of one run share a single channel realization whose seed is
    derived from the master seed; this keeps the channel a nuisance while
    leaving every impairment parameter observable in principle. The input
    normalizer is the global RMS of the training inputs and is stored in
    all three headers. Returns a summary dict with paths and counts.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chan_seed = derive_seed(master_seed, _STREAM_CHANNEL)

    tmp_paths, final_paths = {}, {}
    sumsq = 0.0
    n_train_values = 0
    try:
        for split_idx, split in enumerate(_SPLIT_NAMES):
            jobs = _split_jobs(split_idx, split, spec, cfg, ranges, master_seed,
                               channel_taps, channel_decay_db, chan_seed)
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{split}-", suffix=".body")
            tmp_paths[split] = Path(tmp)
            with os.fdopen(fd, "wb") as body:
                if workers > 1:
                    with Pool(workers) as pool:
                        rec_iter = pool.imap(_record_task, jobs, chunksize=16)
                        for rec in rec_iter:
                            body.write(_pack_record(rec))
                            if split == "train":
                                sumsq += float(np.sum(rec.input.astype(np.float64) ** 2))
                                n_train_values += rec.input.size
                else:
                    for job in jobs:
                        rec = _record_task(job)
                        body.write(_pack_record(rec))
                        if split == "train":
                            sumsq += float(np.sum(rec.input.astype(np.float64) ** 2))
                            n_train_values += rec.input.size

        normalizer = math.sqrt(sumsq / n_train_values)
        counts = {}
        for split in _SPLIT_NAMES:
            n_rec = spec.count_for(split) * len(spec.snr_grid)
            header = DatasetHeader(input_len=cfg.nn_input_len(), label_len=len(PARAM_NAMES),
                                   record_count=n_rec, snr_grid=spec.snr_grid,
                                   normalizer=normalizer, config_digest=config_digest)
            final = out_dir / f"{split}.rfds"
            with open(final, "wb") as f:
                f.write(_pack_header(header))
                with open(tmp_paths[split], "rb") as body:
                    shutil.copyfileobj(body, f)
            tmp_paths[split].unlink()
            del tmp_paths[split]
            counts[split] = n_rec
            final_paths[split] = final
            _write_manifest(final, header, spec, cfg, ranges, master_seed,
                            channel_taps, channel_decay_db, chan_seed, manifest_extra)
    except BaseException:
        for p in list(tmp_paths.values()) + list(final_paths.values()):
            Path(p).unlink(missing_ok=True)
            Path(str(p) + ".manifest.json").unlink(missing_ok=True)
        raise

    return {
        "paths": {k: str(v) for k, v in final_paths.items()},
        "counts": counts,
        "normalizer": normalizer,
        "channel_seed": chan_seed,
        "config_digest": config_digest.hex(),
    }


def manifest_path(dataset_path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.stem + ".manifest.json")


def _write_manifest(final, header, spec, cfg, ranges, master_seed,
                    channel_taps, channel_decay_db, chan_seed, extra):
    doc = {
        "magic": MAGIC.decode("ascii"),
        "version": header.version,
        "input_len": header.input_len,
        "label_len": header.label_len,
        "record_count": header.record_count,
        "snr_grid": list(header.snr_grid),
        "normalizer": header.normalizer,
        "config_digest": header.config_digest.hex(),
        "generator_config": {
            "frame": {k: getattr(cfg, k) for k in (
                "n_blocks", "block_len", "cp_ratio", "oversample", "sample_rate_hz",
                "mseq_degree", "preamble_reps", "guard_len", "rrc_rolloff",
                "rrc_span_symbols")},
            "ranges": {name: list(ranges.bounds(name)) for name in PARAM_NAMES},
            "split": {"train_per_snr": spec.train_per_snr, "val_per_snr": spec.val_per_snr,
                      "test_per_snr": spec.test_per_snr, "snr_grid": list(spec.snr_grid)},
            "channel": {"n_taps": channel_taps, "decay_db_per_tap": channel_decay_db,
                        "channel_seed": chan_seed},
            "master_seed": master_seed,
        },
    }
    if extra:
        doc.update(extra)
    with open(manifest_path(final), "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
