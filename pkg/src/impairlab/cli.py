"""Command-line pipeline: config -> dataset generation -> training ->
evaluation -> report tables, plus one-shot inference on a waveform file.

The run configuration is a single JSON file whose sections mirror the
library dataclasses; every produced artifact embeds a digest of the
resolved configuration so cross-stage mismatches are caught up front.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import neuralnet as nn
from . import trainlab as tl
from .impairments import ImpairmentRanges, PARAM_NAMES
from .receiver import SyncError, coarse_sync, extract_nn_input, matched_filter
from .sigproc import FrameConfig, SampleBuffer

WORKERS_ENV = "IMPAIRLAB_WORKERS"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

_FRAME_KEYS = ("n_blocks", "block_len", "cp_ratio", "oversample", "sample_rate_hz",
               "mseq_degree", "preamble_reps", "guard_len", "rrc_rolloff",
               "rrc_span_symbols")
_SPLIT_KEYS = ("train_per_snr", "val_per_snr", "test_per_snr", "snr_grid")
_TRAIN_KEYS = ("batch_size", "epochs", "lr", "shuffle_seed", "convergence_gap",
               "max_retuning_rounds")

DESK_SCALE_SPLIT = {"train_per_snr": 600, "val_per_snr": 200, "test_per_snr": 200}


class CliError(RuntimeError):
    pass


@dataclass
class RunConfig:
    frame: FrameConfig
    ranges: ImpairmentRanges
    split: ds.SplitSpec
    train: tl.TrainConfig
    channel_taps: int
    channel_decay_db: float
    master_seed: int
    output_dir: Path

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {"frame", "ranges", "split", "train", "channel", "master_seed", "output_dir"}
        unknown = set(doc) - known
        if unknown:
            raise CliError(f"unknown config fields: {', '.join(sorted(unknown))}")

        def section(name, keys):
            sub = doc.get(name, {})
            bad = set(sub) - set(keys)
            if bad:
                raise CliError(f"unknown {name} fields: {', '.join(sorted(bad))}")
            return sub

        try:
            frame = FrameConfig(**section("frame", _FRAME_KEYS))
            ranges_doc = section("ranges", PARAM_NAMES)
            ranges = ImpairmentRanges(**{k: tuple(v) for k, v in ranges_doc.items()})
            split_doc = dict(section("split", _SPLIT_KEYS))
            if "snr_grid" in split_doc:
                split_doc["snr_grid"] = tuple(split_doc["snr_grid"])
            split = ds.SplitSpec(**split_doc)
            train = tl.TrainConfig(**section("train", _TRAIN_KEYS))
            chan_doc = section("channel", ("n_taps", "decay_db_per_tap"))
        except (TypeError, ValueError) as exc:
            raise CliError(f"invalid config: {exc}") from exc
        return cls(
            frame=frame,
            ranges=ranges,
            split=split,
            train=train,
            channel_taps=int(chan_doc.get("n_taps", 8)),
            channel_decay_db=float(chan_doc.get("decay_db_per_tap", 3.0)),
            master_seed=int(doc.get("master_seed", 101)),
            output_dir=Path(doc.get("output_dir", "impairlab_runs")),
        )

    def canonical_dict(self) -> dict:
        """Everything that defines the experiment; excludes output_dir so
        relocating a run does not invalidate its artifacts."""
        return {
            "frame": {k: getattr(self.frame, k) for k in _FRAME_KEYS},
            "ranges": {k: list(self.ranges.bounds(k)) for k in PARAM_NAMES},
            "split": {k: (list(getattr(self.split, k)) if k == "snr_grid"
                          else getattr(self.split, k)) for k in _SPLIT_KEYS},
            "train": {k: getattr(self.train, k) for k in _TRAIN_KEYS},
            "channel": {"n_taps": self.channel_taps,
                        "decay_db_per_tap": self.channel_decay_db},
            "master_seed": self.master_seed,
        }

    def digest(self) -> bytes:
        blob = json.dumps(self.canonical_dict(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).digest()


def load_config(path, seed_override=None, output_dir=None, desk_scale=False) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path} is not valid JSON: {exc}") from exc
    if desk_scale:
        doc.setdefault("split", {}).update(DESK_SCALE_SPLIT)
    cfg = RunConfig.from_dict(doc)
    if seed_override is not None:
        doc["master_seed"] = int(seed_override)
        cfg = RunConfig.from_dict(doc)
    if output_dir is not None:
        cfg.output_dir = Path(output_dir)
    return cfg


def _checkpoint_path(cfg: RunConfig, name: str) -> Path:
    return cfg.output_dir / (f"{name}.ckpt" if name == "joint" else f"single_{name}.ckpt")


def _history_path(cfg: RunConfig, name: str) -> Path:
    return cfg.output_dir / f"{name}.history.json"


def cmd_generate(cfg: RunConfig, workers: int) -> int:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    summary = ds.generate_split(
        cfg.split, cfg.frame, cfg.ranges, cfg.master_seed, cfg.output_dir,
        channel_taps=cfg.channel_taps, channel_decay_db=cfg.channel_decay_db,
        config_digest=cfg.digest(), workers=workers,
    )
    for split in ("train", "val", "test"):
        per = cfg.split.count_for(split)
        print(f"{split}: {summary['counts'][split]} records "
              f"({per} per SNR x {len(cfg.split.snr_grid)} SNRs) -> {summary['paths'][split]}")
    print(f"input normalizer: {summary['normalizer']:.9g}")
    return EXIT_OK


def _load_split_arrays(cfg: RunConfig, split: str):
    path = cfg.output_dir / f"{split}.rfds"
    if not path.exists():
        raise CliError(f"dataset file missing: {path} (run `generate` first)")
    try:
        return ds.read_arrays(path, normalized=True, expected_digest=cfg.digest())
    except ds.DigestMismatchError as exc:
        raise CliError(str(exc)) from exc


def _requested_kinds(kind: str) -> list:
    if kind == "all":
        return ["joint"] + list(PARAM_NAMES)
    if kind == "joint":
        return ["joint"]
    if kind.startswith("single:"):
        name = kind.split(":", 1)[1]
        if name not in PARAM_NAMES:
            raise CliError(f"unknown parameter {name!r}; choose from {', '.join(PARAM_NAMES)}")
        return [name]
    raise CliError(f"bad --kind {kind!r}: use joint, single:<param>, or all")


def cmd_train(cfg: RunConfig, kind: str) -> int:
    xtr, ytr, _, header = _load_split_arrays(cfg, "train")
    xval, yval, _, _ = _load_split_arrays(cfg, "val")
    digest = cfg.digest()

    all_converged = True
    for name in _requested_kinds(kind):
        if name == "joint":
            sets = ((xtr, ytr), (xval, yval))
            model_kind, seed = "joint", ds.derive_seed(cfg.master_seed, 100)
        else:
            col = PARAM_NAMES.index(name)
            sets = ((xtr, ytr[:, col: col + 1]), (xval, yval[:, col: col + 1]))
            model_kind, seed = "single", ds.derive_seed(cfg.master_seed, 101, col)
        result = tl.retune_loop(sets[0], sets[1], cfg.train, kind=model_kind,
                                init_seed=seed)
        ck = _checkpoint_path(cfg, name)
        nn.save_checkpoint(result.model, result.state, ck,
                           normalizer=header.normalizer, config_digest=digest)
        with open(_history_path(cfg, name), "w", encoding="utf-8") as f:
            json.dump({"train": result.history.train, "val": result.history.val,
                       "rounds_used": result.rounds_used, "converged": result.converged,
                       "final_lr": result.final_lr}, f, indent=2, sort_keys=True)
            f.write("\n")
        status = "converged" if result.converged else "NOT converged"
        print(f"{name}: {status} after {result.rounds_used} round(s), "
              f"final lr {result.final_lr:g} -> {ck}")
        all_converged = all_converged and result.converged
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


def cmd_eval(cfg: RunConfig) -> int:
    xte, yte, snr, _ = _load_split_arrays(cfg, "test")
    digest = cfg.digest()

    joint_path = _checkpoint_path(cfg, "joint")
    if not joint_path.exists():
        raise CliError(f"missing checkpoint for the joint model: {joint_path}")
    joint, _, _, _ = nn.load_checkpoint(joint_path, expected_digest=digest)
    singles = {}
    for name in PARAM_NAMES:
        p = _checkpoint_path(cfg, name)
        if not p.exists():
            raise CliError(f"missing single-task checkpoint for parameter {name!r}: {p}")
        singles[name], _, _, _ = nn.load_checkpoint(p, expected_digest=digest)

    report = tl.evaluate(joint, singles, (xte, yte, snr), cfg.ranges,
                         snr_grid=cfg.split.snr_grid)
    history = tl.LossHistory()
    hist_path = _history_path(cfg, "joint")
    if hist_path.exists():
        with open(hist_path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        history.entries = list(zip(doc["train"], doc["val"]))
    mse_path, loss_path = tl.export_report(report, history,
                                           str(cfg.output_dir) + os.sep)
    print(f"wrote {mse_path} and {loss_path}")

    top_snr = max(cfg.split.snr_grid)
    by = {(e.model, e.parameter, e.snr_db): e.mse for e in report.entries}
    print(f"MSE at {top_snr:g} dB (joint vs single vs mean predictor):")
    for name in PARAM_NAMES:
        j = by[("joint", name, top_snr)]
        s = by[("single", name, top_snr)]
        r = report.references[name]
        mark = "<" if j < s else ">="
        print(f"  {name:16s} {j:.5g} {mark} {s:.5g}   (reference {r:.4g})")
    return EXIT_OK


def cmd_infer(cfg: RunConfig, checkpoint, waveform_file) -> int:
    model, _, normalizer, _ = nn.load_checkpoint(checkpoint)
    raw = np.fromfile(waveform_file, dtype="<f4")
    if raw.size % 2 != 0:
        raise CliError(f"{waveform_file}: interleaved I/Q file must hold an even "
                       f"number of float32 values, got {raw.size}")
    iq = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    buf = SampleBuffer(iq, cfg.frame.sample_rate_hz)
    mf = matched_filter(buf, cfg.frame)
    try:
        sync = coarse_sync(mf, cfg.frame)
    except SyncError as exc:
        raise CliError(f"{waveform_file}: {exc}") from exc
    try:
        vec = extract_nn_input(mf, sync, cfg.frame, normalizer=normalizer)
    except ValueError as exc:
        raise CliError(f"{waveform_file}: waveform too short: {exc}") from exc
    if vec.size != model.input_len:
        raise CliError(f"window length {vec.size} does not match model input "
                       f"{model.input_len}; check the frame config")
    estimates = nn.forward(model, vec[None, :])[0]
    if nn.model_kind(model) == "joint":
        for name, value in zip(PARAM_NAMES, estimates):
            print(f"{name} = {value:.6f}")
    else:
        print(f"estimate = {estimates[0]:.6f}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # Usage problems should exit 1; 2 is reserved for trained-but-not-converged.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_ERROR)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="impairlab",
                     description="Simulate an impaired single-carrier link, build "
                                 "datasets, and train/evaluate the joint estimator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH",
                       help="JSON run configuration (defaults used when omitted)")
        p.add_argument("--seed-override", type=int, metavar="SEED",
                       help="replace the master seed from the config")
        p.add_argument("--output-dir", metavar="DIR",
                       help="replace the output directory from the config")
        p.add_argument("--desk-scale", action="store_true",
                       help="shrink the split to 600/200/200 records per SNR")

    g = sub.add_parser("generate", help="generate train/val/test dataset files")
    common(g)
    g.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default from ${WORKERS_ENV} or 1)")

    t = sub.add_parser("train", help="train models on a generated dataset")
    common(t)
    t.add_argument("--kind", default="all",
                   help="joint, single:<param>, or all (default)")

    e = sub.add_parser("eval", help="evaluate checkpoints on the test split")
    common(e)

    i = sub.add_parser("infer", help="estimate impairments for one waveform file")
    common(i)
    i.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    i.add_argument("waveform", help="little-endian interleaved float32 I/Q file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed_override,
                          output_dir=args.output_dir, desk_scale=args.desk_scale)
        if args.command == "generate":
            workers = args.workers
            if workers is None:
                workers = int(os.environ.get(WORKERS_ENV, "1"))
            return cmd_generate(cfg, max(1, workers))
        if args.command == "train":
            return cmd_train(cfg, args.kind)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "infer":
            return cmd_infer(cfg, args.checkpoint, args.waveform)
        raise CliError(f"unknown command {args.command!r}")
    except (CliError, ds.DatasetError, nn.CheckpointError, SyncError, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def console_main():
    raise SystemExit(main())


if __name__ == "__main__":
    console_main()
