"""Training loop with convergence checking and lr-halving retuning, plus
the per-parameter MSE-versus-SNR evaluation suite and table export."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .impairments import ImpairmentRanges, PARAM_NAMES
from .neuralnet import (AdamState, MultiTaskMlp, adam_step, forward, init_adam,
                        init_model, loss_and_grads)

EVAL_BATCH = 512


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 40
    lr: float = 1e-5
    shuffle_seed: int = 0
    convergence_gap: float = 0.10
    max_retuning_rounds: int = 3

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class LossHistory:
    """Per-epoch (train_loss, val_loss) pairs."""

    entries: list = field(default_factory=list)

    @property
    def train(self) -> list:
        return [t for t, _ in self.entries]

    @property
    def val(self) -> list:
        return [v for _, v in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class RetuneResult:
    model: object
    history: LossHistory
    rounds_used: int
    converged: bool
    final_lr: float
    state: AdamState | None = None


@dataclass(frozen=True)
class EvalEntry:
    model: str
    parameter: str
    snr_db: float
    mse: float


@dataclass
class EvalReport:
    entries: list
    references: dict


def _dataset_loss(model, inputs, labels) -> float:
    total = 0.0
    n = inputs.shape[0]
    for start in range(0, n, EVAL_BATCH):
        x = inputs[start:start + EVAL_BATCH].astype(np.float64)
        y = labels[start:start + EVAL_BATCH]
        err = forward(model, x) - (y[:, None] if y.ndim == 1 else y)
        total += float(np.sum(err ** 2))
    return total / (n * (labels.shape[1] if labels.ndim == 2 else 1))


def train(model, train_set, val_set, cfg: TrainConfig, state: AdamState | None = None):
    """Mini-batch Adam over seeded shuffles; one validation pass per epoch.

    ``train_set`` and ``val_set`` are (inputs, labels) pairs. The reported
    train loss is the running mean over the epoch's batches; validation is
    forward-only. Returns the trained model and the loss history; the
    optimizer state (fresh unless passed in) is mutated in place.
    """
    x_train, y_train = train_set
    x_val, y_val = val_set
    if y_train.ndim == 1:
        y_train = y_train[:, None]
    if y_val.ndim == 1:
        y_val = y_val[:, None]
    if x_train.shape[1] != model.input_len:
        raise ValueError(
            f"dataset input width {x_train.shape[1]} != model input {model.input_len}"
        )
    if state is None:
        state = init_adam(model, lr=cfg.lr)
    rng = np.random.default_rng(cfg.shuffle_seed)
    n = x_train.shape[0]
    history = LossHistory()
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_sq = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, x_train[idx].astype(np.float64), y_train[idx])
            adam_step(model, grads, state)
            epoch_sq += loss * idx.size
        train_loss = epoch_sq / n
        val_loss = _dataset_loss(model, x_val, y_val)
        history.entries.append((train_loss, val_loss))
    return model, history


def converged(history: LossHistory, cfg: TrainConfig) -> bool:
    """Final validation loss close to the train loss and not rising.

    True iff the last val loss is within ``convergence_gap`` of the last
    train loss and the val loss did not increase over the final quarter of
    the epochs.
    """
    if len(history) == 0:
        raise ValueError("history is empty")
    train_last, val_last = history.entries[-1]
    if val_last > (1.0 + cfg.convergence_gap) * train_last:
        return False
    quarter = max(1, len(history) // 4)
    ref = history.val[max(0, len(history) - 1 - quarter)]
    return val_last <= ref


def retune_loop(train_set, val_set, cfg: TrainConfig, kind: str = "joint",
                init_seed: int = 0) -> RetuneResult:
    """Train, and on non-convergence halve the learning rate and retrain.

    At most ``max_retuning_rounds`` retries after the first round. Returns
    the first converged model, or the last attempt flagged as not
    converged.
    """
    lr = cfg.lr
    input_len = train_set[0].shape[1]
    model, history, state = None, None, None
    rounds = 0
    for _ in range(cfg.max_retuning_rounds + 1):
        model = init_model(input_len, kind, seed=init_seed)
        state = init_adam(model, lr=lr)
        model, history = train(model, train_set, val_set, replace(cfg, lr=lr), state=state)
        rounds += 1
        if len(history) > 0 and converged(history, cfg):
            return RetuneResult(model, history, rounds, True, lr, state)
        lr = lr / 2.0
    return RetuneResult(model, history, rounds, False, lr * 2.0, state)


def mean_predictor_references(ranges: ImpairmentRanges) -> dict:
    """MSE of always predicting the prior mean: the uniform-range variance."""
    refs = {}
    for name in PARAM_NAMES:
        lo, hi = ranges.bounds(name)
        refs[name] = (hi - lo) ** 2 / 12.0
    return refs


def _predict(model, inputs) -> np.ndarray:
    chunks = [forward(model, inputs[s:s + EVAL_BATCH].astype(np.float64))
              for s in range(0, inputs.shape[0], EVAL_BATCH)]
    return np.concatenate(chunks, axis=0)


def evaluate(joint_model, single_models: dict, test_set, ranges: ImpairmentRanges,
             snr_grid=None) -> EvalReport:
    """Per-parameter MSE inside each SNR bucket for both model families.

    ``single_models`` maps parameter name to its dedicated model;
    ``test_set`` is (inputs, labels, snr_db). Buckets named by ``snr_grid``
    (defaults to the SNRs present) must all be populated.
    """
    inputs, labels, snr = test_set
    if snr_grid is None:
        snr_grid = sorted(float(s) for s in np.unique(snr))
    pred_joint = _predict(joint_model, inputs)
    pred_single = {}
    for k, name in enumerate(PARAM_NAMES):
        if name not in single_models:
            raise KeyError(f"missing single-task model for parameter {name!r}")
        pred_single[name] = _predict(single_models[name], inputs)[:, 0]

    entries = []
    for snr_db in snr_grid:
        mask = snr == snr_db
        if not mask.any():
            raise ValueError(f"no test records in the {snr_db} dB bucket")
        for k, name in enumerate(PARAM_NAMES):
            err_j = pred_joint[mask, k] - labels[mask, k]
            entries.append(EvalEntry("joint", name, float(snr_db),
                                     float(np.mean(err_j ** 2))))
            err_s = pred_single[name][mask] - labels[mask, k]
            entries.append(EvalEntry("single", name, float(snr_db),
                                     float(np.mean(err_s ** 2))))
    return EvalReport(entries=entries, references=mean_predictor_references(ranges))


def export_report(report: EvalReport | None, history: LossHistory | None,
                  path_prefix) -> tuple:
    """Write the MSE table and the loss history as CSV files.

    Returns (mse_path, loss_path). Mean-predictor reference rows carry
    ``mean_predictor`` in the model column and ``all`` in the SNR column.
    """
    prefix = str(path_prefix)
    mse_path = Path(prefix + "mse_vs_snr.csv")
    loss_path = Path(prefix + "loss_history.csv")

    with open(mse_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["model", "parameter", "snr_db", "mse"])
        if report is not None:
            for e in report.entries:
                w.writerow([e.model, e.parameter, repr(e.snr_db), repr(e.mse)])
            for name in PARAM_NAMES:
                w.writerow(["mean_predictor", name, "all", repr(report.references[name])])

    with open(loss_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_loss"])
        if history is not None:
            for i, (t, v) in enumerate(history.entries):
                w.writerow([i, repr(t), repr(v)])

    return mse_path, loss_path
