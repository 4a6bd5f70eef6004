"""Dense networks built on numpy: a shared-trunk multi-head regressor, a
single-output baseline, reverse-mode gradients, Adam, and checkpoint I/O.

All arithmetic runs in float64 so gradient checks against central finite
differences are meaningful and training trajectories are reproducible to
the bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

TRUNK_WIDTH = 128
BRANCH_WIDTHS = (64, 32, 16, 1)
N_TASKS = 6

MAGIC = b"RFMLP001"
VERSION = 1
_KIND_CODES = {"joint": 0, "single": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class CheckpointError(Exception):
    """Base class for checkpoint file problems."""


class BadCheckpointMagic(CheckpointError):
    pass


class CheckpointVersionMismatch(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class CheckpointDigestMismatch(CheckpointError):
    pass


@dataclass
class DenseLayer:
    """Fully connected layer; weights are (fan_out, fan_in)."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str  # "relu" or "linear"

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class MultiTaskMlp:
    """Shared trunk feeding one small output chain per estimated parameter."""

    trunk: DenseLayer
    branches: list
    input_len: int


@dataclass
class SingleTaskMlp:
    """Plain chain with one scalar output."""

    layers: list
    input_len: int


@dataclass
class AdamState:
    """First/second-moment accumulators shaped like the parameters."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    _scratch: np.ndarray | None = field(default=None, repr=False, compare=False)


def _init_layer(rng, fan_in, fan_out, activation):
    # He-style: zero-mean Gaussian with variance 2/fan_in, zero biases.
    w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
    return DenseLayer(weights=w, biases=np.zeros(fan_out), activation=activation)


def init_model(input_len: int, kind: str, seed: int,
               trunk_width: int = TRUNK_WIDTH,
               branch_widths: tuple = BRANCH_WIDTHS,
               n_tasks: int = N_TASKS):
    """Build a freshly initialized model, deterministic given the seed."""
    if input_len < 1:
        raise ValueError("input_len must be >= 1")
    if kind not in _KIND_CODES:
        raise ValueError(f"kind must be one of {sorted(_KIND_CODES)}, got {kind!r}")
    if branch_widths[-1] != 1:
        raise ValueError("the last branch width must be 1 (scalar head)")
    rng = np.random.default_rng(seed)
    trunk = _init_layer(rng, input_len, trunk_width, "relu")
    if kind == "single":
        layers = [trunk]
        fan_in = trunk_width
        for i, width in enumerate(branch_widths):
            act = "linear" if i == len(branch_widths) - 1 else "relu"
            layers.append(_init_layer(rng, fan_in, width, act))
            fan_in = width
        return SingleTaskMlp(layers=layers, input_len=input_len)
    branches = []
    for _ in range(n_tasks):
        chain = []
        fan_in = trunk_width
        for i, width in enumerate(branch_widths):
            act = "linear" if i == len(branch_widths) - 1 else "relu"
            chain.append(_init_layer(rng, fan_in, width, act))
            fan_in = width
        branches.append(chain)
    return MultiTaskMlp(trunk=trunk, branches=branches, input_len=input_len)


def iter_layers(model) -> list:
    """All layers in a fixed order (trunk first, then branch by branch)."""
    if isinstance(model, MultiTaskMlp):
        out = [model.trunk]
        for chain in model.branches:
            out.extend(chain)
        return out
    return list(model.layers)


def model_kind(model) -> str:
    return "joint" if isinstance(model, MultiTaskMlp) else "single"


def count_params(model) -> int:
    """Exact number of weight and bias entries."""
    return sum(layer.weights.size + layer.biases.size for layer in iter_layers(model))


def _layer_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    z = x @ layer.weights.T + layer.biases
    if layer.activation == "relu":
        return np.maximum(z, 0.0)
    return z


def forward(model, batch: np.ndarray) -> np.ndarray:
    """Predict a (batch, n_outputs) matrix; trunk activations are shared."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_len:
        raise ValueError(f"expected inputs of shape (n, {model.input_len}), got {x.shape}")
    if isinstance(model, MultiTaskMlp):
        h = _layer_forward(model.trunk, x)
        outs = []
        for chain in model.branches:
            a = h
            for layer in chain:
                a = _layer_forward(layer, a)
            outs.append(a)
        return np.concatenate(outs, axis=1)
    a = x
    for layer in model.layers:
        a = _layer_forward(layer, a)
    return a


def _chain_backward(chain, activations, delta, need_input_delta: bool = True):
    """Backprop a layer chain; returns per-layer grads and the input delta.

    ``activations[i]`` is the input to ``chain[i]``; ``delta`` is the loss
    gradient at the chain output (post-activation). The gradient with
    respect to the chain input is skipped when the caller does not need it,
    which matters for the wide first layer.
    """
    grads = [None] * len(chain)
    for i in range(len(chain) - 1, -1, -1):
        layer = chain[i]
        a_in = activations[i]
        if layer.activation == "relu":
            delta = delta * (activations[i + 1] > 0.0)
        grads[i] = (delta.T @ a_in, delta.sum(axis=0))
        if i > 0 or need_input_delta:
            delta = delta @ layer.weights
    return grads, delta


def loss_and_grads(model, batch: np.ndarray, labels: np.ndarray):
    """Mean squared error over batch entries and tasks, with gradients.

    Gradients come back as a list of (dW, db) pairs in :func:`iter_layers`
    order.
    """
    x = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"batch and labels disagree: {n} vs {y.shape[0]} rows")

    if isinstance(model, MultiTaskMlp):
        if y.shape[1] != len(model.branches):
            raise ValueError(f"expected {len(model.branches)} label columns, got {y.shape[1]}")
        trunk_acts = [x, _layer_forward(model.trunk, x)]
        h = trunk_acts[1]
        branch_acts = []
        preds = []
        for chain in model.branches:
            acts = [h]
            for layer in chain:
                acts.append(_layer_forward(layer, acts[-1]))
            branch_acts.append(acts)
            preds.append(acts[-1])
        pred = np.concatenate(preds, axis=1)
        err = pred - y
        loss = float(np.mean(err ** 2))
        dpred = 2.0 * err / err.size

        grads_branches = []
        dh = np.zeros_like(h)
        for k, chain in enumerate(model.branches):
            g, dins = _chain_backward(chain, branch_acts[k], dpred[:, k: k + 1])
            grads_branches.append(g)
            dh = dh + dins
        g_trunk, _ = _chain_backward([model.trunk], trunk_acts, dh,
                                     need_input_delta=False)
        grads = list(g_trunk)
        for g in grads_branches:
            grads.extend(g)
        return loss, grads

    if y.shape[1] != 1:
        raise ValueError(f"single-task model expects 1 label column, got {y.shape[1]}")
    acts = [x]
    for layer in model.layers:
        acts.append(_layer_forward(layer, acts[-1]))
    err = acts[-1] - y
    loss = float(np.mean(err ** 2))
    dpred = 2.0 * err / err.size
    grads, _ = _chain_backward(model.layers, acts, dpred, need_input_delta=False)
    return loss, list(grads)


def init_adam(model, lr: float = 1e-5, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> AdamState:
    layers = iter_layers(model)
    return AdamState(
        m=[(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in layers],
        v=[(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in layers],
        step=0, lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
    )


def adam_step(model, grads, state: AdamState):
    """One bias-corrected Adam update; mutates model and state in place."""
    layers = iter_layers(model)
    if len(grads) != len(layers):
        raise ValueError(f"got {len(grads)} gradient pairs for {len(layers)} layers")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    if state._scratch is None or state._scratch.size < max(l.weights.size for l in layers):
        state._scratch = np.empty(max(l.weights.size for l in layers))
    for i, layer in enumerate(layers):
        for j, (param, grad) in enumerate(((layer.weights, grads[i][0]),
                                           (layer.biases, grads[i][1]))):
            m = state.m[i][j]
            v = state.v[i][j]
            s = state._scratch[: param.size].reshape(param.shape)
            m *= b1
            np.multiply(grad, 1.0 - b1, out=s)
            m += s
            v *= b2
            np.multiply(grad, grad, out=s)
            s *= 1.0 - b2
            v += s
            np.multiply(v, 1.0 / c2, out=s)
            np.sqrt(s, out=s)
            s += state.epsilon
            np.divide(m, s, out=s)
            s *= state.lr / c1
            param -= s
    return model, state


def _widths_of(model) -> tuple:
    if isinstance(model, MultiTaskMlp):
        return (model.trunk.fan_out,) + tuple(l.fan_out for l in model.branches[0])
    return tuple(l.fan_out for l in model.layers)


def save_checkpoint(model, state: AdamState, path, normalizer: float = 1.0,
                    config_digest: bytes = bytes(32)):
    """Write model and optimizer state losslessly (float64 tensors)."""
    if len(config_digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    widths = _widths_of(model)
    head = [MAGIC,
            struct.pack("<I", VERSION),
            struct.pack("<B", _KIND_CODES[model_kind(model)]),
            struct.pack("<I", model.input_len),
            struct.pack("<I", len(widths))]
    head.extend(struct.pack("<I", w) for w in widths)
    head.append(struct.pack("<d", normalizer))
    head.append(config_digest)
    head.append(struct.pack("<Q", state.step))
    head.append(struct.pack("<4d", state.lr, state.beta1, state.beta2, state.epsilon))
    with open(path, "wb") as f:
        f.write(b"".join(head))
        for layer in iter_layers(model):
            f.write(layer.weights.astype("<f8").tobytes())
            f.write(layer.biases.astype("<f8").tobytes())
        for acc in (state.m, state.v):
            for mw, mb in acc:
                f.write(mw.astype("<f8").tobytes())
                f.write(mb.astype("<f8").tobytes())


def load_checkpoint(path, expected_digest: bytes | None = None):
    """Read a checkpoint back; returns (model, state, normalizer, digest)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 21:
        raise TruncatedCheckpoint(f"{path}: shorter than the fixed header")
    if blob[:8] != MAGIC:
        raise BadCheckpointMagic(f"{path}: bad magic {blob[:8]!r}")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != VERSION:
        raise CheckpointVersionMismatch(f"{path}: version {version}, expected {VERSION}")
    (kind_code,) = struct.unpack_from("<B", blob, 12)
    (input_len,) = struct.unpack_from("<I", blob, 13)
    (n_widths,) = struct.unpack_from("<I", blob, 17)
    off = 21
    if len(blob) < off + 4 * n_widths + 8 + 32 + 8 + 32:
        raise TruncatedCheckpoint(f"{path}: header truncated")
    widths = struct.unpack_from(f"<{n_widths}I", blob, off)
    off += 4 * n_widths
    (normalizer,) = struct.unpack_from("<d", blob, off)
    off += 8
    digest = blob[off: off + 32]
    off += 32
    (step,) = struct.unpack_from("<Q", blob, off)
    off += 8
    lr, beta1, beta2, epsilon = struct.unpack_from("<4d", blob, off)
    off += 32
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointDigestMismatch(
            f"{path}: checkpoint was trained under a different configuration"
        )

    kind = _KIND_NAMES.get(kind_code)
    if kind is None:
        raise CheckpointError(f"{path}: unknown model kind code {kind_code}")
    model = init_model(input_len, kind, seed=0,
                       trunk_width=widths[0], branch_widths=tuple(widths[1:]))

    def take(shape):
        nonlocal off
        n = int(np.prod(shape)) * 8
        if off + n > len(blob):
            raise TruncatedCheckpoint(f"{path}: tensor body truncated")
        arr = np.frombuffer(blob, dtype="<f8", count=int(np.prod(shape)), offset=off)
        off += n
        return arr.reshape(shape).copy()

    layers = iter_layers(model)
    for layer in layers:
        layer.weights = take(layer.weights.shape)
        layer.biases = take(layer.biases.shape)
    state = AdamState(m=[], v=[], step=step, lr=lr, beta1=beta1, beta2=beta2,
                      epsilon=epsilon)
    for acc in (state.m, state.v):
        for layer in layers:
            acc.append((take(layer.weights.shape), take(layer.biases.shape)))
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return model, state, normalizer, digest
