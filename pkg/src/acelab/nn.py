"""Minimal feed-forward classifier engine.

Plain fully-connected stacks with ReLU hidden layers and identity logits,
exact reverse-mode gradients with respect to the *input*, inverted dropout,
and seeded mini-batch SGD. Everything is float64: the finite-difference
checks this package leans on are not reliable in 32-bit.

Conventions fixed here and relied on elsewhere:
  * ReLU subgradient at exactly 0 is 0.
  * argmax ties break toward the smallest index (np.argmax already does).
  * dropout divides by the keep-probability at sample time, so a
    dropout-disabled pass needs no rescaling.

The ``stack_*`` functions operate on bare (specs, weights, biases) triples
so other stacks (e.g. a backbone that ends in ReLU) can reuse the same
forward/backward code path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, TrainingError
from .rng import RngState

logger = logging.getLogger(__name__)

_ACTIVATIONS = ("relu", "identity")


def as_tensor(values) -> np.ndarray:
    """Coerce to a float64 array and reject non-finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("tensor contains non-finite entries")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise DimensionError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")
        if self.activation not in _ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise DomainError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def mlp_specs(in_dim: int, hidden: Sequence[int], class_count: int,
              dropout_rate: float = 0.0) -> tuple[LayerSpec, ...]:
    """Standard stack: ReLU hidden layers (with dropout), identity logits."""
    dims = [in_dim, *hidden, class_count]
    specs = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        specs.append(LayerSpec(
            in_dim=dims[i],
            out_dim=dims[i + 1],
            activation="identity" if last else "relu",
            dropout_rate=0.0 if last else dropout_rate,
        ))
    return tuple(specs)


def validate_stack(specs: Sequence[LayerSpec], weights, biases) -> tuple[tuple, tuple]:
    """Check dims chain and shapes match; return frozen copies of the arrays."""
    if not specs:
        raise DimensionError("a stack needs at least one layer")
    for a, b in zip(specs, specs[1:]):
        if a.out_dim != b.in_dim:
            raise DimensionError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
    if len(weights) != len(specs) or len(biases) != len(specs):
        raise DimensionError("one (weight, bias) pair required per layer spec")
    frozen_w, frozen_b = [], []
    for spec, w, b in zip(specs, weights, biases):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.shape != (spec.out_dim, spec.in_dim):
            raise DimensionError(f"weight shape {w.shape} != ({spec.out_dim}, {spec.in_dim})")
        if b.shape != (spec.out_dim,):
            raise DimensionError(f"bias shape {b.shape} != ({spec.out_dim},)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DomainError("non-finite parameters")
        frozen_w.append(_frozen(w))
        frozen_b.append(_frozen(b))
    return tuple(frozen_w), tuple(frozen_b)


@dataclass(frozen=True)
class NetworkParams:
    """Weights/biases of a fixed-topology classifier. Immutable once built."""

    specs: tuple[LayerSpec, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    class_count: int

    def __post_init__(self) -> None:
        frozen_w, frozen_b = validate_stack(self.specs, self.weights, self.biases)
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "weights", frozen_w)
        object.__setattr__(self, "biases", frozen_b)
        if self.specs[-1].activation != "identity":
            raise DomainError("final layer must produce raw logits (identity activation)")
        if self.class_count != self.specs[-1].out_dim:
            raise DimensionError(
                f"class_count {self.class_count} != final out_dim {self.specs[-1].out_dim}")

    @property
    def input_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def has_dropout(self) -> bool:
        return any(s.dropout_rate > 0.0 for s in self.specs)


@dataclass(frozen=True)
class ForwardTrace:
    """Everything needed to replay one forward pass bit-exactly.

    Arrays are shaped (batch, dim); a single-sample pass is a batch of one.
    ``masks[i]`` is None for layers that applied no dropout.
    """

    x: np.ndarray
    pre_activations: tuple[np.ndarray, ...]
    post_activations: tuple[np.ndarray, ...]
    masks: tuple[np.ndarray | None, ...]
    logits: np.ndarray


def draw_masks(specs: Sequence[LayerSpec], batch: int,
               gen: np.random.Generator) -> tuple[np.ndarray | None, ...]:
    """Inverted-dropout masks, one row per batch element. None where rate is 0."""
    masks: list[np.ndarray | None] = []
    for spec in specs:
        if spec.dropout_rate > 0.0:
            keep = 1.0 - spec.dropout_rate
            masks.append((gen.random((batch, spec.out_dim)) < keep).astype(np.float64) / keep)
        else:
            masks.append(None)
    return tuple(masks)


def stack_forward(specs, weights, biases, X: np.ndarray,
                  masks: Sequence[np.ndarray | None] | None = None):
    """Run a layer stack on a (batch, in_dim) matrix; returns (pre, post) lists."""
    pre, post = [], []
    h = X
    for i, spec in enumerate(specs):
        z = h @ weights[i].T + biases[i]
        a = np.maximum(z, 0.0) if spec.activation == "relu" else z
        if masks is not None and masks[i] is not None:
            a = a * masks[i]
        pre.append(z)
        post.append(a)
        h = a
    return pre, post


def stack_input_grad(specs, weights, pre, masks, dout: np.ndarray) -> np.ndarray:
    """Back-propagate an output gradient through a stack to its input."""
    g = dout
    for i in range(len(specs) - 1, -1, -1):
        if masks is not None and masks[i] is not None:
            g = g * masks[i]
        if specs[i].activation == "relu":
            g = g * (pre[i] > 0.0)
        g = g @ weights[i]
    return g


def stack_param_grads(specs, weights, X, pre, post, masks, dout: np.ndarray):
    """Parameter gradients (dW, db) for a batch, plus the input gradient."""
    g = dout
    dW = [None] * len(specs)
    db = [None] * len(specs)
    for i in range(len(specs) - 1, -1, -1):
        if masks is not None and masks[i] is not None:
            g = g * masks[i]
        if specs[i].activation == "relu":
            g = g * (pre[i] > 0.0)
        h_prev = X if i == 0 else post[i - 1]
        dW[i] = g.T @ h_prev
        db[i] = np.sum(g, axis=0)
        g = g @ weights[i]
    return dW, db, g


def forward_batch(params: NetworkParams, X: np.ndarray,
                  masks: Sequence[np.ndarray | None] | None = None) -> ForwardTrace:
    """Run the network on a (batch, in_dim) matrix, recording the trace."""
    X = as_tensor(X)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise DimensionError(f"expected input of shape (batch, {params.input_dim}), got {X.shape}")
    if masks is not None and len(masks) != len(params.specs):
        raise DimensionError("one mask slot per layer required")
    pre, post = stack_forward(params.specs, params.weights, params.biases, X, masks)
    return ForwardTrace(
        x=X,
        pre_activations=tuple(pre),
        post_activations=tuple(post),
        masks=tuple(masks) if masks is not None else (None,) * len(params.specs),
        logits=post[-1],
    )


def forward(params: NetworkParams, x: np.ndarray, dropout_enabled: bool = False,
            rng: RngState | None = None) -> tuple[np.ndarray, ForwardTrace]:
    """Single-sample forward pass.

    With ``dropout_enabled`` and any positive dropout rate, ``rng`` is required
    and the drawn masks are recorded in the trace for exact gradient replay.
    The dropout-disabled pass is a pure function of (params, x).
    """
    x = as_tensor(x)
    if x.shape != (params.input_dim,):
        raise DimensionError(f"expected input of shape ({params.input_dim},), got {x.shape}")
    masks = None
    if dropout_enabled and params.has_dropout:
        if rng is None:
            raise DomainError("rng required for a dropout-enabled pass with positive rates")
        masks = draw_masks(params.specs, 1, rng.generator())
    trace = forward_batch(params, x[None, :], masks)
    return trace.logits[0], trace


def replay_forward(params: NetworkParams, trace: ForwardTrace) -> np.ndarray:
    """Re-run the traced pass (same masks); reproduces trace.logits bit-exactly."""
    return forward_batch(params, trace.x, trace.masks).logits


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis (max-subtraction before exp)."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("non-finite logits")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def predict(params: NetworkParams, x: np.ndarray) -> int:
    """Argmax label of the dropout-disabled pass; ties go to the lowest index."""
    logits, _ = forward(params, x, dropout_enabled=False)
    return int(np.argmax(logits))


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-ln p[label], with the probability clamped at 1e-12 before the log."""
    probs = np.asarray(probs, dtype=np.float64)
    if not (0 <= label < probs.shape[-1]):
        raise DomainError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(float(probs[label]), 1e-12)))


def backprop_input(params: NetworkParams, trace: ForwardTrace,
                   dlogits: np.ndarray) -> np.ndarray:
    """Propagate a (batch, class_count) logits gradient back to the input.

    Uses the traced pre-activations and masks, so the differentiated function
    is exactly the sampled one. ReLU uses subgradient 0 at 0.
    """
    g = np.asarray(dlogits, dtype=np.float64)
    if g.shape != trace.logits.shape:
        raise DimensionError(f"dlogits shape {g.shape} != logits shape {trace.logits.shape}")
    return stack_input_grad(params.specs, params.weights, trace.pre_activations,
                            trace.masks, g)


# Head selectors: each names one scalar of a forward pass to differentiate.

@dataclass(frozen=True)
class SoftmaxProbHead:
    """Softmax probability of one class."""
    class_index: int


@dataclass(frozen=True)
class NegEntropyHead:
    """Negated Shannon entropy of the softmax output (higher = more peaked)."""


def _head_dlogits(head, logits: np.ndarray) -> np.ndarray:
    probs = softmax(logits)
    if isinstance(head, SoftmaxProbHead):
        k = probs.shape[-1]
        if not (0 <= head.class_index < k):
            raise DomainError(f"head class {head.class_index} out of range for {k} classes")
        p = probs[..., head.class_index:head.class_index + 1]
        grad = -p * probs
        grad[..., head.class_index] += p[..., 0]
        return grad
    if isinstance(head, NegEntropyHead):
        # d/dz of sum(p ln p) = J_softmax^T (ln p + 1) = p * (v - p.v)
        v = np.log(probs) + 1.0
        inner = np.sum(probs * v, axis=-1, keepdims=True)
        return probs * (v - inner)
    raise DomainError(f"unknown head selector {head!r}")


def head_value(head, logits: np.ndarray) -> float:
    """The scalar a head selects from a single logits vector."""
    probs = softmax(logits)
    if isinstance(head, SoftmaxProbHead):
        if not (0 <= head.class_index < probs.shape[-1]):
            raise DomainError(f"head class {head.class_index} out of range")
        return float(probs[head.class_index])
    if isinstance(head, NegEntropyHead):
        return float(np.sum(probs * np.log(probs)))
    raise DomainError(f"unknown head selector {head!r}")


def input_gradient(params: NetworkParams, x: np.ndarray, head,
                   dropout_replay: ForwardTrace | None = None) -> np.ndarray:
    """Exact gradient of the head's scalar with respect to the input.

    When ``dropout_replay`` is given, its masks are reused so the gradient is
    of the exact sampled function; otherwise a fresh deterministic pass runs.
    """
    x = as_tensor(x)
    if dropout_replay is not None:
        trace = dropout_replay
        if trace.x.shape != (1, x.shape[0]) or not np.array_equal(trace.x[0], x):
            raise DimensionError("dropout_replay trace does not correspond to x")
    else:
        _, trace = forward(params, x, dropout_enabled=False)
    dlogits = _head_dlogits(head, trace.logits)
    return backprop_input(params, trace, dlogits)[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int
    momentum: float = 0.0


def init_params(specs: Sequence[LayerSpec], rng: RngState) -> NetworkParams:
    """Uniform fan-based init: W ~ U[-a, a], a = sqrt(6/(in+out)); zero biases."""
    weights, biases = init_stack(specs, rng.generator())
    return NetworkParams(tuple(specs), weights, biases, class_count=specs[-1].out_dim)


def init_stack(specs: Sequence[LayerSpec], gen: np.random.Generator):
    weights, biases = [], []
    for spec in specs:
        a = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        weights.append(gen.uniform(-a, a, size=(spec.out_dim, spec.in_dim)))
        biases.append(np.zeros(spec.out_dim))
    return tuple(weights), tuple(biases)


def train_sgd(specs: Sequence[LayerSpec], data, cfg: TrainConfig) -> NetworkParams:
    """Mini-batch SGD with mean cross-entropy loss, optional momentum.

    Deterministic given (specs, data, cfg). Dropout (where the specs request
    it) is active during training with masks drawn from a dedicated stream.
    Raises TrainingError naming the epoch if the loss goes non-finite.
    """
    X = as_tensor(data.features)
    y = np.asarray(data.labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DimensionError("training data must be a non-empty (n, d) matrix")
    if X.shape[0] != y.shape[0]:
        raise DimensionError("features and labels disagree on sample count")
    specs = tuple(specs)
    if X.shape[1] != specs[0].in_dim:
        raise DimensionError(f"data has {X.shape[1]} features, first layer expects {specs[0].in_dim}")

    master = RngState(cfg.seed)
    params = init_params(specs, master)            # counter 0: init
    shuffle_gen = master.advance(1).generator()    # counter 1: epoch shuffles
    dropout_gen = master.advance(2).generator()    # counter 2: dropout masks

    weights = [np.array(w) for w in params.weights]
    biases = [np.array(b) for b in params.biases]
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    n = X.shape[0]
    use_dropout = any(s.dropout_rate > 0.0 for s in specs)

    for epoch in range(cfg.epochs):
        order = shuffle_gen.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            masks = draw_masks(specs, len(idx), dropout_gen) if use_dropout else None
            pre, post = stack_forward(specs, weights, biases, xb, masks)
            if not np.all(np.isfinite(post[-1])):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            probs = softmax(post[-1])
            loss = float(np.mean(-np.log(np.maximum(probs[np.arange(len(idx)), yb], 1e-12))))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            dlogits = probs.copy()
            dlogits[np.arange(len(idx)), yb] -= 1.0
            dlogits /= len(idx)
            dW, db, _ = stack_param_grads(specs, weights, xb, pre, post, masks, dlogits)
            for i in range(len(specs)):
                vel_w[i] = cfg.momentum * vel_w[i] - cfg.learning_rate * dW[i]
                vel_b[i] = cfg.momentum * vel_b[i] - cfg.learning_rate * db[i]
                weights[i] = weights[i] + vel_w[i]
                biases[i] = biases[i] + vel_b[i]

    if not all(np.all(np.isfinite(w)) for w in weights):
        raise TrainingError(f"non-finite parameters after epoch {cfg.epochs - 1}")
    final = NetworkParams(specs, tuple(weights), tuple(biases), specs[-1].out_dim)
    logits = forward_batch(final, X).logits
    train_acc = float(np.mean(np.argmax(logits, axis=1) == y))
    logger.info("train_sgd: %d epochs, final training accuracy %.4f", cfg.epochs, train_acc)
    return final
