"""Three-head selective classifier: shared backbone, prediction head,
sigmoid selector head, and an auxiliary classification head used only
during training.

The training loss on each batch mixes a coverage-constrained selective
risk with a plain auxiliary cross-entropy:

    L_sel = sum(ce_i * sel_i) / sum(sel_i)
            + lam * max(0, c - mean(sel))**2
    L     = alpha * L_sel + (1 - alpha) * mean(ce_aux)

where c is the target coverage. After training, a threshold on the
selector can be calibrated against a validation split to hit the largest
empirical coverage not exceeding a requested one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, TrainingError
from .nn import (LayerSpec, TrainConfig, as_tensor, draw_masks, init_stack, softmax,
                 stack_forward, stack_input_grad, stack_param_grads, validate_stack)
from .rng import RngState

logger = logging.getLogger(__name__)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class SelNetParams:
    """Backbone plus three heads; the selector ends in a single sigmoid unit."""

    backbone_specs: tuple[LayerSpec, ...]
    backbone_weights: tuple[np.ndarray, ...]
    backbone_biases: tuple[np.ndarray, ...]
    pred_weight: np.ndarray
    pred_bias: np.ndarray
    selector_specs: tuple[LayerSpec, ...]
    selector_weights: tuple[np.ndarray, ...]
    selector_biases: tuple[np.ndarray, ...]
    aux_weight: np.ndarray
    aux_bias: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        bw, bb = validate_stack(self.backbone_specs, self.backbone_weights, self.backbone_biases)
        sw, sb = validate_stack(self.selector_specs, self.selector_weights, self.selector_biases)
        object.__setattr__(self, "backbone_weights", bw)
        object.__setattr__(self, "backbone_biases", bb)
        object.__setattr__(self, "selector_weights", sw)
        object.__setattr__(self, "selector_biases", sb)
        feat = self.backbone_specs[-1].out_dim
        if self.selector_specs[0].in_dim != feat:
            raise DimensionError("selector head does not consume the backbone output")
        if self.selector_specs[-1].out_dim != 1:
            raise DimensionError("selector head must end in a single unit")
        for name, w, b, rows in (("prediction", self.pred_weight, self.pred_bias, self.class_count),
                                 ("auxiliary", self.aux_weight, self.aux_bias, self.class_count)):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.shape != (rows, feat) or b.shape != (rows,):
                raise DimensionError(f"{name} head shapes do not match ({rows}, {feat})")
        object.__setattr__(self, "pred_weight", _own(self.pred_weight))
        object.__setattr__(self, "pred_bias", _own(self.pred_bias))
        object.__setattr__(self, "aux_weight", _own(self.aux_weight))
        object.__setattr__(self, "aux_bias", _own(self.aux_bias))

    @property
    def input_dim(self) -> int:
        return self.backbone_specs[0].in_dim

    @property
    def has_dropout(self) -> bool:
        return any(s.dropout_rate > 0.0 for s in self.backbone_specs)


def _own(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SelNetTrainConfig:
    sgd: TrainConfig
    target_coverage: float = 0.7
    constraint_weight: float = 32.0
    aux_mix: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.target_coverage <= 1.0):
            raise ConfigError("target_coverage must be in (0, 1]")
        if self.constraint_weight <= 0.0:
            raise ConfigError("constraint_weight must be positive")
        if not (0.0 <= self.aux_mix <= 1.0):
            raise ConfigError("aux_mix must be in [0, 1]")


def selnet_specs(in_dim: int, hidden, class_count: int,
                 selector_hidden: int = 16, dropout_rate: float = 0.0):
    """Backbone ending in a ReLU feature layer, plus a 2-layer selector stack."""
    dims = [in_dim, *hidden]
    backbone = tuple(
        LayerSpec(dims[i], dims[i + 1], "relu", dropout_rate)
        for i in range(len(dims) - 1)
    )
    feat = dims[-1]
    selector = (LayerSpec(feat, selector_hidden, "relu", 0.0),
                LayerSpec(selector_hidden, 1, "identity", 0.0))
    return backbone, selector, feat, class_count


def _forward_all(params: SelNetParams, X: np.ndarray, masks=None):
    """Batched forward through backbone and all three heads."""
    pre_b, post_b = stack_forward(params.backbone_specs, params.backbone_weights,
                                  params.backbone_biases, X, masks)
    h = post_b[-1]
    pred_logits = h @ params.pred_weight.T + params.pred_bias
    pre_s, post_s = stack_forward(params.selector_specs, params.selector_weights,
                                  params.selector_biases, h)
    sel = sigmoid(post_s[-1][:, 0])
    aux_logits = h @ params.aux_weight.T + params.aux_bias
    return pre_b, post_b, pred_logits, pre_s, post_s, sel, aux_logits


def selnet_forward(params: SelNetParams, x) -> tuple[np.ndarray, float, np.ndarray]:
    """(prediction softmax, selector value, auxiliary softmax) for one input.

    The auxiliary head plays no role at inference; it is returned for
    inspection only.
    """
    x = as_tensor(x)
    if x.shape != (params.input_dim,):
        raise DimensionError(f"expected input of shape ({params.input_dim},), got {x.shape}")
    _, _, pred_logits, _, _, sel, aux_logits = _forward_all(params, x[None, :])
    return softmax(pred_logits[0]), float(sel[0]), softmax(aux_logits[0])


def selector_input_gradient(params: SelNetParams, x) -> np.ndarray:
    """Exact gradient of the selector value with respect to the input."""
    x = as_tensor(x)
    pre_b, post_b, _, pre_s, post_s, sel, _ = _forward_all(params, x[None, :])
    dz_out = np.array([[sel[0] * (1.0 - sel[0])]])
    dh = stack_input_grad(params.selector_specs, params.selector_weights, pre_s, None, dz_out)
    dx = stack_input_grad(params.backbone_specs, params.backbone_weights, pre_b, None, dh)
    return dx[0]


def pred_softmax_input_gradient(params: SelNetParams, x, label: int) -> np.ndarray:
    """Gradient of the prediction head's softmax response at `label`."""
    x = as_tensor(x)
    if not (0 <= label < params.class_count):
        raise ConfigError(f"label {label} out of range")
    pre_b, post_b, pred_logits, _, _, _, _ = _forward_all(params, x[None, :])
    p = softmax(pred_logits)
    dlogits = -p[:, label:label + 1] * p
    dlogits[:, label] += p[:, label]
    dh = dlogits @ params.pred_weight
    dx = stack_input_grad(params.backbone_specs, params.backbone_weights, pre_b, None, dh)
    return dx[0]


def selnet_train(in_dim: int, hidden, class_count: int, data,
                 cfg: SelNetTrainConfig, selector_hidden: int = 16,
                 dropout_rate: float = 0.0) -> SelNetParams:
    """Train the three heads jointly toward the target coverage.

    Deterministic given the seed. Logs the empirical coverage of the trained
    selector at threshold 0.5 on the training data.
    """
    X = as_tensor(data.features)
    y = np.asarray(data.labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise DimensionError("training data must be non-empty")
    backbone_specs, selector_specs, feat, _ = selnet_specs(
        in_dim, hidden, class_count, selector_hidden, dropout_rate)

    master = RngState(cfg.sgd.seed)
    bw, bb = init_stack(backbone_specs, master.generator())
    head_gen = master.advance(1).generator()
    a_pred = np.sqrt(6.0 / (feat + class_count))
    pw = head_gen.uniform(-a_pred, a_pred, size=(class_count, feat))
    pb = np.zeros(class_count)
    sw, sb = init_stack(selector_specs, master.advance(2).generator())
    aw = head_gen.uniform(-a_pred, a_pred, size=(class_count, feat))
    ab = np.zeros(class_count)
    shuffle_gen = master.advance(3).generator()
    dropout_gen = master.advance(4).generator()

    bw = [np.array(w) for w in bw]
    bb = [np.array(b) for b in bb]
    sw = [np.array(w) for w in sw]
    sb = [np.array(b) for b in sb]
    tensors = bw + bb + sw + sb + [pw, pb, aw, ab]
    velocity = [np.zeros_like(t) for t in tensors]

    n = X.shape[0]
    B_specs = backbone_specs
    use_dropout = any(s.dropout_rate > 0.0 for s in B_specs)
    c, lam, alpha = cfg.target_coverage, cfg.constraint_weight, cfg.aux_mix
    lr, mom = cfg.sgd.learning_rate, cfg.sgd.momentum

    for epoch in range(cfg.sgd.epochs):
        order = shuffle_gen.permutation(n)
        for start in range(0, n, cfg.sgd.batch_size):
            idx = order[start:start + cfg.sgd.batch_size]
            xb, yb = X[idx], y[idx]
            m = len(idx)
            rows = np.arange(m)
            masks = draw_masks(B_specs, m, dropout_gen) if use_dropout else None

            pre_b, post_b = stack_forward(B_specs, bw, bb, xb, masks)
            h = post_b[-1]
            pred_logits = h @ pw.T + pb
            pre_s, post_s = stack_forward(selector_specs, sw, sb, h)
            sel = sigmoid(post_s[-1][:, 0])
            aux_logits = h @ aw.T + ab
            if not (np.all(np.isfinite(pred_logits)) and np.all(np.isfinite(aux_logits))
                    and np.all(np.isfinite(sel))):
                raise TrainingError(f"non-finite selective loss at epoch {epoch}")

            p = softmax(pred_logits)
            pa = softmax(aux_logits)
            ce = -np.log(np.maximum(p[rows, yb], 1e-12))
            ce_aux = -np.log(np.maximum(pa[rows, yb], 1e-12))
            S = float(np.sum(sel))
            sel_risk = float(np.sum(ce * sel) / S)
            shortfall = max(0.0, c - float(np.mean(sel)))
            loss = alpha * (sel_risk + lam * shortfall ** 2) + (1 - alpha) * float(np.mean(ce_aux))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite selective loss at epoch {epoch}")

            # prediction head: ce_i enters weighted by alpha * sel_i / S
            dpred = p.copy()
            dpred[rows, yb] -= 1.0
            dpred *= (alpha * sel / S)[:, None]
            # selector: selective-risk quotient plus the coverage penalty
            dsel = alpha * ((ce - sel_risk) / S - (2.0 * lam / m) * shortfall)
            dz_sel = (dsel * sel * (1.0 - sel))[:, None]
            # auxiliary head: plain mean cross-entropy
            daux = pa.copy()
            daux[rows, yb] -= 1.0
            daux *= (1 - alpha) / m

            dWp = dpred.T @ h
            dbp = np.sum(dpred, axis=0)
            dWa = daux.T @ h
            dba = np.sum(daux, axis=0)
            dWs, dbs, dh_sel = stack_param_grads(selector_specs, sw, h, pre_s, post_s,
                                                 None, dz_sel)
            dh = dpred @ pw + daux @ aw + dh_sel
            dWb, dbb_, _ = stack_param_grads(B_specs, bw, xb, pre_b, post_b, masks, dh)

            grads = dWb + dbb_ + dWs + dbs + [dWp, dbp, dWa, dba]
            for i, g in enumerate(grads):
                velocity[i] = mom * velocity[i] - lr * g
                tensors[i] += velocity[i]

    nb = len(B_specs)
    ns = len(selector_specs)
    final = SelNetParams(
        backbone_specs=B_specs,
        backbone_weights=tuple(tensors[:nb]),
        backbone_biases=tuple(tensors[nb:2 * nb]),
        selector_specs=selector_specs,
        selector_weights=tuple(tensors[2 * nb:2 * nb + ns]),
        selector_biases=tuple(tensors[2 * nb + ns:2 * nb + 2 * ns]),
        pred_weight=tensors[-4], pred_bias=tensors[-3],
        aux_weight=tensors[-2], aux_bias=tensors[-1],
        class_count=class_count,
    )
    _, _, _, _, _, sel_all, _ = _forward_all(final, X)
    coverage = float(np.mean(sel_all > 0.5))
    logger.info("selnet_train: empirical train coverage at 0.5 threshold: %.4f", coverage)
    return final


def calibrate_threshold(params: SelNetParams, validation, c: float) -> float:
    """Threshold achieving the largest selector coverage not exceeding c.

    Tied selector scores cannot be split, so with ties straddling the cut the
    achieved coverage is strictly below c. For c = 1 the threshold sits below
    every score (the selector is sigmoid-valued, so 0 works).
    """
    if not (0.0 < c <= 1.0):
        raise ConfigError("coverage target must be in (0, 1]")
    X = as_tensor(validation.features)
    if X.shape[0] == 0:
        raise ConfigError("validation split must be non-empty")
    scores = np.array([selnet_forward(params, X[i])[1] for i in range(X.shape[0])])
    n = len(scores)
    values = np.sort(np.unique(scores))[::-1]
    best_theta = float(values[0])  # coverage 0 is always achievable
    best_cov = 0.0
    for j in range(len(values)):
        theta = float(values[j + 1]) if j + 1 < len(values) else 0.0
        cov = float(np.mean(scores > theta))
        if cov <= c and cov > best_cov:
            best_cov, best_theta = cov, theta
    logger.info("calibrate_threshold: target %.3f achieved %.4f at theta=%.6f",
                c, best_cov, best_theta)
    return best_theta
