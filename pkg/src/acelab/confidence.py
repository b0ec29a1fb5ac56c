"""Confidence scores and their signed input gradients.

Five scorer kinds: the softmax response of a single model, the mean softmax
of an ensemble, predictive entropy or predicted-label variance over several
dropout-enabled passes, and the selector head of a three-head selective
classifier. Every score is "higher = more confident": entropy and variance
are negated, so all kinds share one partial-order convention.

Predicted labels always come from a deterministic pass (dropout disabled,
ensemble mean, or the prediction head), never from sampled passes: the
attack's label-preservation check must not flicker with the mask draw.

The signed gradient supports attacking one function while deploying
another: the models differentiated (``gradient_models``) may be a black-box
proxy ensemble or, for an indirect attack, the softmax response may be
targeted while the deployed score is entropy/variance/selector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import nn, selnet
from .errors import ConfigError, NumericError
from .metrics import ScoredItem, make_item
from .rng import RngState

KINDS = ("softmax_response", "ensemble_mean_softmax", "mc_entropy",
         "mc_variance", "selector_head")
_MC_KINDS = ("mc_entropy", "mc_variance")


def kappa_softmax(model: nn.NetworkParams, x, label: int) -> float:
    """Softmax probability of `label` under the deterministic pass."""
    logits, _ = nn.forward(model, x, dropout_enabled=False)
    return float(nn.softmax(logits)[label])


def kappa_ensemble(models: Sequence[nn.NetworkParams], x, label: int) -> float:
    """Mean softmax probability of `label` across ensemble members."""
    _check_ensemble(models)
    return float(ensemble_mean_probs(models, x)[label])


def ensemble_mean_probs(models: Sequence[nn.NetworkParams], x) -> np.ndarray:
    probs = [nn.softmax(nn.forward(m, x, dropout_enabled=False)[0]) for m in models]
    return np.mean(probs, axis=0)


def _check_ensemble(models) -> None:
    if len(models) < 2:
        raise ConfigError("an ensemble needs at least 2 members")
    counts = {m.class_count for m in models}
    if len(counts) != 1:
        raise ConfigError(f"ensemble members disagree on class_count: {sorted(counts)}")


def _mc_pass_probs(model: nn.NetworkParams, x, n_passes: int,
                   rng: RngState) -> tuple[np.ndarray, nn.ForwardTrace]:
    """Softmax outputs of n dropout-enabled passes, all drawn from one stream.

    The passes run as a batch of n replicas of x with per-pass masks, and the
    trace is kept so gradients can replay the exact sampled function.
    """
    x = nn.as_tensor(x)
    masks = nn.draw_masks(model.specs, n_passes, rng.generator())
    trace = nn.forward_batch(model, np.tile(x, (n_passes, 1)), masks)
    return nn.softmax(trace.logits), trace


def kappa_mc_entropy(model: nn.NetworkParams, x, n_passes: int, rng: RngState) -> float:
    """Negated predictive entropy of the mean softmax over n dropout passes.

    Bounded in [-ln K, 0]; -ln K is the least confident score.
    """
    if n_passes < 1:
        raise ConfigError("mc_entropy needs at least 1 pass")
    probs, _ = _mc_pass_probs(model, x, n_passes, rng)
    p_bar = np.mean(probs, axis=0)
    nz = p_bar[p_bar > 0.0]  # p ln p -> 0 for classes softmax underflowed to 0
    return float(np.sum(nz * np.log(nz)))


def kappa_mc_variance(model: nn.NetworkParams, x, n_passes: int, rng: RngState,
                      full_vector: bool = False) -> float:
    """Negated population variance of the label probability across passes.

    By default the scalar variance of the *predicted* label's probability
    (the label being the deterministic pass's prediction); with
    ``full_vector`` the variances of all class probabilities are summed.
    """
    if n_passes < 2:
        raise ConfigError("mc_variance needs at least 2 passes")
    probs, _ = _mc_pass_probs(model, x, n_passes, rng)
    if full_vector:
        return float(-np.sum(np.mean((probs - np.mean(probs, axis=0)) ** 2, axis=0)))
    label = nn.predict(model, x)
    vals = probs[:, label]
    return float(-np.mean((vals - np.mean(vals)) ** 2))


def kappa_selector(model: selnet.SelNetParams, x) -> float:
    """The selector head's sigmoid output."""
    if not isinstance(model, selnet.SelNetParams):
        raise ConfigError("kappa_selector needs a selective-classifier model")
    _, sel, _ = selnet.selnet_forward(model, x)
    return sel


@dataclass(frozen=True)
class ConfidenceScorer:
    """Tagged configuration: which score is computed, on which model(s).

    MC kinds carry the pass count and an RngState; per-sample substreams are
    derived from it (see ``for_sample``) so parallel and serial dataset
    sweeps agree.
    """

    kind: str
    models: tuple
    passes: int = 1
    rng: RngState | None = None
    variance_full_vector: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scorer kind {self.kind!r}")
        if not self.models:
            raise ConfigError("scorer needs at least one model")
        if self.kind == "ensemble_mean_softmax":
            _check_ensemble(self.models)
        if self.kind in _MC_KINDS:
            model = self.models[0]
            if not model.has_dropout:
                raise ConfigError(f"{self.kind} needs a dropout-bearing model")
            if self.rng is None:
                raise ConfigError(f"{self.kind} needs an RngState")
            if self.kind == "mc_variance" and self.passes < 2:
                raise ConfigError("mc_variance needs at least 2 passes")
            if self.passes < 1:
                raise ConfigError("MC scorers need at least 1 pass")
        if self.kind == "selector_head" and not isinstance(self.models[0], selnet.SelNetParams):
            raise ConfigError("selector_head scorer needs a selective-classifier model")
        if (self.kind in ("ensemble_mean_softmax", *_MC_KINDS)
                and any(isinstance(m, selnet.SelNetParams) for m in self.models)):
            raise ConfigError(f"{self.kind} scorer got a selective-classifier model")

    def for_sample(self, index: int) -> "ConfidenceScorer":
        """Scorer with the per-sample substream (no-op for deterministic kinds)."""
        if self.rng is None:
            return self
        return replace(self, rng=self.rng.advance(index))

    def _is_selnet(self) -> bool:
        return isinstance(self.models[0], selnet.SelNetParams)

    def predict(self, x) -> int:
        """Deterministic predicted label (ties to the lowest index)."""
        if self.kind == "ensemble_mean_softmax":
            return int(np.argmax(ensemble_mean_probs(self.models, x)))
        if self._is_selnet():
            pred_probs, _, _ = selnet.selnet_forward(self.models[0], x)
            return int(np.argmax(pred_probs))
        return nn.predict(self.models[0], x)

    def probs(self, x) -> np.ndarray:
        """Probability vector used for NLL/Brier under this scorer."""
        if self.kind == "ensemble_mean_softmax":
            return ensemble_mean_probs(self.models, x)
        if self._is_selnet():
            pred_probs, _, _ = selnet.selnet_forward(self.models[0], x)
            return pred_probs
        if self.kind == "softmax_response":
            logits, _ = nn.forward(self.models[0], x, dropout_enabled=False)
            return nn.softmax(logits)
        pass_probs, _ = _mc_pass_probs(self.models[0], x, self.passes, self.rng)
        return np.mean(pass_probs, axis=0)

    def kappa(self, x, label: int | None = None) -> float:
        """Confidence value; `label` defaults to this scorer's prediction."""
        if label is None:
            label = self.predict(x)
        if self.kind == "softmax_response":
            if self._is_selnet():
                pred_probs, _, _ = selnet.selnet_forward(self.models[0], x)
                return float(pred_probs[label])
            return kappa_softmax(self.models[0], x, label)
        if self.kind == "ensemble_mean_softmax":
            return kappa_ensemble(self.models, x, label)
        if self.kind == "mc_entropy":
            return kappa_mc_entropy(self.models[0], x, self.passes, self.rng)
        if self.kind == "mc_variance":
            return kappa_mc_variance(self.models[0], x, self.passes, self.rng,
                                     self.variance_full_vector)
        return kappa_selector(self.models[0], x)

    def score(self, x, y: int, index: int = 0) -> ScoredItem:
        pred = self.predict(x)
        return make_item(index, int(y), pred, self.kappa(x, pred), self.probs(x))


def score_dataset(scorer: ConfidenceScorer, features, labels) -> list[ScoredItem]:
    """Score each sample with its own derived substream (sample i -> stream i)."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    return [scorer.for_sample(i).score(X[i], y[i], index=i) for i in range(len(X))]


def indirect_softmax_scorer(models: tuple) -> ConfidenceScorer:
    """The softmax-response handle used by indirect and black-box attacks.

    For an ensemble this is the mean softmax response; for a selective
    classifier it is the prediction head's softmax response.
    """
    models = tuple(models)
    if len(models) >= 2:
        return ConfidenceScorer("ensemble_mean_softmax", models)
    return ConfidenceScorer("softmax_response", models)


def _grad_softmax_response(model: nn.NetworkParams, x, label: int) -> np.ndarray:
    return nn.input_gradient(model, x, nn.SoftmaxProbHead(label))


def _grad_ensemble_mean(models, x, label: int) -> np.ndarray:
    grads = [_grad_softmax_response(m, x, label) for m in models]
    return np.mean(grads, axis=0)


def _grad_mc_entropy(model: nn.NetworkParams, x, n_passes: int, rng: RngState) -> np.ndarray:
    """Gradient of the negated entropy of the mean softmax, through all passes."""
    probs, trace = _mc_pass_probs(model, x, n_passes, rng)
    p_bar = np.mean(probs, axis=0)
    v = np.log(p_bar) + 1.0
    inner = probs @ v
    dlogits = probs * (v[None, :] - inner[:, None]) / n_passes
    grads = nn.backprop_input(model, trace, dlogits)
    return np.sum(grads, axis=0)


def _grad_mc_variance(model: nn.NetworkParams, x, n_passes: int, rng: RngState,
                      full_vector: bool = False) -> np.ndarray:
    probs, trace = _mc_pass_probs(model, x, n_passes, rng)
    if full_vector:
        dprobs = -(2.0 / n_passes) * (probs - np.mean(probs, axis=0))
        inner = np.sum(dprobs * probs, axis=1, keepdims=True)
        dlogits = probs * (dprobs - inner)
    else:
        label = nn.predict(model, x)
        vals = probs[:, label]
        dvals = -(2.0 / n_passes) * (vals - np.mean(vals))
        dlogits = dvals[:, None] * probs[:, label:label + 1] * (-probs)
        dlogits[:, label] += dvals * probs[:, label]
    grads = nn.backprop_input(model, trace, dlogits)
    return np.sum(grads, axis=0)


def input_gradient(scorer: ConfidenceScorer, x, label: int,
                   gradient_models: tuple | None = None) -> np.ndarray:
    """Gradient of the scorer's confidence value with respect to the input.

    ``gradient_models`` substitutes the models actually differentiated (a
    proxy ensemble, say); the scorer's kind still decides which scalar is
    targeted. MC kinds replay the masks from the scorer's RngState, so this
    differentiates the same sampled function ``kappa`` evaluates.
    """
    models = scorer.models if gradient_models is None else tuple(gradient_models)
    if scorer.kind == "softmax_response":
        if isinstance(models[0], selnet.SelNetParams):
            return selnet.pred_softmax_input_gradient(models[0], x, label)
        if len(models) >= 2:
            return _grad_ensemble_mean(models, x, label)
        return _grad_softmax_response(models[0], x, label)
    if scorer.kind == "ensemble_mean_softmax":
        return _grad_ensemble_mean(models, x, label)
    if scorer.kind == "mc_entropy":
        return _grad_mc_entropy(models[0], x, scorer.passes, scorer.rng)
    if scorer.kind == "mc_variance":
        return _grad_mc_variance(models[0], x, scorer.passes, scorer.rng,
                                 scorer.variance_full_vector)
    return selnet.selector_input_gradient(models[0], x)


def kappa_signed_gradient(scorer: ConfidenceScorer, x, label: int,
                          gradient_models: tuple | None = None) -> np.ndarray:
    """Elementwise sign of the confidence gradient; sign(0) = 0."""
    grad = input_gradient(scorer, x, label, gradient_models)
    if not np.all(np.isfinite(grad)):
        raise NumericError("confidence gradient is not finite")
    return np.sign(grad)
