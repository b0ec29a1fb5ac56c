"""Single-step signed-gradient attack on confidence estimates.

One signed-gradient direction is computed per sample, before any retries.
Correctly predicted samples step against the confidence gradient (to look
less certain); incorrect ones step along it (to look more certain). A
candidate is accepted only if the victim's predicted label is unchanged;
otherwise the step size decays geometrically and the check repeats, up to
a retry budget. On exhaustion the sample is returned untouched. Accuracy
is therefore preserved exactly, by construction.

In black-box mode the victim is reachable only through ``predict`` (the
handle counts every query); the gradient comes from separate proxy models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import confidence
from .errors import ConfigError, NumericError

MODES = ("white_box", "black_box")
TARGETS = ("direct", "indirect_softmax")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    epsilon_decay: float = 0.5
    max_iterations: int = 15
    mode: str = "white_box"
    target: str = "direct"
    clamp: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.epsilon < 0.0:
            raise ConfigError("epsilon must be non-negative")
        if not (0.0 < self.epsilon_decay < 1.0):
            raise ConfigError("epsilon_decay must be in (0, 1)")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}")
        if self.clamp is not None and self.clamp[0] >= self.clamp[1]:
            raise ConfigError("clamp bounds must satisfy lo < hi")


@dataclass(frozen=True)
class AttackOutcome:
    x_tilde: np.ndarray
    effective_epsilon: float
    iterations_used: int
    perturbed: bool


class VictimHandle:
    """Label-query interface to the attacked model; counts every query.

    This is the only view of the victim the attack ever touches, which is
    what makes the black-box isolation claim checkable: the query count
    must equal 1 + iterations_used per sample.
    """

    def __init__(self, predict_fn):
        self._predict = predict_fn
        self.query_count = 0

    def predict(self, x) -> int:
        self.query_count += 1
        return self._predict(x)


def _target_scorer(scorer: confidence.ConfidenceScorer, gradient_models: tuple,
                   cfg: AttackConfig) -> confidence.ConfidenceScorer:
    if cfg.target == "indirect_softmax":
        return confidence.indirect_softmax_scorer(gradient_models)
    return scorer


def ace(victim: VictimHandle, gradient_models: tuple,
        scorer: confidence.ConfidenceScorer, x, y: int,
        cfg: AttackConfig) -> AttackOutcome:
    """Attack one sample.

    ``victim`` answers label queries; ``gradient_models`` are differentiated
    (the victim's own parameters in white-box mode, proxies in black-box);
    ``scorer`` is the deployed confidence score, which a direct attack
    targets and an indirect one bypasses in favor of the softmax response.
    ``y`` is the ground-truth label used to pick the step direction.
    """
    x = np.asarray(x, dtype=np.float64)
    predicted = victim.predict(x)
    target = _target_scorer(scorer, gradient_models, cfg)
    eta = confidence.kappa_signed_gradient(target, x, predicted, gradient_models)

    eps = cfg.epsilon
    for iteration in range(1, cfg.max_iterations + 1):
        if predicted == y:
            candidate = x - eps * eta
        else:
            candidate = x + eps * eta
        if cfg.clamp is not None:
            candidate = np.clip(candidate, cfg.clamp[0], cfg.clamp[1])
        if not np.all(np.isfinite(candidate)):
            raise NumericError("perturbed input is not finite")
        if victim.predict(candidate) == predicted:
            if np.array_equal(candidate, x):
                return AttackOutcome(x, 0.0, iteration, False)
            return AttackOutcome(candidate, eps, iteration, True)
        eps *= cfg.epsilon_decay
    return AttackOutcome(x, 0.0, cfg.max_iterations, False)


@dataclass(frozen=True)
class AttackSummary:
    mean_effective_epsilon: float
    query_count: int
    fraction_perturbed: float


def attack_dataset(victim_predict, gradient_models: tuple,
                   scorer: confidence.ConfidenceScorer, features, labels,
                   cfg: AttackConfig) -> tuple[list[AttackOutcome], AttackSummary]:
    """Attack every sample; sample i uses confidence substream i.

    The mean effective step size averages over *all* samples, counting the
    returned-unchanged ones as 0. The query count covers every label query
    issued (one per sample plus one per retry iteration).
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if len(X) == 0:
        raise ConfigError("attack_dataset needs at least one sample")
    handle = VictimHandle(victim_predict)
    outcomes = []
    for i in range(len(X)):
        try:
            outcomes.append(ace(handle, gradient_models, scorer.for_sample(i),
                                X[i], int(y[i]), cfg))
        except NumericError as exc:
            raise NumericError(f"sample {i}: {exc}") from exc
    summary = AttackSummary(
        mean_effective_epsilon=float(np.mean([o.effective_epsilon for o in outcomes])),
        query_count=handle.query_count,
        fraction_perturbed=float(np.mean([o.perturbed for o in outcomes])),
    )
    return outcomes, summary
