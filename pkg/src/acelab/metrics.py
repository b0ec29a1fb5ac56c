"""Selective-classification evaluation.

Coverage and selective risk for a threshold, risk-coverage curves, the
area under the RC curve (the mean selective risk over the thresholds the
sample's own confidence values induce), NLL, Brier score, the worst-case
RC envelope, and confidence histograms.

Confidence values are ordinal: anything strictly increasing applied to all
of them leaves every ranking-based quantity here unchanged. Coverage is
strict (an item is covered when its confidence exceeds the threshold), so
tied values always enter or leave the covered set together. The AURC sum
keeps one term per sample even under ties: a sample's term is the selective
risk of the smallest coverage that includes its whole tie group, which
reduces to the familiar mean of top-i risks when all values are distinct.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ZeroCoverageError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ScoredItem:
    """One evaluated sample: confidence, labels, probability vector, 0/1 loss."""

    index: int
    true_label: int
    predicted_label: int
    kappa: float
    probs: np.ndarray
    loss01: int

    def __post_init__(self) -> None:
        expected = int(self.predicted_label != self.true_label)
        if self.loss01 != expected:
            raise ConfigError("loss01 must equal (predicted_label != true_label)")


def make_item(index: int, true_label: int, predicted_label: int,
              kappa: float, probs) -> ScoredItem:
    return ScoredItem(index, true_label, predicted_label, float(kappa),
                      np.asarray(probs, dtype=np.float64),
                      int(predicted_label != true_label))


def _kappas(items: Sequence[ScoredItem]) -> np.ndarray:
    return np.array([it.kappa for it in items], dtype=np.float64)


def _losses(items: Sequence[ScoredItem]) -> np.ndarray:
    return np.array([it.loss01 for it in items], dtype=np.float64)


def empirical_coverage(items: Sequence[ScoredItem], threshold: float) -> float:
    """Fraction of items with confidence strictly above the threshold."""
    if not items:
        raise ConfigError("empirical_coverage needs at least one item")
    return float(np.mean(_kappas(items) > threshold))


def empirical_selective_risk(items: Sequence[ScoredItem], threshold: float) -> float:
    """Mean 0/1 loss over the covered items; undefined at zero coverage."""
    if not items:
        raise ConfigError("empirical_selective_risk needs at least one item")
    covered = _kappas(items) > threshold
    n_cov = int(np.sum(covered))
    if n_cov == 0:
        raise ZeroCoverageError(f"no items covered at threshold {threshold}")
    return float(np.sum(_losses(items)[covered]) / n_cov)


@dataclass(frozen=True)
class RCCurve:
    """Threshold-swept (coverage, risk) points, coverage strictly increasing.

    ``thresholds[i]`` reproduces ``coverages[i]`` under the strict coverage
    rule; the full-coverage point carries -inf.
    """

    coverages: np.ndarray
    risks: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self) -> None:
        if len(self.coverages) == 0:
            raise ConfigError("an RC curve needs at least one point")
        if not np.all(np.diff(self.coverages) > 0):
            raise ConfigError("coverages must be strictly increasing")
        if abs(self.coverages[-1] - 1.0) > 1e-15:
            raise ConfigError("last RC point must have coverage 1.0")


def _tie_groups(items: Sequence[ScoredItem]):
    """Sizes and error counts of confidence tie groups, most confident first."""
    kappas = _kappas(items)
    losses = _losses(items)
    order = np.argsort(-kappas, kind="stable")
    sorted_k = kappas[order]
    sorted_l = losses[order]
    boundaries = np.nonzero(np.diff(sorted_k))[0] + 1
    group_ends = np.append(boundaries, len(items))
    group_starts = np.insert(boundaries, 0, 0)
    sizes = group_ends - group_starts
    cum_losses = np.cumsum(sorted_l)
    errors_at_end = cum_losses[group_ends - 1]
    values = sorted_k[group_starts]
    return sizes, group_ends, errors_at_end, values


def rc_curve(items: Sequence[ScoredItem]) -> RCCurve:
    """One point per achievable coverage (tie groups are indivisible)."""
    if not items:
        raise ConfigError("rc_curve needs at least one item")
    n = len(items)
    sizes, ends, errors, values = _tie_groups(items)
    coverages = ends / n
    risks = errors / ends
    thresholds = np.append(values[1:], -np.inf)
    return RCCurve(coverages, risks, thresholds)


def aurc(items: Sequence[ScoredItem]) -> float:
    """Mean selective risk over the n sample-induced thresholds.

    Each sample contributes the risk of the smallest coverage containing its
    whole tie group, so the sum has exactly n terms with or without ties.
    """
    if not items:
        raise ConfigError("aurc needs at least one item")
    n = len(items)
    sizes, ends, errors, _ = _tie_groups(items)
    total = 0.0
    for size, end, errs in zip(sizes, ends, errors):
        total += size * (errs / end)
    return total / n


def worst_case_rc(n_correct: int, n_incorrect: int) -> RCCurve:
    """Envelope where every error outranks every correct prediction.

    risk(c) = 1 for c <= e and e/c above it, with e the error rate, evaluated
    at the n achievable coverages. Thresholds are nominal ranks.
    """
    n = n_correct + n_incorrect
    if n < 1 or n_correct < 0 or n_incorrect < 0:
        raise ConfigError("need n_correct + n_incorrect >= 1")
    coverages = np.arange(1, n + 1) / n
    risks = np.empty(n)
    for i in range(1, n + 1):
        risks[i - 1] = 1.0 if i <= n_incorrect else n_incorrect / i
    thresholds = np.append((n - np.arange(1, n)) / n - 1.0 / n, -np.inf)
    return RCCurve(coverages, risks, thresholds)


def nll(items: Sequence[ScoredItem]) -> float:
    """Mean negative log-likelihood of the true labels (floored at 1e-12)."""
    if not items:
        raise ConfigError("nll needs at least one item")
    vals = [max(float(it.probs[it.true_label]), PROB_FLOOR) for it in items]
    return float(-np.mean(np.log(vals)))


def brier(items: Sequence[ScoredItem]) -> float:
    """Mean squared distance between probability vectors and one-hot truth."""
    if not items:
        raise ConfigError("brier needs at least one item")
    total = 0.0
    for it in items:
        onehot = np.zeros_like(it.probs)
        onehot[it.true_label] = 1.0
        total += float(np.sum((it.probs - onehot) ** 2))
    return total / len(items)


def confidence_histograms(items: Sequence[ScoredItem],
                          bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width histograms of confidence for correct and incorrect items.

    Both use the combined range so the bins line up; counts sum to the
    respective population sizes.
    """
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    if not items:
        raise ConfigError("confidence_histograms needs at least one item")
    kappas = _kappas(items)
    losses = _losses(items)
    lo, hi = float(np.min(kappas)), float(np.max(kappas))
    if lo == hi:  # degenerate range: give the single value a real-width bin
        lo, hi = lo - 0.5, hi + 0.5
    correct_hist, _ = np.histogram(kappas[losses == 0], bins=bins, range=(lo, hi))
    incorrect_hist, _ = np.histogram(kappas[losses == 1], bins=bins, range=(lo, hi))
    return correct_hist, incorrect_hist


@dataclass(frozen=True)
class EvalReport:
    """One summary row: budget, spent budget, AURC x1000, NLL, Brier, accuracy %.

    ``selective_risk`` is filled only for selector-head victims, where risk at
    the calibrated coverage is the headline number.
    """

    epsilon: float
    effective_epsilon: float
    aurc_x1000: float
    nll: float
    brier: float
    accuracy_percent: float
    selective_risk: float | None = None


def evaluate(items: Sequence[ScoredItem], epsilon: float = 0.0,
             effective_epsilon: float = 0.0,
             selective_risk: float | None = None) -> EvalReport:
    accuracy = 1.0 - float(np.mean(_losses(items)))
    return EvalReport(
        epsilon=epsilon,
        effective_epsilon=effective_epsilon,
        aurc_x1000=aurc(items) * 1000.0,
        nll=nll(items),
        brier=brier(items),
        accuracy_percent=accuracy * 100.0,
        selective_risk=selective_risk,
    )


def rc_curve_csv(curve: RCCurve) -> str:
    """CSV text with 17-significant-digit decimals (exact float round-trip)."""
    lines = ["coverage,risk,threshold"]
    for c, r, t in zip(curve.coverages, curve.risks, curve.thresholds):
        lines.append(f"{c:.17g},{r:.17g},{t:.17g}")
    return "\n".join(lines) + "\n"


def parse_rc_curve_csv(text: str) -> RCCurve:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    cov = np.array([float(r[0]) for r in rows])
    risk = np.array([float(r[1]) for r in rows])
    thr = np.array([float(r[2]) for r in rows])
    return RCCurve(cov, risk, thr)
