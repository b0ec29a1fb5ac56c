"""Desk-scale lab for attacking the confidence estimates of small classifiers.

The attack nudges inputs with a single signed-gradient step whose size
decays until the victim's predicted label is preserved, so accuracy stays
exactly intact while the ranking the confidence score induces degrades.
Scorer kinds covered: softmax response, ensemble mean softmax, dropout-pass
predictive entropy and variance, and a selective classifier's selector head.
"""

from .attack import AttackConfig, AttackOutcome, AttackSummary, ace, attack_dataset
from .confidence import (ConfidenceScorer, kappa_ensemble, kappa_mc_entropy,
                         kappa_mc_variance, kappa_selector, kappa_signed_gradient,
                         kappa_softmax, score_dataset)
from .config import ExperimentConfig, load_config, parse_config
from .data import DatasetSpec, LabeledDataset, gen_dataset
from .harness import RunManifest, run_bench, run_experiment
from .metrics import (EvalReport, RCCurve, ScoredItem, aurc, brier,
                      confidence_histograms, empirical_coverage,
                      empirical_selective_risk, evaluate, nll, rc_curve,
                      worst_case_rc)
from .nn import (ForwardTrace, LayerSpec, NetworkParams, TrainConfig, cross_entropy,
                 forward, input_gradient, mlp_specs, predict, softmax, train_sgd)
from .rng import RngState
from .selnet import (SelNetParams, SelNetTrainConfig, calibrate_threshold,
                     selnet_forward, selnet_train)

__version__ = "0.1.0"
