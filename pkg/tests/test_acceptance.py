"""Acceptance gate: one test per criterion, each printing a PASS/WARN line.

The heavyweight criteria share one full run of the standard bench matrix
(session fixture); the byte-determinism criterion runs a scaled-down matrix
twice since only the pipeline, not the workload size, is under test.
"""

import filecmp
from dataclasses import replace

import numpy as np
import pytest

from acelab import attack, confidence, harness, metrics, nn, selnet
from acelab.config import DataConfig, ExperimentConfig, VictimConfig
from acelab.rng import RngState

from oracles import (brute_force_aurc, brute_force_rc_points,
                     brute_force_worst_aurc, central_diff)
from test_attack import logistic_net
from test_selnet import random_selnet

DESK_SEED = 7
H = 1e-5
GRAD_TOL = 1e-5


def report(criterion, status, detail=""):
    print(f"[criterion {criterion}] {status} {detail}")


@pytest.fixture(scope="session")
def desk_bench(tmp_path_factory):
    """The full experiment matrix on the standard desk benchmark, seed fixed."""
    harness.clear_caches()
    out = tmp_path_factory.mktemp("desk_bench")
    cfg = ExperimentConfig(seed=DESK_SEED, out_dir=str(out))
    manifests = harness.run_bench(cfg)
    return out, manifests


# -- criterion 1: gradient fidelity for every confidence kind ---------------

def _fd_ok(analytic, reference):
    scale = float(np.max(np.abs(reference)))
    if scale <= 1e-6:
        return None  # too flat for a meaningful relative comparison
    return float(np.max(np.abs(analytic - reference))) / scale < GRAD_TOL


def _away_from_kinks(trace):
    return all(float(np.min(np.abs(z))) > 1e-3 for z in trace.pre_activations[:-1])


def _selnet_away_from_kinks(model, x):
    pre_b, _, _, pre_s, _, _, _ = selnet._forward_all(model, x[None, :])
    return all(float(np.min(np.abs(z))) > 1e-3 for z in list(pre_b) + list(pre_s[:-1]))


def test_criterion_1_gradient_fidelity():
    gen = np.random.default_rng(101)
    kinds_checked = {}

    def run_kind(kind, make_scorer, kappa_fn, kink_fn, budget=3000):
        checked = 0
        for _ in range(budget):
            if checked >= 100:
                break
            scorer, model, x = make_scorer()
            if not kink_fn(model, x):
                continue
            label = scorer.predict(x)
            analytic = confidence.input_gradient(scorer, x, label)
            ref = central_diff(lambda v: kappa_fn(scorer, v, label), x, h=H)
            ok = _fd_ok(analytic, ref)
            if ok is None:
                continue
            assert ok, f"{kind}: gradient mismatch"
            checked += 1
        kinds_checked[kind] = checked
        assert checked >= 100, f"{kind}: only {checked} valid trials"

    def make_plain():
        net = nn.init_params(nn.mlp_specs(3, [10, 8], 4),
                             RngState(int(gen.integers(1 << 30))))
        return confidence.ConfidenceScorer("softmax_response", (net,)), net, gen.normal(size=3)

    def plain_kink(model, x):
        _, trace = nn.forward(model, x)
        return _away_from_kinks(trace)

    run_kind("softmax_response", make_plain,
             lambda s, v, lbl: s.kappa(v, lbl), plain_kink)

    def make_ensemble():
        members = tuple(nn.init_params(nn.mlp_specs(3, [8], 3),
                                       RngState(int(gen.integers(1 << 30))))
                        for _ in range(3))
        return confidence.ConfidenceScorer("ensemble_mean_softmax", members), members, gen.normal(size=3)

    def ensemble_kink(members, x):
        return all(_away_from_kinks(nn.forward(m, x)[1]) for m in members)

    run_kind("ensemble_mean_softmax", make_ensemble,
             lambda s, v, lbl: s.kappa(v, lbl), ensemble_kink)

    def make_mc(kind):
        model = nn.init_params(nn.mlp_specs(3, [10], 3, dropout_rate=0.2),
                               RngState(int(gen.integers(1 << 30))))
        rng = RngState(int(gen.integers(1 << 30)))
        scorer = confidence.ConfidenceScorer(kind, (model,), passes=5, rng=rng)
        return scorer, (model, scorer), gen.normal(size=3)

    def mc_kink(bundle, x):
        model, scorer = bundle
        if not _away_from_kinks(nn.forward(model, x)[1]):
            return False
        _, trace = confidence._mc_pass_probs(model, x, scorer.passes, scorer.rng)
        return _away_from_kinks(trace)

    run_kind("mc_entropy", lambda: make_mc("mc_entropy"),
             lambda s, v, lbl: s.kappa(v, lbl), mc_kink)
    run_kind("mc_variance", lambda: make_mc("mc_variance"),
             lambda s, v, lbl: s.kappa(v, lbl), mc_kink)

    def make_selnet():
        model = random_selnet(int(gen.integers(1 << 30)))
        return confidence.ConfidenceScorer("selector_head", (model,)), model, gen.normal(size=3)

    run_kind("selector_head", make_selnet,
             lambda s, v, lbl: s.kappa(v, lbl), _selnet_away_from_kinks)

    report(1, "PASS", f"gradient vs central differences (rel err < {GRAD_TOL:g}), "
                      f"trials per kind: {kinds_checked}")


# -- criterion 2: exact accuracy invariance across the whole matrix ---------

def test_criterion_2_accuracy_invariance(desk_bench):
    _, manifests = desk_bench
    for name, man in manifests.items():
        accs = [r.accuracy_percent for r in man.rows]
        assert all(a == accs[0] for a in accs), f"{name}: accuracy moved: {accs}"
    report(2, "PASS", f"accuracy exactly constant across budgets in all "
                      f"{len(manifests)} experiments")


# -- criterion 3: AURC degradation on the fixed-seed desk benchmark ---------

def test_criterion_3_aurc_degradation(desk_bench):
    _, manifests = desk_bench
    rows = manifests["softmax_whitebox"].rows
    assert [r.epsilon for r in rows] == [0.0, 0.01, 0.05, 0.2]
    aurcs = [r.aurc_x1000 for r in rows]
    assert all(b > a for a, b in zip(aurcs, aurcs[1:])), f"not increasing: {aurcs}"
    ratio = aurcs[-1] / aurcs[0]
    assert ratio >= 3.0, f"degradation factor {ratio:.2f} < 3"
    report(3, "PASS", f"AURC x1000 {['%.1f' % a for a in aurcs]}, "
                      f"strongest/clean = {ratio:.2f}x")


# -- criterion 4: metric oracle equivalence ----------------------------------

def test_criterion_4_metric_oracles():
    gen = np.random.default_rng(404)
    for trial in range(50):
        n = int(gen.integers(1, 201))
        kappas = gen.random(n)
        if trial % 2:
            kappas = kappas.round(1)  # force ties half the time
        losses = gen.integers(0, 2, n)
        items = [metrics.make_item(i, int(l), 0, k, np.array([1.0, 0.0]))
                 for i, (k, l) in enumerate(zip(kappas, losses))]
        assert abs(metrics.aurc(items) - brute_force_aurc(kappas, losses)) < 1e-12
        curve = metrics.rc_curve(items)
        got = sorted(zip(curve.coverages, curve.risks))
        expected = brute_force_rc_points(kappas, losses)
        assert len(got) == len(expected)
        for (c1, r1), (c2, r2) in zip(got, expected):
            assert abs(c1 - c2) < 1e-12 and abs(r1 - r2) < 1e-12
    report(4, "PASS", "rc_curve/aurc equal O(n^2) enumeration on 50 instances (1e-12)")


# -- criterion 5: worst-case envelope ----------------------------------------

def test_criterion_5_worst_case():
    for n in range(1, 101):
        for n_incorrect in {0, 1, n // 3, n // 2, n}:
            n_correct = n - n_incorrect
            curve = metrics.worst_case_rc(n_correct, n_incorrect)
            total = 0.0
            for risk in curve.risks:
                total += risk
            assert total / n == brute_force_worst_aurc(n_correct, n_incorrect), \
                (n_correct, n_incorrect)
    anchor = metrics.worst_case_rc(7767, 2233)
    e = 2233 / 10000
    low = anchor.coverages <= e + 1e-12
    assert np.all(anchor.risks[low] == 1.0)
    assert np.all(anchor.risks[~low] < 1.0)
    report(5, "PASS", "closed form exact for n <= 100; full risk below the "
                      "22.33% error-rate coverage")


# -- criterion 6: the decay mechanics on the closed-form logistic oracle -----

def test_criterion_6_decay_mechanics():
    net = logistic_net()
    scorer = confidence.ConfidenceScorer("softmax_response", (net,))
    eps = 0.8
    for k in range(12):
        x = np.array([1.5 * eps * 0.5 ** k])
        handle = attack.VictimHandle(lambda v: nn.predict(net, v))
        out = attack.ace(handle, (net,), scorer, x, 1, attack.AttackConfig(eps))
        assert out.effective_epsilon == eps * 0.5 ** k, k
        assert out.iterations_used == k + 1
    handle = attack.VictimHandle(lambda v: nn.predict(net, v))
    out = attack.ace(handle, (net,), scorer, np.array([0.05]), 1,
                     attack.AttackConfig(10.0, max_iterations=4))
    assert not out.perturbed
    assert out.effective_epsilon == 0.0
    assert np.array_equal(out.x_tilde, [0.05])
    report(6, "PASS", "effective budget equals eps * 0.5^k for k = 0..11; "
                      "exhaustion returns the input with 0 spent")


# -- criterion 7: direction correctness on linear victims --------------------

def test_criterion_7_direction_correctness():
    gen = np.random.default_rng(707)
    accepted = 0
    for _ in range(300):
        k = int(gen.integers(2, 5))
        d = int(gen.integers(2, 5))
        net = nn.NetworkParams((nn.LayerSpec(d, k, "identity"),),
                               (gen.normal(size=(k, d)),), (0.3 * gen.normal(size=k),), k)
        scorer = confidence.ConfidenceScorer("softmax_response", (net,))
        x = gen.normal(size=d)
        y = int(gen.integers(k))
        predicted = nn.predict(net, x)
        handle = attack.VictimHandle(lambda v: nn.predict(net, v))
        out = attack.ace(handle, (net,), scorer, x, y, attack.AttackConfig(0.25))
        if not out.perturbed:
            continue
        accepted += 1
        before = scorer.kappa(x, predicted)
        after = scorer.kappa(out.x_tilde, predicted)
        if predicted == y:
            assert after < before
        else:
            assert after > before
    assert accepted >= 250
    report(7, "PASS", f"strict confidence decrease/increase on {accepted} "
                      f"accepted linear-victim perturbations")


# -- criterion 8: trivial metric anchors --------------------------------------

def test_criterion_8_metric_anchors():
    uniform2 = [metrics.make_item(0, 0, 0, 0.5, np.array([0.5, 0.5]))]
    assert metrics.brier(uniform2) == 0.5
    for k in (2, 10, 1000):
        items = [metrics.make_item(0, 1, 1, 0.5, np.full(k, 1.0 / k))]
        assert metrics.nll(items) == pytest.approx(np.log(k), abs=1e-12)
    all_correct = [metrics.make_item(i, 0, 0, k, np.array([1.0, 0.0]))
                   for i, k in enumerate([0.9, 0.5, 0.2])]
    assert metrics.aurc(all_correct) == 0.0
    worst4 = [metrics.make_item(i, int(l), 0, k, np.array([1.0, 0.0]))
              for i, (k, l) in enumerate(zip([0.9, 0.8, 0.7, 0.6], [1, 0, 0, 0]))]
    assert metrics.aurc(worst4) == pytest.approx(0.520833333333333, abs=1e-9)
    report(8, "PASS", "Brier(uniform,2)=0.5, NLL(uniform,K)=ln K, "
                      "AURC(all-correct)=0, AURC(n=4 worst)=0.520833")


# -- criterion 9: byte-identical reruns ---------------------------------------

def test_criterion_9_determinism(tmp_path):
    # the pipeline, not the workload size, is under test: a scaled-down
    # matrix exercises every experiment and writer
    small = ExperimentConfig(
        seed=11, out_dir=str(tmp_path / "a"),
        data=DataConfig(n_train=600, n_val=200, n_test=300),
        victim=VictimConfig(epochs=60, learning_rate=0.05))
    harness.clear_caches()
    harness.run_bench(small)
    harness.clear_caches()
    harness.run_bench(replace(small, out_dir=str(tmp_path / "b")))

    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                     if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*")
                     if p.is_file())
    assert files_a == files_b
    differing = [str(rel) for rel in files_a
                 if not filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel,
                                    shallow=False)]
    assert not differing, differing
    report(9, "PASS", f"two bench runs byte-identical across {len(files_a)} files "
                      f"(CSV, SVG, models, manifests)")


# -- criterion 10: soft trend checks (never fail, only warn) ------------------

def test_criterion_10_soft_trends(desk_bench):
    _, manifests = desk_bench
    results = {r.name: r for r in harness.bench_checks(manifests)}
    soft = ["ensemble-resilience", "mc-indirect-vs-direct n10",
            "mc-indirect-vs-direct n30"]
    for name in soft:
        result = results[name]
        assert result.status in ("PASS", "WARN")
        report(10, result.status, f"{name}: {result.detail}")
