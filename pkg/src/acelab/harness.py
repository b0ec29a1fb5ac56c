"""Experiment orchestration: train victims and proxies, sweep the attack
over a budget grid, evaluate, and emit reports, RC-curve CSVs, and SVGs.

Every run derives all of its randomness from the single config seed, so a
rerun with the same config reproduces byte-identical outputs. Model roles
(plain victim, dropout victim, ensemble members, proxies, selective net)
use fixed derivation paths, which keeps the same trained weights shared
across the experiments of a bench matrix.
"""

from __future__ import annotations

import hashlib
import logging
import shutil
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import attack, confidence, metrics, modelio, nn, selnet, svgplot
from .config import ExperimentConfig, config_hash, config_text
from .data import gen_dataset
from .errors import AceLabError, CheckFailure
from .rng import RngState

logger = logging.getLogger(__name__)

WHITE_EPSILONS = (0.01, 0.05, 0.2)
BLACK_EPSILONS = (0.02, 0.1, 0.4)


def derive_seed(master: int, *path) -> int:
    """Stable 63-bit substream seed for a named role."""
    key = "/".join([str(master), *map(str, path)])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


# Training is deterministic in its inputs, so within one process identical
# (specs, data, hyper) requests are served from a cache; the bench matrix
# reuses the same victims and proxies across experiments.
_TRAIN_CACHE: dict = {}


def clear_caches() -> None:
    _TRAIN_CACHE.clear()


def _cached(kind: str, key, builder):
    full_key = (kind, key)
    if full_key not in _TRAIN_CACHE:
        _TRAIN_CACHE[full_key] = builder()
    return _TRAIN_CACHE[full_key]


@dataclass(frozen=True)
class RunManifest:
    name: str
    config_hash: str
    rows: tuple[metrics.EvalReport, ...]
    files: tuple[str, ...]
    query_counts: tuple[int, ...]


@dataclass
class VictimBundle:
    models: tuple
    scorer: confidence.ConfidenceScorer
    predict_fn: object
    theta: float | None = None


def _train_plain(cfg: ExperimentConfig, seed: int, dropout: float,
                 hidden=None, data_seed=None) -> nn.NetworkParams:
    data_seed = cfg.seed if data_seed is None else data_seed
    specs = nn.mlp_specs(cfg.data.features, hidden or cfg.victim.hidden,
                         cfg.data.classes, dropout_rate=dropout)
    tc = nn.TrainConfig(cfg.victim.learning_rate, cfg.victim.epochs,
                        cfg.victim.batch_size, seed, cfg.victim.momentum)
    key = (specs, tc, cfg.data.spec("train"), data_seed)
    return _cached("plain", key, lambda: nn.train_sgd(
        specs, gen_dataset(cfg.data.spec("train"), data_seed, "train"), tc))


def build_victim(cfg: ExperimentConfig) -> VictimBundle:
    kind = cfg.scorer.kind
    master = cfg.seed
    if kind == "selector_head":
        val = gen_dataset(cfg.data.spec("validation"), master, "validation")
        sel_cfg = selnet.SelNetTrainConfig(
            sgd=nn.TrainConfig(cfg.victim.learning_rate, cfg.victim.epochs,
                               cfg.victim.batch_size,
                               derive_seed(master, "victim", "selnet", 0),
                               cfg.victim.momentum),
            target_coverage=cfg.victim.target_coverage,
            constraint_weight=cfg.victim.constraint_weight,
            aux_mix=cfg.victim.aux_mix)
        key = (cfg.victim, sel_cfg, cfg.data.spec("train"), master)
        model = _cached("selnet", key, lambda: selnet.selnet_train(
            cfg.data.features, cfg.victim.hidden, cfg.data.classes,
            gen_dataset(cfg.data.spec("train"), master, "train"), sel_cfg,
            selector_hidden=cfg.victim.selector_hidden,
            dropout_rate=cfg.victim.dropout))
        theta = selnet.calibrate_threshold(model, val, cfg.victim.target_coverage)
        scorer = confidence.ConfidenceScorer("selector_head", (model,))
        return VictimBundle((model,), scorer, scorer.predict, theta=theta)
    if kind == "ensemble_mean_softmax":
        members = tuple(_train_plain(cfg, derive_seed(master, "victim", "ens", i),
                                     cfg.victim.dropout)
                        for i in range(cfg.victim.ensemble_size))
        scorer = confidence.ConfidenceScorer("ensemble_mean_softmax", members)
        return VictimBundle(members, scorer, scorer.predict)
    if kind in ("mc_entropy", "mc_variance"):
        model = _train_plain(cfg, derive_seed(master, "victim", "mc", 0),
                             cfg.victim.dropout)
        scorer = confidence.ConfidenceScorer(
            kind, (model,), passes=cfg.scorer.passes,
            rng=RngState(derive_seed(master, "scorer-rng")))
        return VictimBundle((model,), scorer, scorer.predict)
    model = _train_plain(cfg, derive_seed(master, "victim", "plain", 0),
                         cfg.victim.dropout)
    scorer = confidence.ConfidenceScorer("softmax_response", (model,))
    return VictimBundle((model,), scorer, scorer.predict)


def build_proxy(cfg: ExperimentConfig) -> tuple:
    """Proxy ensemble for black-box gradients; never contains the victim."""
    data_seed = (derive_seed(cfg.seed, "proxy-data") if cfg.proxy.disjoint_data
                 else cfg.seed)
    members = []
    for i in range(cfg.proxy.size):
        if cfg.proxy.foreign:
            hidden = cfg.proxy.foreign_hidden[i % len(cfg.proxy.foreign_hidden)]
        else:
            hidden = cfg.proxy.hidden
        seed = derive_seed(cfg.seed, "proxy",
                           "foreign" if cfg.proxy.foreign else "matching", i)
        members.append(_train_plain(cfg, seed, 0.0, hidden=hidden,
                                    data_seed=data_seed))
    return tuple(members)


def risk_at_coverage(items, target_coverage: float) -> float:
    """Selective risk at the largest achievable coverage not above the target.

    Falls back to the smallest achievable coverage when even the first tie
    group exceeds the target.
    """
    curve = metrics.rc_curve(items)
    eligible = np.nonzero(curve.coverages <= target_coverage + 1e-12)[0]
    idx = eligible[-1] if len(eligible) else 0
    return float(curve.risks[idx])


def _score_attacked(scorer, X, y, outcomes):
    items = []
    for i, outcome in enumerate(outcomes):
        items.append(scorer.for_sample(i).score(outcome.x_tilde, int(y[i]), index=i))
    return items


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Run one experiment: clean baseline plus one row per budget value.

    Writes report.csv/report.txt, one RC-curve CSV per row, an SVG with all
    curves, and a manifest. Any stage failure removes the partial output
    directory and re-raises with the stage name attached.
    """
    exp_dir = Path(cfg.out_dir) / cfg.name
    stage = "setup"
    try:
        exp_dir.mkdir(parents=True, exist_ok=True)
        stage = "train-victim"
        bundle = build_victim(cfg)

        stage = "train-proxy"
        black_box = cfg.attack.mode == "black_box"
        proxy = build_proxy(cfg) if black_box else ()

        stage = "save-models"
        files = []
        for i, model in enumerate(bundle.models):
            name = f"victim_{i}.model"
            modelio.save_model(exp_dir / name, model, seed=cfg.seed)
            files.append(name)
        for i, model in enumerate(proxy):
            name = f"proxy_{i}.model"
            modelio.save_model(exp_dir / name, model, seed=cfg.seed)
            files.append(name)

        predict_fn = bundle.predict_fn
        if black_box:
            # the attack sees the victim only through files + label queries
            loaded = tuple(modelio.load_model(exp_dir / f"victim_{i}.model")[0]
                           for i in range(len(bundle.models)))
            query_scorer = replace(bundle.scorer, models=loaded)
            predict_fn = query_scorer.predict

        gradient_models = proxy if black_box else bundle.models

        stage = "dataset"
        test = gen_dataset(cfg.data.spec("test"), cfg.seed, "test")
        X, y = test.features, test.labels

        attack_labels = y
        if cfg.attack.proxy_truth:
            # label the attack by the gradient source's own predictions
            ref = confidence.indirect_softmax_scorer(gradient_models)
            attack_labels = np.array([ref.predict(X[i]) for i in range(len(X))])

        stage = "attack-eval"
        eps_grid = [0.0] + sorted({e for e in cfg.attack.epsilons if e > 0.0})
        rows, query_counts, curves = [], [], []
        target_cov = None
        for eps in eps_grid:
            if eps == 0.0:
                items = confidence.score_dataset(bundle.scorer, X, y)
                effective, queries = 0.0, 0
            else:
                atk = attack.AttackConfig(eps, cfg.attack.decay,
                                          cfg.attack.max_iterations, cfg.attack.mode,
                                          cfg.attack.target, cfg.attack.clamp)
                outcomes, summary = attack.attack_dataset(
                    predict_fn, gradient_models, bundle.scorer, X, attack_labels, atk)
                items = _score_attacked(bundle.scorer, X, y, outcomes)
                effective, queries = summary.mean_effective_epsilon, summary.query_count
            sel_risk = None
            if bundle.theta is not None:
                if target_cov is None:  # clean empirical coverage at the threshold
                    target_cov = metrics.empirical_coverage(items, bundle.theta)
                sel_risk = risk_at_coverage(items, target_cov)
            rows.append(metrics.evaluate(items, epsilon=eps, effective_epsilon=effective,
                                         selective_risk=sel_risk))
            query_counts.append(queries)
            curve = metrics.rc_curve(items)
            curves.append((f"eps={eps:g}", curve))
            curve_file = f"rc_eps_{eps:g}.csv"
            (exp_dir / curve_file).write_text(metrics.rc_curve_csv(curve))
            files.append(curve_file)

        stage = "report"
        manifest = RunManifest(cfg.name, config_hash(cfg), tuple(rows),
                               tuple(files), tuple(query_counts))
        (exp_dir / "report.csv").write_text(report_csv(manifest))
        (exp_dir / "report.txt").write_text(report_table(manifest))
        svgplot.render_rc_svg(curves, exp_dir / "curves.svg", title=cfg.name)
        (exp_dir / "config.ini").write_text(config_text(cfg))
        files = list(manifest.files) + ["report.csv", "report.txt", "curves.svg",
                                        "config.ini", "manifest.txt"]
        manifest = replace(manifest, files=tuple(files))
        (exp_dir / "manifest.txt").write_text(manifest_text(manifest))
        return manifest
    except AceLabError as exc:
        shutil.rmtree(exp_dir, ignore_errors=True)
        raise type(exc)(f"stage {stage}: {exc}") from exc
    except Exception:
        shutil.rmtree(exp_dir, ignore_errors=True)
        raise


def manifest_text(manifest: RunManifest) -> str:
    lines = [f"name {manifest.name}", f"config_hash {manifest.config_hash}"]
    for row, queries in zip(manifest.rows, manifest.query_counts):
        lines.append(f"queries eps={row.epsilon:g} {queries}")
    for name in manifest.files:
        lines.append(f"file {name}")
    return "\n".join(lines) + "\n"


def report_csv(manifest: RunManifest) -> str:
    """Full-precision CSV that parses back to identical values."""
    with_sel = any(r.selective_risk is not None for r in manifest.rows)
    header = "epsilon,effective_epsilon,aurc_x1000,nll,brier,accuracy_percent"
    if with_sel:
        header += ",selective_risk"
    lines = [header]
    for r in manifest.rows:
        row = (f"{r.epsilon:.17g},{r.effective_epsilon:.17g},{r.aurc_x1000:.17g},"
               f"{r.nll:.17g},{r.brier:.17g},{r.accuracy_percent:.17g}")
        if with_sel:
            row += f",{r.selective_risk:.17g}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> tuple[metrics.EvalReport, ...]:
    lines = text.strip().splitlines()
    with_sel = lines[0].endswith(",selective_risk")
    rows = []
    for line in lines[1:]:
        vals = [float(v) for v in line.split(",")]
        rows.append(metrics.EvalReport(vals[0], vals[1], vals[2], vals[3], vals[4],
                                       vals[5], vals[6] if with_sel else None))
    return tuple(rows)


def report_table(manifest: RunManifest) -> str:
    """Aligned text table in the summary-row column order."""
    with_sel = any(r.selective_risk is not None for r in manifest.rows)
    headers = ["epsilon", "eff_eps", "AURC(x1e3)", "NLL", "Brier", "Acc(%)"]
    if with_sel:
        headers.insert(2, "SelRisk")
    table = [headers]
    for r in manifest.rows:
        row = [f"{r.epsilon:g}", f"{r.effective_epsilon:.6g}", f"{r.aurc_x1000:.1f}",
               f"{r.nll:.3f}", f"{r.brier:.3f}", f"{r.accuracy_percent:.2f}"]
        if with_sel:
            row.insert(2, f"{r.selective_risk:.4f}")
        table.append(row)
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
             for row in table]
    return f"== {manifest.name} ==\n" + "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# The bench matrix: the full experiment grid on the standard desk benchmark.

def bench_experiments(base: ExperimentConfig) -> list[ExperimentConfig]:
    a = base.attack
    white = replace(a, epsilons=WHITE_EPSILONS, mode="white_box", target="direct")
    black = replace(a, epsilons=BLACK_EPSILONS, mode="black_box",
                    target="indirect_softmax")
    v = base.victim
    exps = [
        replace(base, name="softmax_whitebox",
                scorer=replace(base.scorer, kind="softmax_response"), attack=white),
        replace(base, name="softmax_blackbox",
                scorer=replace(base.scorer, kind="softmax_response"), attack=black,
                proxy=replace(base.proxy, size=5, foreign=False)),
    ]
    for size in (3, 5):
        exps.append(replace(
            base, name=f"ensemble_whitebox_{size}",
            victim=replace(v, ensemble_size=size),
            scorer=replace(base.scorer, kind="ensemble_mean_softmax"), attack=white))
    exps.append(replace(
        base, name="ensemble_blackbox_matching",
        victim=replace(v, ensemble_size=5),
        scorer=replace(base.scorer, kind="ensemble_mean_softmax"), attack=black,
        proxy=replace(base.proxy, size=5, foreign=False)))
    exps.append(replace(
        base, name="ensemble_blackbox_foreign",
        victim=replace(v, ensemble_size=5),
        scorer=replace(base.scorer, kind="ensemble_mean_softmax"), attack=black,
        proxy=replace(base.proxy, size=3, foreign=True)))
    for passes in (10, 30):
        mc_victim = replace(v, dropout=0.1)
        exps.append(replace(
            base, name=f"mc_direct_n{passes}", victim=mc_victim,
            scorer=replace(base.scorer, kind="mc_entropy", passes=passes),
            attack=white))
        exps.append(replace(
            base, name=f"mc_indirect_n{passes}", victim=mc_victim,
            scorer=replace(base.scorer, kind="mc_entropy", passes=passes),
            attack=replace(white, target="indirect_softmax")))
    for target, tag in (("direct", "selnet_direct"), ("indirect_softmax", "selnet_indirect")):
        exps.append(replace(
            base, name=tag,
            victim=replace(v, epochs=150),  # the three-head loss converges sooner
            scorer=replace(base.scorer, kind="selector_head"),
            attack=replace(white, target=target)))
    return exps


@dataclass(frozen=True)
class CheckResult:
    status: str  # PASS | WARN | FAIL
    name: str
    detail: str

    def line(self) -> str:
        return f"{self.status} {self.name}: {self.detail}"


def _fmt(values) -> str:
    return "[" + ", ".join(f"{v:.2f}" for v in values) + "]"


def bench_checks(manifests: dict[str, RunManifest]) -> list[CheckResult]:
    """Hard invariants plus the soft resilience/indirect trends (pass/warn)."""
    out = []

    for name, man in sorted(manifests.items()):
        accs = [r.accuracy_percent for r in man.rows]
        if all(acc == accs[0] for acc in accs):
            out.append(CheckResult("PASS", f"accuracy-invariance {name}",
                                   f"constant at {accs[0]:.2f}%"))
        else:
            out.append(CheckResult("FAIL", f"accuracy-invariance {name}", _fmt(accs)))

    sw = manifests.get("softmax_whitebox")
    if sw is not None:
        aurcs = [r.aurc_x1000 for r in sw.rows]
        increasing = all(b > a for a, b in zip(aurcs, aurcs[1:]))
        ratio = aurcs[-1] / aurcs[0] if aurcs[0] > 0 else float("inf")
        if increasing and ratio >= 3.0:
            out.append(CheckResult("PASS", "aurc-degradation softmax_whitebox",
                                   f"AURC {_fmt(aurcs)} (x{ratio:.1f})"))
        else:
            out.append(CheckResult("FAIL", "aurc-degradation softmax_whitebox",
                                   f"AURC {_fmt(aurcs)} (x{ratio:.1f})"))

    # soft: bigger ensembles should degrade less (10% slack band)
    def degradation(man):
        return man.rows[-1].aurc_x1000 - man.rows[0].aurc_x1000

    trio = [manifests.get("softmax_whitebox"), manifests.get("ensemble_whitebox_3"),
            manifests.get("ensemble_whitebox_5")]
    if all(m is not None for m in trio):
        d1, d3, d5 = (degradation(m) for m in trio)
        ok = d5 <= d3 * 1.1 and d3 <= d1 * 1.1
        out.append(CheckResult(
            "PASS" if ok else "WARN", "ensemble-resilience",
            f"AURC degradation sizes 1/3/5 = {_fmt([d1, d3, d5])}"))

    # soft: indirect softmax targeting should hurt at least as much at the
    # largest budget (10% slack band)
    for passes in (10, 30):
        direct = manifests.get(f"mc_direct_n{passes}")
        indirect = manifests.get(f"mc_indirect_n{passes}")
        if direct is None or indirect is None:
            continue
        dd, di = degradation(direct), degradation(indirect)
        ok = di >= dd * 0.9
        out.append(CheckResult(
            "PASS" if ok else "WARN", f"mc-indirect-vs-direct n{passes}",
            f"damage direct={dd:.2f} indirect={di:.2f}"))
    return out


def run_bench(base: ExperimentConfig, check: bool = False) -> dict[str, RunManifest]:
    """Run the whole matrix; with `check`, fail on any hard invariant breach."""
    manifests = {}
    for cfg in bench_experiments(base):
        logger.info("bench: running %s", cfg.name)
        manifests[cfg.name] = run_experiment(cfg)
    results = bench_checks(manifests)
    out_root = Path(base.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "checks.txt").write_text("".join(r.line() + "\n" for r in results))
    (out_root / "summary.txt").write_text(
        "\n".join(report_table(m) for _, m in sorted(manifests.items())))
    failures = [r for r in results if r.status == "FAIL"]
    if check and failures:
        raise CheckFailure("; ".join(r.line() for r in failures))
    return manifests
