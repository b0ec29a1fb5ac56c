"""Command-line interface.

Subcommands: gen-data, train, attack, eval, rc-curve, report, bench.
Exit codes: 0 success, 2 configuration error, 3 numeric error,
4 bench acceptance-check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import attack, confidence, data, harness, metrics, modelio, svgplot
from .config import ExperimentConfig, load_config
from .errors import (AceLabError, CheckFailure, ConfigError, DimensionError,
                     DomainError, NumericError, TrainingError)


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    atk = cfg.attack
    if getattr(args, "mode", None):
        atk = replace(atk, mode={"whitebox": "white_box", "blackbox": "black_box"}[args.mode])
    if getattr(args, "target", None):
        atk = replace(atk, target={"direct": "direct", "indirect": "indirect_softmax"}[args.target])
    if getattr(args, "epsilons", None):
        atk = replace(atk, epsilons=tuple(float(v) for v in args.epsilons.split(",")))
    return replace(cfg, attack=atk)


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in data.SPLITS:
        ds = data.gen_dataset(cfg.data.spec(split), cfg.seed, split)
        path = out / f"{split}.csv"
        path.write_text(data.dataset_csv(ds))
        print(f"wrote {path} ({len(ds)} samples)")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = harness.build_victim(cfg)
    for i, model in enumerate(bundle.models):
        path = out / f"victim_{i}.model"
        modelio.save_model(path, model, seed=cfg.seed)
        print(f"wrote {path}")
    test = data.gen_dataset(cfg.data.spec("test"), cfg.seed, "test")
    correct = sum(bundle.scorer.predict(x) == y
                  for x, y in zip(test.features, test.labels))
    print(f"test accuracy: {100.0 * correct / len(test):.2f}%")
    if bundle.theta is not None:
        print(f"calibrated selector threshold: {bundle.theta:.6f}")
    return 0


def cmd_attack(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = harness.build_victim(cfg)
    gradient_models = bundle.models
    if cfg.attack.mode == "black_box":
        gradient_models = harness.build_proxy(cfg)
    test = data.gen_dataset(cfg.data.spec("test"), cfg.seed, "test")
    for eps in sorted({e for e in cfg.attack.epsilons if e > 0.0}):
        atk = attack.AttackConfig(eps, cfg.attack.decay, cfg.attack.max_iterations,
                                  cfg.attack.mode, cfg.attack.target, cfg.attack.clamp)
        outcomes, summary = attack.attack_dataset(
            bundle.predict_fn, gradient_models, bundle.scorer,
            test.features, test.labels, atk)
        perturbed = data.LabeledDataset(
            np.vstack([o.x_tilde for o in outcomes]), test.labels, "test")
        path = out / f"attacked_eps_{eps:g}.csv"
        path.write_text(data.dataset_csv(perturbed))
        print(f"wrote {path}  mean effective eps={summary.mean_effective_epsilon:.6g}  "
              f"queries={summary.query_count}  perturbed={summary.fraction_perturbed:.3f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    manifest = harness.run_experiment(cfg)
    print(harness.report_table(manifest), end="")
    print(f"outputs in {Path(cfg.out_dir) / cfg.name}")
    return 0


def cmd_rc_curve(args) -> int:
    cfg = _load(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle = harness.build_victim(cfg)
    test = data.gen_dataset(cfg.data.spec("test"), cfg.seed, "test")
    items = confidence.score_dataset(bundle.scorer, test.features, test.labels)
    curve = metrics.rc_curve(items)
    (out / "rc_clean.csv").write_text(metrics.rc_curve_csv(curve))
    n_incorrect = sum(it.loss01 for it in items)
    worst = metrics.worst_case_rc(len(items) - n_incorrect, n_incorrect)
    svgplot.render_rc_svg([("observed", curve), ("worst-case", worst)],
                          out / "rc_clean.svg", title=f"{cfg.scorer.kind} (clean)")
    print(f"wrote {out / 'rc_clean.csv'} and {out / 'rc_clean.svg'}")
    print(f"AURC x1000: {metrics.aurc(items) * 1000.0:.1f}")
    return 0


def cmd_report(args) -> int:
    cfg = _load(args)
    root = Path(cfg.out_dir)
    reports = sorted(root.glob("**/report.csv"))
    if not reports:
        raise ConfigError(f"no report.csv found under {root}")
    for path in reports:
        rows = harness.parse_report_csv(path.read_text())
        manifest = harness.RunManifest(path.parent.name, "", rows, (), ())
        print(harness.report_table(manifest))
    return 0


def cmd_bench(args) -> int:
    cfg = _load(args)
    harness.run_bench(cfg, check=args.check)
    print((Path(cfg.out_dir) / "summary.txt").read_text())
    print((Path(cfg.out_dir) / "checks.txt").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acelab",
        description="Attack the confidence estimates of small classifiers "
                    "and measure the selective-classification damage.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode_flags=True):
        p.add_argument("--config", help="experiment config file (INI-style)")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory override")
        if mode_flags:
            p.add_argument("--mode", choices=("whitebox", "blackbox"))
            p.add_argument("--target", choices=("direct", "indirect"))
            p.add_argument("--epsilons", help="comma-separated budget list")

    common(sub.add_parser("gen-data", help="write train/validation/test CSVs"),
           mode_flags=False)
    common(sub.add_parser("train", help="train the configured victim"),
           mode_flags=False)
    common(sub.add_parser("attack", help="write perturbed test sets per budget"))
    common(sub.add_parser("eval", help="full run: train, attack, evaluate, report"))
    common(sub.add_parser("rc-curve", help="clean risk-coverage curve and SVG"),
           mode_flags=False)
    common(sub.add_parser("report", help="print report tables found under --out"),
           mode_flags=False)
    bench = sub.add_parser("bench", help="run the full experiment matrix")
    common(bench)
    bench.add_argument("--check", action="store_true",
                       help="fail (exit 4) if a hard invariant breaks")
    return parser


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "eval": cmd_eval,
    "rc-curve": cmd_rc_curve,
    "report": cmd_report,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except CheckFailure as exc:
        print(f"acceptance check failed: {exc}", file=sys.stderr)
        return 4
    except (NumericError, TrainingError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DimensionError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AceLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
