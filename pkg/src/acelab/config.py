"""Experiment configuration: dataclasses plus the flat key=value file format.

The file format is INI-style sections of ``key = value`` pairs, one section
per pipeline stage. Unknown keys are rejected so typos fail loudly. Every
piece of randomness in a run derives from the single [experiment] seed.

The perturbation budgets in a config are in units of the standardized
feature scale (the generators emit unit-variance features); budgets quoted
for 8-bit pixel intensities elsewhere are not directly comparable.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace

from .data import DatasetSpec
from .errors import ConfigError

_MODE_ALIASES = {"whitebox": "white_box", "white_box": "white_box",
                 "blackbox": "black_box", "black_box": "black_box"}
_TARGET_ALIASES = {"direct": "direct", "indirect": "indirect_softmax",
                   "indirect_softmax": "indirect_softmax"}


@dataclass(frozen=True)
class DataConfig:
    kind: str = "blobs"
    n_train: int = 4000
    n_val: int = 1000
    n_test: int = 2000
    features: int = 2
    classes: int = 4
    margin: float = 10.0
    noise_rate: float = 0.1

    def spec(self, split: str) -> DatasetSpec:
        n = {"train": self.n_train, "validation": self.n_val, "test": self.n_test}[split]
        return DatasetSpec(self.kind, n, self.features, self.classes,
                           self.margin, self.noise_rate)


@dataclass(frozen=True)
class VictimConfig:
    hidden: tuple[int, ...] = (32, 32)
    dropout: float = 0.0
    ensemble_size: int = 1
    epochs: int = 400
    batch_size: int = 64
    learning_rate: float = 0.02
    momentum: float = 0.9
    # selective-classifier extras, used only when the scorer is selector_head
    target_coverage: float = 0.7
    constraint_weight: float = 32.0
    aux_mix: float = 0.5
    selector_hidden: int = 16


@dataclass(frozen=True)
class ProxyConfig:
    size: int = 5
    hidden: tuple[int, ...] = (32, 32)
    foreign: bool = False
    foreign_hidden: tuple[tuple[int, ...], ...] = ((16, 16), (48, 24), (24, 48))
    disjoint_data: bool = False


@dataclass(frozen=True)
class ScorerConfig:
    kind: str = "softmax_response"
    passes: int = 10


@dataclass(frozen=True)
class AttackConfigSection:
    epsilons: tuple[float, ...] = (0.01, 0.05, 0.2)
    decay: float = 0.5
    max_iterations: int = 15
    mode: str = "white_box"
    target: str = "direct"
    clamp: tuple[float, float] | None = None
    # attackers without ground truth can substitute a reference model's
    # predictions (the gradient source's) for the true labels
    proxy_truth: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 7
    out_dir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    victim: VictimConfig = field(default_factory=VictimConfig)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    attack: AttackConfigSection = field(default_factory=AttackConfigSection)


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_clamp(text: str):
    low = text.strip().lower()
    if low in ("none", "off", ""):
        return None
    vals = _parse_float_tuple(text)
    if len(vals) != 2:
        raise ConfigError("clamp needs two comma-separated bounds or 'none'")
    return vals


def _coerce(section_cls, section_name: str, raw: dict) -> dict:
    """Convert raw strings to the dataclass field types; reject unknown keys."""
    by_name = {f.name: f for f in fields(section_cls)}
    out = {}
    for key, value in raw.items():
        if key not in by_name:
            raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
        hint = by_name[key].type
        try:
            if key == "clamp":
                out[key] = _parse_clamp(value)
            elif key == "mode":
                out[key] = _alias(value, _MODE_ALIASES, "mode")
            elif key == "target":
                out[key] = _alias(value, _TARGET_ALIASES, "target")
            elif key in ("hidden", "selector_hidden") and "tuple" in str(hint):
                out[key] = _parse_int_tuple(value)
            elif key == "foreign_hidden":
                out[key] = tuple(_parse_int_tuple(group)
                                 for group in value.split(";") if group.strip())
            elif key == "epsilons":
                out[key] = _parse_float_tuple(value)
            elif "bool" in str(hint):
                out[key] = _parse_bool(value)
            elif "int" in str(hint):
                out[key] = int(value)
            elif "float" in str(hint):
                out[key] = float(value)
            else:
                out[key] = value.strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r} in [{section_name}]: {value!r}") from exc
    return out


def _alias(value: str, table: dict, what: str) -> str:
    key = value.strip().lower()
    if key not in table:
        raise ConfigError(f"unknown {what} {value!r} (choose from {sorted(set(table))})")
    return table[key]


_SECTIONS = {
    "experiment": None,  # flat keys on ExperimentConfig itself
    "dataset": ("data", DataConfig),
    "victim": ("victim", VictimConfig),
    "proxy": ("proxy", ProxyConfig),
    "scorer": ("scorer", ScorerConfig),
    "attack": ("attack", AttackConfigSection),
}


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc

    cfg = ExperimentConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        raw = dict(parser.items(section))
        if section == "experiment":
            allowed = {"name", "seed", "out_dir"}
            unknown = set(raw) - allowed
            if unknown:
                raise ConfigError(f"unknown key(s) in [experiment]: {sorted(unknown)}")
            cfg = replace(cfg,
                          name=raw.get("name", cfg.name).strip(),
                          seed=int(raw["seed"]) if "seed" in raw else cfg.seed,
                          out_dir=raw.get("out_dir", cfg.out_dir).strip())
        else:
            attr, cls = _SECTIONS[section]
            try:
                section_cfg = replace(getattr(cfg, attr), **_coerce(cls, section, raw))
            except TypeError as exc:
                raise ConfigError(str(exc)) from exc
            cfg = replace(cfg, **{attr: section_cfg})
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _validate(cfg: ExperimentConfig) -> None:
    from .confidence import KINDS
    if cfg.scorer.kind not in KINDS:
        raise ConfigError(f"unknown scorer kind {cfg.scorer.kind!r}")
    if any(e < 0 for e in cfg.attack.epsilons):
        raise ConfigError("epsilons must be non-negative")
    if cfg.victim.ensemble_size < 1:
        raise ConfigError("ensemble_size must be >= 1")
    if cfg.scorer.kind == "ensemble_mean_softmax" and cfg.victim.ensemble_size < 2:
        raise ConfigError("ensemble_mean_softmax scorer needs ensemble_size >= 2")
    if cfg.scorer.kind in ("mc_entropy", "mc_variance") and cfg.victim.dropout <= 0:
        raise ConfigError(f"{cfg.scorer.kind} needs a victim with dropout > 0")
    cfg.data.spec("train")  # surfaces dataset errors early


def config_text(cfg: ExperimentConfig) -> str:
    """Canonical rendering of a config; the output location is not part of
    the experiment identity, so out_dir is omitted."""
    buf = io.StringIO()
    buf.write("[experiment]\n")
    buf.write(f"name = {cfg.name}\nseed = {cfg.seed}\n")

    def section(title, obj, skip=()):
        buf.write(f"\n[{title}]\n")
        for f in fields(obj):
            if f.name in skip:
                continue
            value = getattr(obj, f.name)
            if isinstance(value, tuple) and value and isinstance(value[0], tuple):
                text = ";".join(",".join(str(v) for v in g) for g in value)
            elif isinstance(value, tuple):
                text = ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
            elif value is None:
                text = "none"
            else:
                text = str(value)
            buf.write(f"{f.name} = {text}\n")

    section("dataset", cfg.data)
    section("victim", cfg.victim)
    section("proxy", cfg.proxy)
    section("scorer", cfg.scorer)
    section("attack", cfg.attack)
    return buf.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_text(cfg).encode()).hexdigest()[:16]
