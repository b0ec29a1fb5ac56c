"""Synthetic dataset generators and the dataset CSV format.

Two generator families: Gaussian blobs on a circle of configurable radius
(the linear-ish workload) and concentric rings (a nonlinear one), plus a
label-noise overlay that reassigns a fraction of labels uniformly to other
classes. Features are standardized by the generator's analytic per-dimension
scale, not by sample statistics, so every split shares the exact same
scaling and the perturbation budgets in configs are comparable across runs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import RngState

SPLITS = ("train", "validation", "test")
_SPLIT_STREAM = {"train": 0, "validation": 1, "test": 2}


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    n: int
    features: int = 2
    classes: int = 2
    margin: float = 6.0
    noise_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("blobs", "rings"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.classes < 2 or self.n < self.classes:
            raise ConfigError("need n >= classes >= 2")
        if self.kind == "rings" and self.classes != 2:
            raise ConfigError("rings generator is two-class")
        if self.features < 2:
            raise ConfigError("generators need at least 2 feature dimensions")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if not (0.0 <= self.noise_rate < 1.0):
            raise ConfigError("noise_rate must be in [0, 1)")


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    split: str

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[0] != labels.shape[0]:
            raise ConfigError("features must be (n, d) with one label per row")
        if not np.all(np.isfinite(feats)):
            raise ConfigError("features contain non-finite values")
        if np.any(labels < 0):
            raise ConfigError("labels must be non-negative")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]


def _blob_centers(classes: int, radius: float) -> np.ndarray:
    # half-step angle offset keeps centers off the coordinate axes (for K=4
    # they sit on the diagonals), which spreads the class wedges evenly
    # around the sign-step lattice {-1,0,1}^2
    angles = 2.0 * np.pi * (np.arange(classes) + 0.5) / classes
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def gen_dataset(spec: DatasetSpec, seed: int, split: str = "train") -> LabeledDataset:
    """Deterministic per (spec, seed, split); splits use disjoint substreams."""
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}")
    gen = RngState(seed, counter=_SPLIT_STREAM[split]).generator()
    n, d, k = spec.n, spec.features, spec.classes

    labels = gen.integers(0, k, size=n)
    if spec.kind == "blobs":
        centers2d = _blob_centers(k, spec.margin)
        feats = gen.normal(0.0, 1.0, size=(n, d))
        feats[:, :2] += centers2d[labels]
        scale = np.ones(d)
        scale[:2] = np.sqrt(1.0 + np.mean(centers2d ** 2, axis=0))
    else:
        radii = spec.margin * (1.0 + labels)
        radial_noise = spec.margin / 8.0
        r = radii + gen.normal(0.0, radial_noise, size=n)
        theta = gen.uniform(0.0, 2.0 * np.pi, size=n)
        feats = gen.normal(0.0, 1.0, size=(n, d))
        feats[:, 0] = r * np.cos(theta)
        feats[:, 1] = r * np.sin(theta)
        # E[x^2] = (r^2 + sigma_r^2)/2 per planar dim, averaged over classes
        mean_r2 = np.mean((spec.margin * (1.0 + np.arange(k))) ** 2)
        scale = np.ones(d)
        scale[:2] = np.sqrt((mean_r2 + radial_noise ** 2) / 2.0)
    feats /= scale

    if spec.noise_rate > 0.0:
        n_flip = int(round(spec.noise_rate * n))
        flip = gen.choice(n, size=n_flip, replace=False)
        labels[flip] = (labels[flip] + gen.integers(1, k, size=n_flip)) % k

    return LabeledDataset(feats, labels, split)


def dataset_csv(data: LabeledDataset) -> str:
    """CSV text with header ``label,f0,f1,...`` and exact float round-trip."""
    d = data.features.shape[1]
    buf = io.StringIO()
    buf.write("label," + ",".join(f"f{i}" for i in range(d)) + "\n")
    for label, row in zip(data.labels, data.features):
        buf.write(str(int(label)) + "," + ",".join(f"{v:.17g}" for v in row) + "\n")
    return buf.getvalue()


def parse_dataset_csv(text: str, split: str = "test") -> LabeledDataset:
    lines = text.strip().splitlines()
    if not lines or not lines[0].startswith("label,"):
        raise ConfigError("dataset CSV must start with a 'label,f0,...' header")
    labels, rows = [], []
    for line in lines[1:]:
        parts = line.split(",")
        labels.append(int(parts[0]))
        rows.append([float(v) for v in parts[1:]])
    return LabeledDataset(np.array(rows), np.array(labels), split)
