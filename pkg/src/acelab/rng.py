"""Counter-based RNG state for reproducible dropout masks and training.

Every source of randomness in the package is a (seed, counter) pair; equal
pairs always produce equal streams, so per-sample substreams can be derived
by bumping the counter and parallel runs match serial ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class RngState:
    seed: int
    counter: int = 0

    def __post_init__(self) -> None:
        if not (0 <= self.seed <= _U64_MAX):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.counter < 0:
            raise ConfigError(f"counter must be non-negative, got {self.counter}")

    def generator(self) -> np.random.Generator:
        """Fresh generator for this (seed, counter) pair; same pair, same stream."""
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.counter,))
        return np.random.default_rng(seq)

    def advance(self, steps: int = 1) -> "RngState":
        """Derive an independent substream by bumping the counter."""
        return RngState(self.seed, self.counter + steps)
