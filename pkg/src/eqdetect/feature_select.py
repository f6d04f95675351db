"""Genetic wrapper feature selection over user-declared feature groups.

A chromosome holds one allele per group; allele ``i`` names which member of
group ``i`` is kept (``-1`` means "none" when optional membership is on).
Fitness combines the surrogate's cross-validated error on the decoded
subset with the fraction of features kept, and is minimized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset, FeatureGroups
from .surrogate import cv_normalized_mae

__all__ = [
    "FsConfig",
    "FsResult",
    "decode",
    "fs_fitness",
    "fs_select",
    "fs_crossover",
    "fs_mutate",
    "run_feature_selection",
]

ABSENT = -1


@dataclass(frozen=True)
class FsConfig:
    omega_fs: float = 0.9
    delta: float = 0.05
    population: int = 50
    generations: int = 20
    seed: int = 0
    k: int = 5
    crossover_rate: float = 0.7
    optional_membership: bool = False

    def __post_init__(self):
        if not 0.0 <= self.omega_fs <= 1.0:
            raise ValueError("omega_fs must be in [0, 1]")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must be in [0, 1]")
        if self.population < 2:
            raise ValueError("population must be >= 2")


def decode(chrom, groups: FeatureGroups) -> tuple[int, ...]:
    """Feature column indices selected by ``chrom``."""
    return tuple(sorted(g[a] for g, a in zip(groups.groups, chrom) if a != ABSENT))


def fs_fitness(chrom, data: Dataset, groups: FeatureGroups, cfg: FsConfig,
               oracle: Callable[[Dataset], float] | None = None) -> float:
    """``omega * M(S) + (1 - omega) * |S| / |F|``, lower is better.

    ``M`` is the oracle's error in [0, 1] (default: fold-mean normalized MAE
    of the forest member). An empty subset scores the worst value, 1.
    """
    subset = decode(chrom, groups)
    if not subset:
        return 1.0
    if oracle is None:
        oracle = lambda d: cv_normalized_mae(d, k=cfg.k, seed=cfg.seed)  # noqa: E731
    m = float(oracle(data.columns(subset)))
    return cfg.omega_fs * m + (1.0 - cfg.omega_fs) * len(subset) / groups.n_features


def fs_select(population, fitness, delta: float, rng) -> list:
    """Tournament with royalty.

    The best ``ceil(delta * N)`` chromosomes are kept once each; the other
    slots are drawn with replacement with probability proportional to
    ``1 - fitness``. The result is shuffled and has the input's size.
    """
    rng = np.random.default_rng(rng)
    n = len(population)
    if n == 0:
        raise ValueError("empty population")
    fit = np.asarray(fitness, dtype=float)
    order = np.argsort(fit, kind="stable")
    n_royal = min(n, math.ceil(delta * n - 1e-12))
    chosen = [population[i] for i in order[:n_royal]]
    score = np.clip(1.0 - fit, 0.0, None)
    p = score / score.sum() if score.sum() > 0 else np.full(n, 1.0 / n)
    picks = rng.choice(n, size=n - n_royal, p=p)
    chosen.extend(population[i] for i in picks)
    perm = rng.permutation(n)
    return [chosen[i] for i in perm]


def fs_crossover(a, b, rng, point: int | None = None):
    """Single-point crossover: ``a[:i] + b[i:]`` and ``b[:i] + a[i:]``."""
    if len(a) != len(b):
        raise ValueError("parents differ in length")
    if point is None:
        point = int(np.random.default_rng(rng).integers(0, len(a) + 1))
    a, b = tuple(a), tuple(b)
    return a[:point] + b[point:], b[:point] + a[point:]


def fs_mutate(chrom, group_sizes, rng, optional_membership: bool = False):
    """Mutate allele ``i`` with probability ``|group_i| / |F|``.

    A mutated allele moves to a different member of its group (or, with
    optional membership, possibly to "none"); groups with a single choice
    never change.
    """
    rng = np.random.default_rng(rng)
    sizes = np.asarray(group_sizes, dtype=int)
    total = sizes.sum()
    out = list(chrom)
    for i, (a, s) in enumerate(zip(chrom, sizes)):
        choices = list(range(s)) + ([ABSENT] if optional_membership else [])
        if len(choices) < 2 or rng.random() >= s / total:
            continue
        others = [c for c in choices if c != a]
        out[i] = others[rng.integers(len(others))]
    return tuple(out)


@dataclass
class FsResult:
    selected: tuple[int, ...]
    chromosome: tuple[int, ...]
    fitness: float | None
    trace: list = field(default_factory=list)
    evaluations: int = 0
    generations_run: int = 0

    def summary(self, names=None) -> dict:
        return {
            "selected": [names[i] for i in self.selected] if names else list(self.selected),
            "chromosome": list(self.chromosome),
            "fitness": self.fitness,
            "trace": list(self.trace),
            "evaluations": self.evaluations,
            "generations": self.generations_run,
        }


def run_feature_selection(data: Dataset, groups: FeatureGroups, cfg: FsConfig = FsConfig(),
                          oracle: Callable[[Dataset], float] | None = None) -> FsResult:
    """Evolve group representatives and return the best subset ever seen.

    ``trace[g]`` is the best-ever fitness after generation ``g`` (entry 0 is
    the initial population).
    """
    if groups.n_features != data.n_features:
        raise ValueError("feature groups do not match the data columns")
    sizes = groups.sizes
    opt = cfg.optional_membership
    n_choices = [s + (1 if opt else 0) for s in sizes]
    if all(c == 1 for c in n_choices):
        chrom = tuple(0 for _ in sizes)
        return FsResult(decode(chrom, groups), chrom, None)

    rng = np.random.default_rng(cfg.seed)
    memo: dict[tuple, float] = {}

    def fitness(ch):
        if ch not in memo:
            memo[ch] = fs_fitness(ch, data, groups, cfg, oracle)
        return memo[ch]

    def random_chrom():
        return tuple(int(rng.integers(c)) - (1 if opt else 0) for c in n_choices)

    pop = [random_chrom() for _ in range(cfg.population)]
    fits = [fitness(c) for c in pop]
    best = min(zip(fits, pop))
    trace = [best[0]]
    n_royal = min(len(pop), math.ceil(cfg.delta * len(pop) - 1e-12))
    for _ in range(cfg.generations):
        order = np.argsort(fits, kind="stable")
        royals = [pop[i] for i in order[:n_royal]]
        rest = fs_select(pop, fits, 0.0, rng)[: len(pop) - n_royal]
        children = []
        for i in range(0, len(rest) - 1, 2):
            a, b = rest[i], rest[i + 1]
            if rng.random() < cfg.crossover_rate:
                a, b = fs_crossover(a, b, rng)
            children.extend((a, b))
        if len(rest) % 2:
            children.append(rest[-1])
        children = [fs_mutate(c, sizes, rng, opt) for c in children]
        pop = royals + children
        fits = [fitness(c) for c in pop]
        best = min(best, min(zip(fits, pop)))
        trace.append(best[0])
    return FsResult(decode(best[1], groups), best[1], best[0], trace,
                    evaluations=len(memo), generations_run=cfg.generations)
