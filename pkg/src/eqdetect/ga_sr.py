"""Genetic-programming symbolic regression with repeated runs and a stability verdict."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import KFold

from .dataset import Dataset
from .expr import (DEFAULT_FUNCTIONS, ExprTree, FunctionSet, canonicalize, evaluate,
                   point_mutate, random_full_tree, subtree_crossover, to_infix,
                   to_prefix)
from .metrics import LossSpec, MetricsVector, compute_metrics, loss_from_norms, target_scale

__all__ = [
    "GaSrConfig",
    "GaRun",
    "GaSrResult",
    "FoldEvaluator",
    "ga_evaluate",
    "ga_step",
    "run_ga_sr",
    "leaf_weights",
    "DEFAULT_PSI_GRID",
]

DEFAULT_PSI_GRID = (0.010, 0.015, 0.020, 0.025)
M_MAX = 3


@dataclass(frozen=True)
class GaSrConfig:
    """GA-SR settings.

    ``psi_grid`` lists the parsimony values; with more than one entry a short
    pilot (``grid_runs`` runs per value on an inner split) picks the one with
    the best mean validation R^2. ``loss.psi`` is ignored in favour of the
    grid. ``evaluation`` is ``"fold_mean"`` (mean held-out fold loss) or
    ``"whole"`` (single pass over all training rows). With
    ``normalize_residuals`` the residual norms are divided by the training
    target's standard deviation.
    """

    population: int = 500
    generations: int = 50
    init_depth: int = 3
    psi_grid: tuple = (0.05,)
    loss: LossSpec = LossSpec()
    feature_weights: tuple | None = None
    runs: int = 20
    chi: float = 0.5
    k: int = 5
    seed: int = 0
    delta: float = 0.05
    crossover_rate: float = 0.7
    max_size: int = 31
    const_range: tuple = (-5.0, 5.0)
    functions: tuple = ("add", "sub", "mul", "div")
    tp_threshold: float = 0.8
    r2_std_max: float = 0.05
    r2_min: float = 0.9
    evaluation: str = "fold_mean"
    grid_runs: int = 2
    normalize_residuals: bool = True

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if not self.psi_grid:
            raise ValueError("psi_grid must not be empty")
        if not 0.0 <= self.chi <= 1.0:
            raise ValueError("chi must be in [0, 1]")
        if self.evaluation not in ("fold_mean", "whole"):
            raise ValueError("evaluation must be 'fold_mean' or 'whole'")
        if self.init_depth < 1:
            raise ValueError("init_depth must be >= 1")


def leaf_weights(n_features: int, weights=None) -> np.ndarray:
    """Leaf-slot probabilities over the features followed by one constant slot.

    A length-``n_features`` vector is read as relative feature weights; the
    constant slot then keeps its uniform share ``1/(n+1)``. A length ``n+1``
    vector is used as is after normalization.
    """
    n = n_features
    if weights is None:
        return np.full(n + 1, 1.0 / (n + 1))
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("feature weights must be non-negative with a positive sum")
    if w.shape == (n + 1,):
        return w / w.sum()
    if w.shape == (n,):
        return np.append(w / w.sum() * n / (n + 1), 1.0 / (n + 1))
    raise ValueError(f"expected {n} or {n + 1} feature weights, got {w.shape[0]}")


class FoldEvaluator:
    """Loss of a tree on a fixed k-fold partition, memoized by program.

    Rows are reordered so that folds are contiguous; the tree is evaluated
    once and the residual norms are reduced per fold.
    """

    def __init__(self, data: Dataset, k: int, seed: int, spec: LossSpec,
                 evaluation: str = "fold_mean"):
        n = data.n_samples
        if n < 2 * k:
            raise ValueError(f"need at least {2 * k} rows for {k}-fold evaluation")
        if evaluation == "fold_mean":
            parts = [te for _, te in KFold(k, shuffle=True, random_state=seed).split(np.arange(n))]
        else:
            parts = [np.arange(n)]
        order = np.concatenate(parts)
        self.X = np.ascontiguousarray(data.features[order])
        self.y = data.target[order]
        self.starts = np.cumsum([0] + [len(p) for p in parts[:-1]])
        self.sizes = np.array([len(p) for p in parts], dtype=float)
        self.spec = spec
        self.cache: dict[tuple, float] = {}

    def __call__(self, tree: ExprTree) -> float:
        key = tree.program
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        with np.errstate(all="ignore"):
            r = evaluate(tree, self.X) - self.y
        if not np.all(np.isfinite(r)):
            val = math.inf
        else:
            a = np.abs(r)
            l1 = np.add.reduceat(a, self.starts)
            l2 = np.sqrt(np.add.reduceat(a * a, self.starts))
            linf = np.maximum.reduceat(a, self.starts)
            vals = loss_from_norms(l1, l2, linf, self.sizes, tree.size, self.spec)
            val = float(np.mean(vals))
            if not math.isfinite(val):
                val = math.inf
        self.cache[key] = val
        return val


def ga_evaluate(tree: ExprTree, data: Dataset, loss: LossSpec, k: int = 5,
                seed: int = 0) -> float:
    """Mean composite loss over the held-out partitions of a k-fold split."""
    return FoldEvaluator(data, k, seed, loss)(tree)


@dataclass
class _Ctx:
    features: list
    weights: np.ndarray
    functions: FunctionSet
    const_range: tuple
    delta: float
    crossover_rate: float
    max_size: int


def _ctx(cfg: GaSrConfig, n_features: int) -> _Ctx:
    return _Ctx(list(range(n_features)), leaf_weights(n_features, cfg.feature_weights),
                FunctionSet(cfg.functions), tuple(cfg.const_range), cfg.delta,
                cfg.crossover_rate, cfg.max_size)


def _ranked(population, losses):
    # stable ranking by (loss, program) keeps ties deterministic
    order = sorted(range(len(population)),
                   key=lambda i: (losses[i], repr(population[i].program)))
    return [population[i] for i in order], [losses[i] for i in order]


def ga_step(population, losses, ctx: _Ctx, rng) -> list:
    """Produce the next generation from a scored population.

    The top ``ceil(delta*N)`` trees are copied unchanged. Remaining slots
    are filled by rank-proportional draws; each draw receives
    ``round(3 * (1 - f))`` point mutations where ``f`` is its rank-normalized
    fitness (1 for the best, 0 for the worst), and random pairs are then
    crossed over at ``crossover_rate``. Children above ``max_size`` are
    replaced by their parent.
    """
    pop, losses = _ranked(population, losses)
    n = len(pop)
    n_royal = min(n, math.ceil(ctx.delta * n - 1e-12))
    nxt = list(pop[:n_royal])
    ranks = np.arange(n)
    score = (n - ranks).astype(float)
    p = score / score.sum()
    nf = 1.0 - ranks / max(n - 1, 1)
    picks = rng.choice(n, size=n - n_royal, p=p)
    kids = []
    for i in picks:
        t = pop[i]
        for _ in range(int(round(M_MAX * (1.0 - nf[i])))):
            t = point_mutate(t, rng, features=ctx.features, weights=ctx.weights,
                             functions=ctx.functions, const_range=ctx.const_range)
        kids.append(t)
    for j in range(0, len(kids) - 1, 2):
        if rng.random() < ctx.crossover_rate:
            a, b = subtree_crossover(kids[j], kids[j + 1], rng)
            if a.size <= ctx.max_size:
                kids[j] = a
            if b.size <= ctx.max_size:
                kids[j + 1] = b
    return nxt + kids


def _initial_population(n: int, depth: int, ctx: _Ctx, rng) -> list:
    # full trees, depths ramped over 1..depth
    return [random_full_tree(1 + i % depth, ctx.features, ctx.weights, rng,
                             functions=ctx.functions, const_range=ctx.const_range)
            for i in range(n)]


@dataclass
class GaRun:
    tree: ExprTree
    key: str
    loss: float
    metrics: MetricsVector
    trace: list = field(default_factory=list)


def _single_run(train: Dataset, test: Dataset, cfg: GaSrConfig, psi: float, seed) -> GaRun:
    rng = np.random.default_rng(seed)
    spec = cfg.loss.with_psi(psi)
    if cfg.normalize_residuals:
        spec = spec.with_scale(target_scale(train.target))
    fold_seed = int(rng.integers(2**31))
    ev = FoldEvaluator(train, cfg.k, fold_seed, spec, cfg.evaluation)
    ctx = _ctx(cfg, train.n_features)
    pop = _initial_population(cfg.population, cfg.init_depth, ctx, rng)
    losses = [ev(t) for t in pop]
    best_i = min(range(len(pop)), key=lambda i: (losses[i], repr(pop[i].program)))
    best, best_loss = pop[best_i], losses[best_i]
    trace = [best_loss]
    for _ in range(cfg.generations):
        pop = ga_step(pop, losses, ctx, rng)
        losses = [ev(t) for t in pop]
        i = min(range(len(pop)), key=lambda i: (losses[i], repr(pop[i].program)))
        if losses[i] < best_loss:
            best, best_loss = pop[i], losses[i]
        trace.append(best_loss)
    with np.errstate(all="ignore"):
        pred = evaluate(best, test.features)
    if not np.all(np.isfinite(pred)):
        pred = np.nan_to_num(pred, nan=0.0, posinf=1e100, neginf=-1e100)
    return GaRun(best, canonicalize(best), best_loss, compute_metrics(pred, test.target), trace)


@dataclass
class GaSrResult:
    runs: list
    psi: float
    stable: bool
    winner_key: str | None
    winner: GaRun | None
    coverage: float
    reasons: list = field(default_factory=list)
    grid_scores: dict = field(default_factory=dict)

    @property
    def keys(self) -> list:
        return [r.key for r in self.runs]

    @property
    def metrics(self) -> list:
        return [r.metrics for r in self.runs]

    def most_common(self) -> tuple[str, int]:
        return Counter(self.keys).most_common(1)[0]

    def summary(self, names=None) -> dict:
        from .metrics import summarize
        return {
            "psi": self.psi,
            "psi_grid_scores": {f"{k:g}": v for k, v in self.grid_scores.items()},
            "stable": self.stable,
            "coverage": self.coverage,
            "winner_key": self.winner_key,
            "winner": None if self.winner is None else to_infix(self.winner.tree, names),
            "winner_prefix": None if self.winner is None else to_prefix(self.winner.tree, names),
            "reasons": list(self.reasons),
            "metrics": summarize(self.metrics),
            "runs": [{"equation": to_infix(r.tree, names), "prefix": to_prefix(r.tree, names),
                      "key": r.key, "loss": r.loss,
                      "metrics": r.metrics.to_dict()} for r in self.runs],
        }


def _split(data: Dataset):
    if data.train_idx is not None and data.test_idx is not None:
        return data.train(), data.test()
    return data, data


def _pick_psi(train: Dataset, cfg: GaSrConfig, seeds) -> tuple[float, dict]:
    n = train.n_samples
    perm = np.random.default_rng(cfg.seed).permutation(n)
    cut = int(round(0.8 * n))
    inner, val = train.rows(np.sort(perm[:cut])), train.rows(np.sort(perm[cut:]))
    scores = {}
    for psi in cfg.psi_grid:
        r2 = [_single_run(inner, val, cfg, psi, s).metrics.r2
              for s in seeds[: max(1, cfg.grid_runs)]]
        scores[float(psi)] = float(np.mean(r2))
    # highest R^2; ties go to the larger (more parsimonious) value
    best = max(scores, key=lambda p: (scores[p], p))
    return best, scores


def run_ga_sr(data: Dataset, cfg: GaSrConfig = GaSrConfig()) -> GaSrResult:
    """Repeat the GA ``cfg.runs`` times and decide stability.

    Each run trains on the training rows (all rows when no split is set) and
    is scored on the test rows. The result is stable when the most common
    canonical key covers at least ``chi`` of the runs, the R^2 spread across
    runs is at most ``r2_std_max``, and the best run with that key has
    ``t_p >= tp_threshold`` and ``R^2 >= r2_min``.
    """
    train, test = _split(data)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.runs + 1)
    grid_scores = {}
    if len(cfg.psi_grid) > 1:
        psi, grid_scores = _pick_psi(train, cfg, seeds[cfg.runs:] + seeds[:cfg.runs])
    else:
        psi = float(cfg.psi_grid[0])
    runs = [_single_run(train, test, cfg, psi, s) for s in seeds[:cfg.runs]]

    counts = Counter(r.key for r in runs)
    # most common key; ties broken by the lowest loss achieved with it
    top = max(counts.values())
    tied = [k for k, c in counts.items() if c == top]
    key = min(tied, key=lambda k: (min(r.loss for r in runs if r.key == k), k))
    coverage = top / len(runs)
    winner = min((r for r in runs if r.key == key), key=lambda r: r.loss)
    r2_std = float(np.std([r.metrics.r2 for r in runs]))
    reasons = []
    if coverage < cfg.chi:
        reasons.append(f"most common equation covers {coverage:.2f} of runs < chi={cfg.chi}")
    if r2_std > cfg.r2_std_max:
        reasons.append(f"R2 std across runs {r2_std:.4f} > {cfg.r2_std_max}")
    if winner.metrics.t_p < cfg.tp_threshold:
        reasons.append(f"t-test p-value {winner.metrics.t_p:.3f} < {cfg.tp_threshold}")
    if winner.metrics.r2 < cfg.r2_min:
        reasons.append(f"R2 {winner.metrics.r2:.3f} < {cfg.r2_min}")
    stable = not reasons
    return GaSrResult(runs, psi, stable, key if stable else None, winner, coverage,
                      reasons, grid_scores)
