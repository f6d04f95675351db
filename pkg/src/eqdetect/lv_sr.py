"""Las Vegas symbolic regression over full binary trees.

Candidates are full binary trees (every node has zero or two children)
whose internal nodes hold functions and whose leaves hold variables or the
unit constant. Each candidate ``T`` is fitted as ``a*T(x) + b`` by ordinary
least squares and scored with the composite loss, counting ``a`` and ``b``
in the size term.

The search samples candidates from a size table that is re-weighted every
``theta`` evaluations by a K-nearest-neighbour score over structural
descriptors, and mixes in local moves around the best candidates seen.
Small spaces are enumerated exhaustively.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .dataset import Dataset
from .expr import (DIV_EPS, VALUE_BOUND, ExprTree, canonicalize, evaluate, parse, to_infix,
                   to_prefix)
from .metrics import LossSpec, MetricsVector, compute_metrics, loss_from_norms, target_scale

__all__ = [
    "LvConfig",
    "SamplingStrategy",
    "StructureConstraint",
    "FbtCandidate",
    "LvResult",
    "ConfigError",
    "enumerate_topologies",
    "count_topologies",
    "Sampler",
    "sample_candidate",
    "fit_and_score",
    "update_sampling",
    "run_lv_sr",
]

# op codes understood by the compiled evaluator; unary ops ignore their right child
OP_CODES = {"add": 0, "sub": 1, "mul": 2, "div": 3, "neg": 4, "inv": 5, "sqrt": 6,
            "log": 7, "sin": 8, "cos": 9, "sq": 10}
UNARY = {"neg", "inv", "sqrt", "log", "sin", "cos", "sq"}
EPS_FLOOR = 1e-4


class ConfigError(ValueError):
    """The search configuration or its constraints cannot be satisfied."""


# --------------------------------------------------------------------------
# topologies


@lru_cache(maxsize=None)
def _shapes(n: int) -> tuple:
    if n == 1:
        return ((0,),)
    out = []
    for left in range(1, n - 1, 2):
        for L in _shapes(left):
            for R in _shapes(n - 1 - left):
                out.append((2,) + L + R)
    return tuple(out)


def enumerate_topologies(xi1: int, xi2: int) -> list[tuple]:
    """All full-binary-tree shapes with ``xi1 <= size <= xi2``.

    A shape is the prefix sequence of node arities (2 or 0). Ordered by
    size, then by the recursive left-subtree-size construction.
    """
    if not 1 <= xi1 <= xi2:
        raise ValueError("need 1 <= xi1 <= xi2")
    return [s for n in range(xi1, xi2 + 1) if n % 2 for s in _shapes(n)]


def count_topologies(xi1: int, xi2: int) -> int:
    return sum(math.comb(2 * k, k) // (k + 1)
               for n in range(xi1, xi2 + 1) if n % 2 for k in [(n - 1) // 2])


def _subtree_end(arities, start: int) -> int:
    need, i = 1, start
    while need:
        need += arities[i] - 1
        i += 1
    return i


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SamplingStrategy:
    """How candidates are drawn.

    ``forced_feature_quota = (j, x)`` makes a fraction ``x`` of emitted
    candidates contain feature ``j`` and the rest exclude it.
    ``size_focus = (sizes, x)`` draws a focused size for a fraction ``x`` of
    fresh samples.
    """

    forced_feature_quota: tuple | None = None
    size_focus: tuple | None = None
    K: int = 5
    theta: int = 1000
    rho: int = 10_000_000
    explore_fraction: float = 0.3

    def __post_init__(self):
        if self.forced_feature_quota is not None:
            _, x = self.forced_feature_quota
            if not 0.0 <= x <= 1.0:
                raise ConfigError("quota fraction must be in [0, 1]")
        if self.size_focus is not None:
            sizes, x = self.size_focus
            if not 0.0 <= x <= 1.0 or not sizes:
                raise ConfigError("size_focus needs sizes and a fraction in [0, 1]")
        if self.K < 1 or self.theta < 1 or self.rho < 1:
            raise ConfigError("K, theta and rho must be positive")
        if not 0.0 <= self.explore_fraction <= 1.0:
            raise ConfigError("explore_fraction must be in [0, 1]")


@dataclass(frozen=True)
class StructureConstraint:
    """Structure every candidate must satisfy.

    ``required_subtree`` is a prefix expression over the configured
    functions, feature names or ``xK`` indices, and the constant ``1``.
    """

    required_features: tuple = ()
    required_subtree: str | None = None


@dataclass(frozen=True)
class LvConfig:
    xi1: int = 3
    xi2: int = 13
    functions: tuple = ("add", "sub", "mul", "div")
    loss: LossSpec = LossSpec()
    seed: int = 0
    enum_cap: int = 1_000_000
    time_budget: float | None = None
    patience: int | None = None
    max_rows: int | None = None
    elites: int = 64
    keep_log: bool = False
    normalize_residuals: bool = True

    def __post_init__(self):
        if not 1 <= self.xi1 <= self.xi2:
            raise ConfigError("need 1 <= xi1 <= xi2")
        if not any(n % 2 for n in range(self.xi1, self.xi2 + 1)):
            raise ConfigError("size range contains no odd size")
        bad = [f for f in self.functions if f not in OP_CODES]
        if bad or not self.functions:
            raise ConfigError(f"unsupported functions: {bad}")


# --------------------------------------------------------------------------
# candidates and the compiled evaluator
#
# A candidate is a prefix tuple of ints: ``-(code+1)`` for a function,
# ``j >= 0`` for a leaf where ``j == n_features`` is the unit constant.


@dataclass
class FbtCandidate:
    tokens: tuple
    loss: float = math.inf
    a: float = 0.0
    b: float = 0.0

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def topology(self) -> tuple:
        return tuple(2 if t < 0 else 0 for t in self.tokens)


_CODE_NAMES = {v: k for k, v in OP_CODES.items()}


def _raw_tree(tokens, n_features: int) -> ExprTree:
    """``T`` as an :class:`ExprTree`; unary nodes drop their right child."""
    out = []

    def walk(i):
        t = tokens[i]
        if t >= 0:
            out.append(1.0 if t == n_features else int(t))
            return i + 1
        name = _CODE_NAMES[-t - 1]
        out.append(name)
        j = walk(i + 1)
        if name in UNARY:
            return _subtree_end([2 if x < 0 else 0 for x in tokens], j)
        return walk(j)

    walk(0)
    return ExprTree(tuple(out))


def candidate_tree(cand: FbtCandidate, n_features: int) -> ExprTree:
    """The fitted expression ``a*T + b``."""
    raw = _raw_tree(cand.tokens, n_features).program
    if cand.a == 0.0:
        return ExprTree((float(cand.b),))
    return ExprTree(("add", "mul", float(cand.a)) + raw + (float(cand.b),))


@njit(cache=True)
def _apply(op, a, b, out):
    n = a.shape[0]
    for i in range(n):
        x = a[i]
        y = b[i]
        if op == 0:
            v = x + y
        elif op == 1:
            v = x - y
        elif op == 2:
            v = x * y
        elif op == 3:
            v = x / y if abs(y) >= DIV_EPS else 1.0
        elif op == 4:
            v = -x
        elif op == 5:
            v = 1.0 / x if abs(x) >= DIV_EPS else 1.0
        elif op == 6:
            v = math.sqrt(abs(x))
        elif op == 7:
            v = math.log(abs(x)) if abs(x) >= DIV_EPS else 0.0
        elif op == 8:
            v = math.sin(x)
        elif op == 9:
            v = math.cos(x)
        else:
            v = x * x
        if v > VALUE_BOUND:
            v = VALUE_BOUND
        elif v < -VALUE_BOUND:
            v = -VALUE_BOUND
        out[i] = v


@njit(cache=True)
def _score_batch(codes, lengths, XT, y, out):
    nf, n = XT.shape
    maxlen = codes.shape[1]
    stack = np.empty((maxlen + 1, n))
    my = 0.0
    for i in range(n):
        my += y[i]
    my /= n
    for c in range(codes.shape[0]):
        sp = 0
        for pos in range(lengths[c] - 1, -1, -1):
            tok = codes[c, pos]
            if tok >= 0:
                if tok < nf:
                    stack[sp, :] = XT[tok]
                else:
                    stack[sp, :] = 1.0
                sp += 1
            else:
                _apply(-tok - 1, stack[sp - 1], stack[sp - 2], stack[sp - 2])
                sp -= 1
        t = stack[0]
        mt = 0.0
        for i in range(n):
            mt += t[i]
        mt /= n
        stt = 0.0
        sty = 0.0
        for i in range(n):
            d = t[i] - mt
            stt += d * d
            sty += d * (y[i] - my)
        a = 0.0
        b = my
        sd = math.sqrt(stt / n) if stt == stt else 0.0
        if math.isfinite(stt) and math.isfinite(sty) and sd > 1e-9 * max(1.0, abs(mt)):
            a = sty / stt
            b = my - a * mt
        l1 = 0.0
        l2 = 0.0
        li = 0.0
        for i in range(n):
            r = abs(a * t[i] + b - y[i])
            l1 += r
            l2 += r * r
            if r > li:
                li = r
        out[c, 0] = l1
        out[c, 1] = math.sqrt(l2)
        out[c, 2] = li
        out[c, 3] = a
        out[c, 4] = b


class _Scorer:
    def __init__(self, X: np.ndarray, y: np.ndarray, spec: LossSpec):
        self.XT = np.ascontiguousarray(np.asarray(X, dtype=float).T)
        self.y = np.ascontiguousarray(np.asarray(y, dtype=float))
        self.spec = spec

    def __call__(self, token_lists: Sequence[tuple]) -> np.ndarray:
        """Rows of (loss, a, b) for each candidate."""
        m = len(token_lists)
        if m == 0:
            return np.empty((0, 3))
        maxlen = max(len(t) for t in token_lists)
        codes = np.zeros((m, maxlen), dtype=np.int64)
        lengths = np.empty(m, dtype=np.int64)
        for i, t in enumerate(token_lists):
            codes[i, : len(t)] = t
            lengths[i] = len(t)
        out = np.empty((m, 5))
        _score_batch(codes, lengths, self.XT, self.y, out)
        loss = loss_from_norms(out[:, 0], out[:, 1], out[:, 2], len(self.y),
                               lengths + 2, self.spec)
        loss = np.where(np.isfinite(loss), loss, np.inf)
        return np.column_stack([loss, out[:, 3], out[:, 4]])


def fit_and_score(cand: FbtCandidate, data: Dataset, loss: LossSpec) -> FbtCandidate:
    """Fit ``a*T + b`` by least squares on ``data`` and attach the loss.

    A constant ``T`` gives ``a = 0`` and ``b = mean(y)``. The size term
    counts the candidate's nodes plus the two coefficients.
    """
    (l, a, b), = _Scorer(data.features, data.target, loss)([cand.tokens])
    return FbtCandidate(cand.tokens, float(l), float(a), float(b))


# --------------------------------------------------------------------------
# sampling


def _descriptor(tokens, op_index: dict, n_leaf: int) -> tuple:
    d = [0] * (1 + len(op_index) + n_leaf)
    d[0] = len(tokens)
    for t in tokens:
        if t < 0:
            d[1 + op_index[t]] += 1
        else:
            d[1 + len(op_index) + t] += 1
    return tuple(d)


class _History:
    """Mean loss per unique descriptor, kept in growing arrays."""

    def __init__(self, dim: int):
        self.index: dict = {}
        self.D = np.zeros((1024, dim))
        self.S = np.zeros(1024)
        self.C = np.zeros(1024)

    def add(self, desc: tuple, loss: float) -> None:
        i = self.index.get(desc)
        if i is None:
            i = len(self.index)
            if i == len(self.S):
                self.D = np.vstack([self.D, np.zeros_like(self.D)])
                self.S = np.concatenate([self.S, np.zeros_like(self.S)])
                self.C = np.concatenate([self.C, np.zeros_like(self.C)])
            self.index[desc] = i
            self.D[i] = desc
        self.S[i] += min(loss, 1e300)
        self.C[i] += 1

    def arrays(self):
        m = len(self.index)
        return self.D[:m], self.S[:m] / self.C[:m]


def _knn_score(D, L, K, Q=None):
    """Inverse mean loss of the ``K`` nearest rows of ``D`` to each query row."""
    Q = D if Q is None else Q
    k = min(K, len(D))
    _, nn = cKDTree(D).query(Q, k=k)
    nn = np.asarray(nn).reshape(len(Q), k)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        score = 1.0 / (L[nn].mean(axis=1) + 1e-12)
    return np.where(np.isfinite(score), score, 0.0)


_PER_SIZE = 32


def update_sampling(history, probabilities: dict, K: int = 5, eps: float = EPS_FLOOR) -> dict:
    """Re-weight the size table from evaluated history.

    ``history`` maps descriptor tuples (first entry = size) to their mean
    loss, or is a ``(descriptors, mean_losses)`` array pair. Each descriptor
    scores the inverse mean loss of its ``K`` nearest historical
    descriptors. A size's factor is its best score, searched among its 32
    lowest-loss descriptors, relative to the mean over sizes with history.
    The table is multiplied by those factors, floored at ``eps`` and
    renormalized.
    """
    if isinstance(history, dict):
        if not history:
            return dict(probabilities)
        D = np.array(list(history), dtype=float)
        L = np.array(list(history.values()), dtype=float)
    else:
        D, L = history
        if len(D) == 0:
            return dict(probabilities)
    sizes = D[:, 0].astype(int)
    uniq = np.unique(sizes)
    rows = []
    for n in uniq:
        idx = np.flatnonzero(sizes == n)
        rows.append(idx[np.argsort(L[idx], kind="stable")[:_PER_SIZE]])
    rows = np.concatenate(rows)
    score = _knn_score(D, L, K, D[rows])
    inv = np.searchsorted(uniq, sizes[rows])
    best = np.zeros(len(uniq))
    np.maximum.at(best, inv, score)
    ref = best.mean()
    factor = dict(zip(uniq.tolist(), (best / ref).tolist())) if ref > 0 else {}
    new = {size: p * factor.get(size, 1.0) for size, p in probabilities.items()}
    return _normalize_floor(new, eps)


def _normalize_floor(table: dict, eps: float) -> dict:
    keys = list(table)
    p = np.array([table[k] for k in keys], dtype=float)
    p = np.where(np.isfinite(p) & (p > 0), p, 0.0)
    p = p / p.sum() if p.sum() > 0 else np.full(len(p), 1.0 / len(p))
    for _ in range(len(p) + 1):
        low = p < eps
        if not low.any():
            break
        p[low] = eps
        free = ~low
        p[free] = p[free] / p[free].sum() * (1.0 - eps * low.sum())
    return dict(zip(keys, p.tolist()))


class Sampler:
    """Constrained candidate sampler over a size range.

    Holds the topology list, the size probability table and the compiled
    constraints; :meth:`fresh` draws a new candidate and :meth:`neighbour`
    perturbs an existing one. Both return ``None`` when repair fails.
    """

    def __init__(self, n_features: int, cfg: LvConfig, strategy: SamplingStrategy,
                 constraints: StructureConstraint, names: Sequence[str] | None = None):
        self.nf = n_features
        self.n_leaf = n_features + 1
        self.cfg = cfg
        self.strategy = strategy
        self.ops = [-(OP_CODES[f] + 1) for f in cfg.functions]
        self.op_index = {o: i for i, o in enumerate(self.ops)}
        self.sizes = [n for n in range(cfg.xi1, cfg.xi2 + 1) if n % 2]
        self.by_size = {n: _shapes(n) for n in self.sizes}
        self.table = {n: 1.0 / len(self.sizes) for n in self.sizes}
        self.required = tuple(sorted({self._feature(f, names) for f in constraints.required_features}))
        self.pattern = self._compile_pattern(constraints.required_subtree, names)
        q = strategy.forced_feature_quota
        self.quota = None if q is None else (self._feature(q[0], names), float(q[1]))
        focus = strategy.size_focus
        self.focus = None if focus is None else (
            [n for n in focus[0] if n in self.by_size], float(focus[1]))
        self._validate()

    # -- construction helpers
    def _feature(self, f, names) -> int:
        if isinstance(f, (int, np.integer)):
            j = int(f)
        elif names is not None and f in names:
            j = list(names).index(f)
        elif isinstance(f, str) and f[:1] == "x" and f[1:].isdigit():
            j = int(f[1:])
        else:
            raise ConfigError(f"unknown feature {f!r}")
        if not 0 <= j < self.nf:
            raise ConfigError(f"feature index {j} out of range")
        return j

    def _compile_pattern(self, text, names):
        if not text:
            return None
        tree = parse(text, names)
        toks = []
        for t in tree.program:
            if isinstance(t, str):
                if t not in self.cfg.functions:
                    raise ConfigError(f"required subtree uses {t!r} outside the function set")
                if t in UNARY:
                    raise ConfigError("required subtree must be a full binary tree")
                toks.append(-(OP_CODES[t] + 1))
            elif isinstance(t, int):
                if t >= self.nf:
                    raise ConfigError(f"required subtree variable x{t} out of range")
                toks.append(t)
            elif t == 1.0:
                toks.append(self.nf)
            else:
                raise ConfigError("required subtree constants must be 1")
        return tuple(toks)

    def _slots(self, shape):
        """Positions where the required pattern can be embedded in ``shape``."""
        if self.pattern is None:
            return [None]
        ar = tuple(2 if t < 0 else 0 for t in self.pattern)
        m = len(ar)
        return [p for p in range(len(shape) - m + 1) if shape[p:p + m] == ar]

    def _validate(self):
        if self.quota is not None:
            j, x = self.quota
            pinned = set(self.required) | {t for t in (self.pattern or ()) if t >= 0}
            if j in pinned and x < 1.0:
                raise ConfigError(f"feature {j} is required, so a quota of {x} cannot hold")
        if self.focus is not None and not self.focus[0]:
            raise ConfigError("size_focus names no size inside the search range")
        pinned = {t for t in (self.pattern or ()) if 0 <= t < self.nf}
        extra = len(set(self.required) - pinned)
        if self.quota is not None and self.quota[1] > 0 and self.quota[0] not in pinned | set(self.required):
            extra += 1
        pat_leaves = sum(1 for t in (self.pattern or ()) if t >= 0)
        for n in self.sizes:
            for shape in self.by_size[n]:
                if self._slots(shape) and (n + 1) // 2 - pat_leaves >= extra:
                    return
        raise ConfigError("no tree size in range can satisfy the structure constraints")

    # -- sampling
    def draw_size(self, rng) -> int:
        if self.focus is not None and rng.random() < self.focus[1]:
            sizes = self.focus[0]
            return sizes[rng.integers(len(sizes))]
        p = np.array([self.table[n] for n in self.sizes])
        return self.sizes[rng.choice(len(self.sizes), p=p / p.sum())]

    def _want(self, rng):
        if self.quota is None:
            return None
        return bool(rng.random() < self.quota[1])

    def fresh(self, rng, want=None, tries: int = 20):
        """Uniform allocation on a topology from the size table, then repair."""
        if want is None:
            want = self._want(rng)
        for _ in range(tries):
            n = self.draw_size(rng)
            shapes = self.by_size[n]
            shape = shapes[rng.integers(len(shapes))]
            toks = [self.ops[rng.integers(len(self.ops))] if a else int(rng.integers(self.n_leaf))
                    for a in shape]
            out = self.repair(toks, rng, want)
            if out is not None:
                return out
        return None

    def repair(self, toks, rng, want):
        """Enforce the pattern, required features and quota; ``None`` if impossible."""
        toks = list(toks)
        shape = tuple(2 if t < 0 else 0 for t in toks)
        protected: set[int] = set()
        if self.pattern is not None:
            where = self._find_pattern(toks)
            if where is None:
                slots = self._slots(shape)
                if not slots:
                    return None
                where = slots[rng.integers(len(slots))]
                toks[where:where + len(self.pattern)] = self.pattern
            protected.update(range(where, where + len(self.pattern)))
        leaves = [i for i, a in enumerate(shape) if a == 0]
        for j in self.required:
            if any(toks[i] == j for i in leaves):
                holders = [i for i in leaves if toks[i] == j]
                protected.add(holders[rng.integers(len(holders))])
                continue
            free = [i for i in leaves if i not in protected]
            if not free:
                return None
            i = free[rng.integers(len(free))]
            toks[i] = j
            protected.add(i)
        if want is not None:
            j = self.quota[0]
            has = [i for i in leaves if toks[i] == j]
            if want and not has:
                free = [i for i in leaves if i not in protected]
                if not free:
                    return None
                toks[free[rng.integers(len(free))]] = j
            elif not want and has:
                others = [v for v in range(self.n_leaf) if v != j]
                for i in has:
                    if i in protected:
                        return None
                    toks[i] = others[rng.integers(len(others))]
        return tuple(toks)

    def _find_pattern(self, toks):
        m = len(self.pattern)
        for p in range(len(toks) - m + 1):
            if tuple(toks[p:p + m]) == self.pattern:
                return p
        return None

    def satisfies(self, toks, want=None) -> bool:
        if self.pattern is not None and self._find_pattern(list(toks)) is None:
            return False
        leaves = {t for t in toks if t >= 0}
        if any(j not in leaves for j in self.required):
            return False
        if want is not None and (self.quota[0] in leaves) != want:
            return False
        return self.cfg.xi1 <= len(toks) <= self.cfg.xi2

    # -- local moves
    def neighbour(self, toks, rng, want=None, tries: int = 10):
        if want is None:
            want = self._want(rng)
        for _ in range(tries):
            cur = list(toks)
            for _ in range(1 + min(int(rng.geometric(0.5)) - 1, 2)):
                cur = self._move(cur, rng)
            if not self.cfg.xi1 <= len(cur) <= self.cfg.xi2:
                continue
            out = self.repair(cur, rng, want)
            if out is not None and tuple(out) != tuple(toks):
                return out
        return None

    def _random_leaf(self, rng):
        return int(rng.integers(self.n_leaf))

    def _move(self, toks, rng):
        ar = [2 if t < 0 else 0 for t in toks]
        kind = rng.integers(6)
        leaves = [i for i, a in enumerate(ar) if a == 0]
        inner = [i for i, a in enumerate(ar) if a == 2]
        if kind == 0 or not inner:                       # relabel leaf
            i = leaves[rng.integers(len(leaves))]
            choices = [v for v in range(self.n_leaf) if v != toks[i]]
            toks[i] = choices[rng.integers(len(choices))]
            if kind == 0 or len(toks) + 2 > self.cfg.xi2:
                return toks
            kind = 3
        if kind == 1 and len(self.ops) > 1:              # relabel function
            i = inner[rng.integers(len(inner))]
            choices = [o for o in self.ops if o != toks[i]]
            toks[i] = choices[rng.integers(len(choices))]
            return toks
        if kind == 2:                                    # swap children
            i = inner[rng.integers(len(inner))]
            m = _subtree_end(ar, i + 1)
            e = _subtree_end(ar, m)
            return toks[:i + 1] + toks[m:e] + toks[i + 1:m] + toks[e:]
        if kind == 3:                                    # grow a leaf into a node
            i = leaves[rng.integers(len(leaves))]
            op = self.ops[rng.integers(len(self.ops))]
            pair = [toks[i], self._random_leaf(rng)]
            if rng.random() < 0.5:
                pair.reverse()
            return toks[:i] + [op] + pair + toks[i + 1:]
        if kind == 4:                                    # collapse a node to a child
            i = inner[rng.integers(len(inner))]
            m = _subtree_end(ar, i + 1)
            e = _subtree_end(ar, m)
            keep = toks[i + 1:m] if rng.random() < 0.5 else toks[m:e]
            return toks[:i] + keep + toks[e:]
        # replace a subtree by a fresh size-1 or size-3 tree
        i = int(rng.integers(len(toks)))
        e = _subtree_end(ar, i)
        if rng.random() < 0.5:
            new = [self._random_leaf(rng)]
        else:
            new = [self.ops[rng.integers(len(self.ops))], self._random_leaf(rng),
                   self._random_leaf(rng)]
        return toks[:i] + new + toks[e:]

    def descriptor(self, toks) -> tuple:
        return _descriptor(toks, self.op_index, self.n_leaf)

    def space_size(self) -> int:
        total = 0
        for n in self.sizes:
            k = (n - 1) // 2
            total += len(self.by_size[n]) * len(self.ops) ** k * self.n_leaf ** (k + 1)
        return total

    def enumerate_all(self):
        """Every constraint-satisfying allocation (quota ignored)."""
        for n in self.sizes:
            k = (n - 1) // 2
            for shape in self.by_size[n]:
                inner = [i for i, a in enumerate(shape) if a]
                leaves = [i for i, a in enumerate(shape) if not a]
                for ops in itertools.product(self.ops, repeat=k):
                    for lv in itertools.product(range(self.n_leaf), repeat=k + 1):
                        toks = [0] * n
                        for i, o in zip(inner, ops):
                            toks[i] = o
                        for i, v in zip(leaves, lv):
                            toks[i] = v
                        if self.satisfies(toks):
                            yield tuple(toks)


def sample_candidate(sampler: Sampler, rng) -> FbtCandidate:
    """One unfitted candidate drawn from the sampler's current table."""
    for _ in range(100):
        toks = sampler.fresh(rng)
        if toks is not None:
            return FbtCandidate(toks)
    raise ConfigError("could not draw a candidate satisfying the constraints")


# --------------------------------------------------------------------------
# search driver


@dataclass
class LvResult:
    best: FbtCandidate
    tree: ExprTree
    raw: ExprTree
    key: str
    metrics: MetricsVector
    evaluations: int
    stop_reason: str
    exhaustive: bool
    elapsed: float
    log: list = field(default_factory=list)
    n_features: int = 0
    found_at: int = 0

    def summary(self, names=None) -> dict:
        return {
            "equation": to_infix(self.tree, names),
            "prefix": to_prefix(self.tree, names),
            "structure": to_infix(self.raw, names),
            "key": self.key,
            "a": self.best.a,
            "b": self.best.b,
            "loss": self.best.loss,
            "metrics": self.metrics.to_dict(),
            "evaluations": self.evaluations,
            "found_at": self.found_at,
            "stop_reason": self.stop_reason,
            "exhaustive": self.exhaustive,
        }

    def write_log(self, path) -> None:
        """Evaluation log (needs ``keep_log``) as CSV: key, size, loss, a, b."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "size", "loss", "a", "b"])
            for toks, l, a, b in self.log:
                raw = _raw_tree(toks, self.n_features)
                w.writerow([canonicalize(raw), len(toks), repr(l), repr(a), repr(b)])


def _split(data: Dataset):
    if data.train_idx is not None and data.test_idx is not None:
        return data.train(), data.test()
    return data, data


def run_lv_sr(data: Dataset, cfg: LvConfig = LvConfig(),
              strategy: SamplingStrategy = SamplingStrategy(),
              constraints: StructureConstraint = StructureConstraint()) -> LvResult:
    """Search for the minimum-loss candidate and return it as ``a*T + b``.

    Stops after ``strategy.rho`` evaluations, when the wall-clock budget or
    the no-improvement ``patience`` runs out, or when every feasible
    allocation has been evaluated (only detectable when the space is at
    most ``cfg.enum_cap``).
    """
    t0 = time.perf_counter()
    train, test = _split(data)
    rng = np.random.default_rng(cfg.seed)
    sampler = Sampler(train.n_features, cfg, strategy, constraints, train.names)
    X, y = train.features, train.target
    if cfg.max_rows is not None and len(y) > cfg.max_rows:
        rows = np.sort(rng.choice(len(y), cfg.max_rows, replace=False))
        X, y = X[rows], y[rows]
    spec = cfg.loss.with_scale(target_scale(train.target)) if cfg.normalize_residuals else cfg.loss
    scorer = _Scorer(X, y, spec)

    seen: set = set()
    log: list = []
    best = (math.inf, (), 0.0, 0.0)
    elites: list = []            # (loss, tokens) sorted, unique
    history = _History(1 + len(sampler.ops) + sampler.n_leaf)
    n_eval = 0
    since_best = 0
    found_at = 0
    stop = "rho"

    def record(batch):
        nonlocal best, n_eval, since_best, elites, found_at
        res = scorer(batch)
        for toks, (l, a, b) in zip(batch, res):
            seen.add(toks)
            n_eval += 1
            since_best += 1
            if cfg.keep_log:
                log.append((toks, float(l), float(a), float(b)))
            history.add(sampler.descriptor(toks), float(l))
            if (l, toks) < (best[0], best[1]):
                if l < best[0] * (1 - 1e-12) or best[0] == math.inf:
                    since_best = 0
                    found_at = n_eval
                best = (float(l), toks, float(a), float(b))
        merged = {t: l for l, t in elites}
        for toks, l in zip(batch, res[:, 0]):
            merged[toks] = float(l)
        elites = sorted(((l, t) for t, l in merged.items()), key=lambda e: (e[0], e[1]))[:cfg.elites]

    space = sampler.space_size()
    exhaustive = space <= min(cfg.enum_cap, strategy.rho)

    def timed_out():
        return cfg.time_budget is not None and time.perf_counter() - t0 > cfg.time_budget

    if exhaustive:
        allc = list(sampler.enumerate_all())
        order = rng.permutation(len(allc))
        for s in range(0, len(allc), strategy.theta):
            record([allc[i] for i in order[s:s + strategy.theta]])
            if timed_out():
                stop = "time"
                break
        else:
            stop = "exhausted"
    else:
        elite_p = None
        while True:
            batch, batch_set = [], set()
            want_n = min(strategy.theta, strategy.rho - n_eval)
            misses = 0
            while len(batch) < want_n and misses < 50 * want_n:
                if not elites or rng.random() < strategy.explore_fraction:
                    toks = sampler.fresh(rng)
                else:
                    if elite_p is None or len(elite_p) != len(elites):
                        elite_p = np.full(len(elites), 1.0 / len(elites))
                    base = elites[rng.choice(len(elites), p=elite_p)][1]
                    toks = sampler.neighbour(base, rng)
                if toks is None or toks in seen or toks in batch_set:
                    misses += 1
                    continue
                batch.append(toks)
                batch_set.add(toks)
            if not batch:
                stop = "stalled"
                break
            record(batch)
            if n_eval >= strategy.rho:
                stop = "rho"
                break
            if cfg.patience is not None and since_best >= cfg.patience:
                stop = "patience"
                break
            if timed_out():
                stop = "time"
                break
            D, L = history.arrays()
            sampler.table = update_sampling((D, L), sampler.table, strategy.K)
            E = np.array([sampler.descriptor(t) for _, t in elites], dtype=float)
            w = _knn_score(D, L, strategy.K, E) + 1e-300
            elite_p = w / w.sum()

    if not best[1]:
        raise ConfigError("no candidate was evaluated")
    # refit the winner on every training row
    full = _Scorer(train.features, train.target, spec)([best[1]])[0]
    if cfg.max_rows is not None:
        cand = FbtCandidate(best[1], float(full[0]), float(full[1]), float(full[2]))
    else:
        cand = FbtCandidate(best[1], best[0], best[2], best[3])
    nf = train.n_features
    tree = candidate_tree(cand, nf)
    raw = _raw_tree(cand.tokens, nf)
    with np.errstate(all="ignore"):
        pred = evaluate(tree, test.features)
    pred = np.nan_to_num(pred, nan=0.0, posinf=1e100, neginf=-1e100)
    return LvResult(cand, tree, raw, canonicalize(raw), compute_metrics(pred, test.target),
                    n_eval, stop, exhaustive, time.perf_counter() - t0, log, nf, found_at)
