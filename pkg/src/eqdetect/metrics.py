"""Scoring: metric vectors, the composite norm loss and Pareto hypervolume."""

from __future__ import annotations

import ast
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "MetricsVector",
    "LossSpec",
    "compute_metrics",
    "residual_norms",
    "target_scale",
    "loss",
    "loss_from_norms",
    "pareto_score",
    "hypervolume",
    "summarize",
]


@dataclass(frozen=True)
class MetricsVector:
    """MAE, MSE, coefficient of determination and Welch t-test p-value."""

    mae: float
    mse: float
    r2: float
    t_p: float
    r2_undefined: bool = False

    def to_dict(self) -> dict:
        d = {"mae": self.mae, "mse": self.mse, "r2": self.r2, "t_p": self.t_p}
        if self.r2_undefined:
            d["r2_undefined"] = True
        return d

    @classmethod
    def from_dict(cls, d) -> "MetricsVector":
        return cls(float(d["mae"]), float(d["mse"]), float(d["r2"]),
                   float(d["t_p"]), bool(d.get("r2_undefined", False)))


def _welch_p(a: np.ndarray, b: np.ndarray) -> float:
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0
    with warnings.catch_warnings():
        # one constant sample is fine for Welch but trips scipy's precision check
        warnings.simplefilter("ignore", RuntimeWarning)
        p = stats.ttest_ind(a, b, equal_var=False).pvalue
    return 1.0 if np.isnan(p) else float(p)


def compute_metrics(pred, truth) -> MetricsVector:
    """Four-metric summary of a prediction.

    ``t_p`` is the two-sided unpaired Welch t-test p-value between the two
    samples, so values near 1 mean their means are indistinguishable. A
    constant ``truth`` leaves R^2 undefined; it is then reported as 0 with
    ``r2_undefined`` set.
    """
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} vs {truth.shape[0]}")
    if pred.shape[0] < 2:
        raise ValueError("need at least two samples")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(truth))):
        raise ValueError("metrics need finite inputs")
    r = pred - truth
    mae = float(np.mean(np.abs(r)))
    mse = float(np.mean(r * r))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    ss_res = float(np.sum(r * r))
    undefined = ss_tot == 0.0
    if undefined:
        r2 = 0.0
    elif ss_res == 0.0:
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return MetricsVector(mae, mse, r2, _welch_p(pred, truth), undefined)


def summarize(vectors) -> dict:
    """Mean and standard deviation of each metric over repeated runs."""
    vectors = list(vectors)
    out = {}
    for name in ("mae", "mse", "r2", "t_p"):
        vals = np.array([getattr(v, name) for v in vectors], dtype=float)
        out[name] = {"mean": float(vals.mean()) if len(vals) else float("nan"),
                     "std": float(vals.std()) if len(vals) else float("nan")}
    return out


# --------------------------------------------------------------------------
# composite loss

_ALLOWED_NAMES = ("l1", "l2", "linf", "mae", "mse", "n")
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Pow: np.power}


def _safe_div(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = np.zeros(a.shape)
    np.divide(a, b, out=out, where=b != 0)
    return out


_FUNCS = {"sqrt": np.sqrt, "abs": np.abs, "log": np.log, "max": np.maximum,
          "min": np.minimum}


def _compile_formula(text: str):
    """Validate a residual-norm formula and return an evaluator."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"bad loss formula {text!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.BinOp):
            if not isinstance(node.op, (*_BINOPS, ast.Div)):
                raise ValueError(f"operator {type(node.op).__name__} not allowed")
            check(node.left)
            check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            check(node.operand)
        elif isinstance(node, ast.Name):
            if node.id not in _ALLOWED_NAMES:
                raise ValueError(f"unknown name {node.id!r} in loss formula; "
                                 f"allowed: {', '.join(_ALLOWED_NAMES)}")
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        elif (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
              and node.func.id in _FUNCS and not node.keywords):
            for a in node.args:
                check(a)
        else:
            raise ValueError(f"unsupported syntax in loss formula: {ast.dump(node)}")

    check(tree)

    def run(node, env):
        if isinstance(node, ast.Expression):
            return run(node.body, env)
        if isinstance(node, ast.BinOp):
            a, b = run(node.left, env), run(node.right, env)
            if isinstance(node.op, ast.Div):
                return _safe_div(a, b)
            return _BINOPS[type(node.op)](a, b)
        if isinstance(node, ast.UnaryOp):
            v = run(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.Constant):
            return float(node.value)
        return _FUNCS[node.func.id](*[run(a, env) for a in node.args])

    return lambda env: run(tree, env)


@dataclass(frozen=True)
class LossSpec:
    """Weights of the composite loss.

    ``w1``, ``w2`` and ``w3`` weight the L1, L2 and L-infinity norms of the
    residual and must lie on the unit simplex; ``psi`` multiplies the tree
    size. ``custom`` optionally replaces the weighted-norm part with a
    formula over ``l1``, ``l2``, ``linf``, ``mae``, ``mse`` and ``n``, e.g.
    ``"0.5*l1 + 0.5*l2/linf"``. Division in formulas yields 0 when the
    denominator is 0. ``scale`` divides every residual norm before they are
    combined (searches set it to the target's standard deviation so that
    the size penalty does not depend on the target's units).
    """

    w1: float = 1.0 / 3.0
    w2: float = 1.0 / 3.0
    w3: float = 1.0 / 3.0
    psi: float = 0.05
    custom: str | None = None
    scale: float = 1.0
    _compiled: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        ws = (self.w1, self.w2, self.w3)
        if any(w < 0 or w > 1 for w in ws) or not math.isclose(sum(ws), 1.0, abs_tol=1e-9):
            raise ValueError(f"loss weights must lie in [0,1] and sum to 1, got {ws}")
        if self.psi < 0:
            raise ValueError("psi must be non-negative")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.custom is not None:
            object.__setattr__(self, "_compiled", _compile_formula(self.custom))

    def with_psi(self, psi: float) -> "LossSpec":
        return LossSpec(self.w1, self.w2, self.w3, psi, self.custom, self.scale)

    def with_scale(self, scale: float) -> "LossSpec":
        return LossSpec(self.w1, self.w2, self.w3, self.psi, self.custom, scale)

    def to_dict(self) -> dict:
        return {"w1": self.w1, "w2": self.w2, "w3": self.w3, "psi": self.psi,
                "custom": self.custom}


def target_scale(y) -> float:
    """Standard deviation of ``y``, or 1 when it is zero or undefined."""
    sd = float(np.std(np.asarray(y, dtype=float)))
    return sd if np.isfinite(sd) and sd > 0 else 1.0


def residual_norms(residual) -> tuple:
    """L1, L2 and L-infinity norms along the last axis."""
    r = np.abs(np.asarray(residual, dtype=float))
    return r.sum(axis=-1), np.sqrt((r * r).sum(axis=-1)), r.max(axis=-1)


def loss_from_norms(l1, l2, linf, n, g_size, spec: LossSpec):
    """Composite loss from precomputed residual norms (array friendly)."""
    if spec.scale != 1.0:
        l1, l2, linf = (np.asarray(v, dtype=float) / spec.scale for v in (l1, l2, linf))
    if spec.custom is not None:
        l1 = np.asarray(l1, dtype=float)
        l2 = np.asarray(l2, dtype=float)
        env = {"l1": l1, "l2": l2, "linf": np.asarray(linf, dtype=float),
               "n": np.asarray(n, dtype=float), "mae": l1 / n, "mse": l2 * l2 / n}
        base = spec._compiled(env)
    else:
        base = spec.w1 * l1 + spec.w2 * l2 + spec.w3 * linf
    return base + spec.psi * np.asarray(g_size, dtype=float)


def loss(g_size: int, pred, truth, spec: LossSpec) -> float:
    """``w1*|r|_1 + w2*|r|_2 + w3*|r|_inf + psi*g_size`` with ``r = pred - truth``."""
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise ValueError("length mismatch")
    l1, l2, linf = residual_norms(pred - truth)
    return float(loss_from_norms(l1, l2, linf, pred.shape[0], g_size, spec))


# --------------------------------------------------------------------------
# Pareto scoring


def hypervolume(points) -> float:
    """Volume dominated by ``points`` (maximization) above the origin.

    Exact, by recursive slicing along the last coordinate.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.size == 0:
        return 0.0
    P = np.clip(P, 0.0, None)
    return _hv(P)


def _hv(P: np.ndarray) -> float:
    if P.shape[1] == 1:
        return float(P[:, 0].max())
    order = np.argsort(-P[:, -1], kind="stable")
    P = P[order]
    total = 0.0
    for i in range(P.shape[0]):
        top = P[i, -1]
        below = P[i + 1, -1] if i + 1 < P.shape[0] else 0.0
        if top > below:
            total += (top - below) * _hv(_nondominated(P[: i + 1, :-1]))
    return total


def _nondominated(P: np.ndarray) -> np.ndarray:
    keep = []
    for i in range(P.shape[0]):
        dominated = False
        for j in range(P.shape[0]):
            if i != j and np.all(P[j] >= P[i]) and (np.any(P[j] > P[i]) or j < i):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return P[keep]


def _orient(v: MetricsVector) -> tuple:
    return (1.0 / (1.0 + v.mae), 1.0 / (1.0 + v.mse),
            min(max(v.r2, 0.0), 1.0), v.t_p)


def pareto_score(points) -> float:
    """Hypervolume of metric vectors mapped into ``[0, 1]^4`` (higher is better).

    Errors map through ``1/(1+x)``, R^2 is clamped to ``[0, 1]`` and the
    t-test p-value is used as is; the reference point is the origin.
    """
    points = list(points)
    if not points:
        raise ValueError("pareto_score needs at least one metric vector")
    P = np.array([_orient(v) for v in points], dtype=float)
    if not np.all(np.isfinite(P)):
        raise ValueError("metrics must be finite")
    return hypervolume(P)
