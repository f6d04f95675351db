"""Black-box surrogate regressors: model search, stability gate, synthetic
sampling and permutation importance.

The candidate family is fixed and small (k-NN, random forest, ridge on a
quadratic expansion); each member is scored under k-fold cross-validation
by the hypervolume of its per-fold metric vectors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.ensemble import RandomForestRegressor
from sklearn.linear_model import Ridge
from sklearn.model_selection import KFold
from sklearn.neighbors import KNeighborsRegressor
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import MinMaxScaler, PolynomialFeatures, StandardScaler

from .dataset import Dataset
from .metrics import MetricsVector, compute_metrics, pareto_score, summarize

__all__ = [
    "FAMILY",
    "SurrogateModel",
    "SyntheticSpec",
    "ShortfallWarning",
    "search_model",
    "gate_check",
    "augment",
    "feature_importance",
    "normalized_mae",
    "cv_normalized_mae",
]

# (family member, hyperparameters); order fixes the tie-break key
FAMILY = (
    ("knn", {"n_neighbors": 3}),
    ("knn", {"n_neighbors": 5}),
    ("knn", {"n_neighbors": 10}),
    ("forest", {"n_estimators": 50, "max_depth": 6}),
    ("forest", {"n_estimators": 50, "max_depth": 12}),
    ("forest", {"n_estimators": 100, "max_depth": 6}),
    ("forest", {"n_estimators": 100, "max_depth": 12}),
    ("ridge_poly2", {"alpha": 1e-3}),
    ("ridge_poly2", {"alpha": 1e-1}),
)

# single member used as the feature-selection fitness oracle
FS_MEMBER = ("forest", {"n_estimators": 30, "max_depth": 8})


def make_estimator(name: str, params: dict, seed: int):
    if name == "knn":
        return make_pipeline(MinMaxScaler(), KNeighborsRegressor(**params))
    if name == "forest":
        return RandomForestRegressor(random_state=seed, n_jobs=1, **params)
    if name == "ridge_poly2":
        return make_pipeline(StandardScaler(), PolynomialFeatures(2),
                             Ridge(**params))
    raise ValueError(f"unknown surrogate family member {name!r}")


def provenance_key(name: str, params: dict) -> str:
    inner = ",".join(f"{k}={params[k]}" for k in sorted(params))
    return f"{name}({inner})"


def normalized_mae(pred, truth) -> float:
    """MAE divided by the mean absolute deviation of ``truth``, clamped to [0, 1]."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    mae = float(np.mean(np.abs(pred - truth)))
    scale = float(np.mean(np.abs(truth - truth.mean())))
    if scale == 0.0:
        return 0.0 if mae == 0.0 else 1.0
    return min(max(mae / scale, 0.0), 1.0)


def _folds(n: int, k: int, seed: int):
    return list(KFold(n_splits=k, shuffle=True, random_state=seed).split(np.arange(n)))


@dataclass
class SurrogateModel:
    """A fitted regressor plus its cross-validation record."""

    name: str
    params: dict
    estimator: object
    fold_metrics: list
    fold_nmae: list
    score: float
    evaluated: list = field(default_factory=list)
    subset_flag: bool = False

    @property
    def key(self) -> str:
        return provenance_key(self.name, self.params)

    @property
    def k(self) -> int:
        return len(self.fold_metrics)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(getattr(X, "features", X), dtype=float))
        return np.asarray(self.estimator.predict(X), dtype=float)

    @property
    def nmae_mean(self) -> float:
        return float(np.mean(self.fold_nmae))

    @property
    def nmae_std(self) -> float:
        return float(np.std(self.fold_nmae))

    @property
    def r2_mean(self) -> float:
        return float(np.mean([m.r2 for m in self.fold_metrics]))

    def mean_metrics(self) -> MetricsVector:
        return MetricsVector(*(float(np.mean([getattr(m, a) for m in self.fold_metrics]))
                               for a in ("mae", "mse", "r2", "t_p")))

    def summary(self) -> dict:
        return {
            "model": self.key,
            "score": self.score,
            "cv_metrics": summarize(self.fold_metrics),
            "cv_nmae": {"mean": self.nmae_mean, "std": self.nmae_std},
            "evaluated": [{"model": k, "score": s} for k, s in self.evaluated],
            "budget_subset": self.subset_flag,
        }


def _cross_validate(X, y, name, params, folds, seed):
    metrics, nmae = [], []
    for tr, te in folds:
        est = make_estimator(name, params, seed)
        est.fit(X[tr], y[tr])
        pred = est.predict(X[te])
        metrics.append(compute_metrics(pred, y[te]))
        nmae.append(normalized_mae(pred, y[te]))
    return metrics, nmae


def cv_normalized_mae(data: Dataset, k: int = 5, seed: int = 0,
                      member=FS_MEMBER) -> float:
    """Fold-mean normalized MAE of one family member (a cheap fitness oracle)."""
    X, y = data.features, data.target
    folds = _folds(len(y), k, seed)
    _, nmae = _cross_validate(X, y, member[0], member[1], folds, seed)
    return float(np.mean(nmae))


def search_model(data: Dataset, k: int = 5, budget: int | None = None,
                 seed: int = 0, family=FAMILY) -> SurrogateModel:
    """Cross-validate every family member and return the best, refit on all rows.

    Members are ranked by the hypervolume of their per-fold metric vectors;
    ties go to the lexicographically smallest provenance key. With a
    ``budget`` below the family size a seeded random subset is evaluated and
    the result is flagged.
    """
    X, y = data.features, data.target
    if len(y) < 2 * k:
        raise ValueError(f"need at least {2 * k} rows for {k}-fold search, got {len(y)}")
    family = list(family)
    subset = False
    if budget is not None and budget < len(family):
        if budget < 1:
            raise ValueError("budget must be >= 1")
        pick = np.sort(np.random.default_rng(seed).choice(len(family), budget, replace=False))
        family = [family[i] for i in pick]
        subset = True
    folds = _folds(len(y), k, seed)
    results = []
    for name, params in family:
        metrics, nmae = _cross_validate(X, y, name, params, folds, seed)
        score = pareto_score(metrics)
        results.append((-score, provenance_key(name, params), name, params, metrics, nmae))
    results.sort(key=lambda r: (r[0], r[1]))
    neg, key, name, params, metrics, nmae = results[0]
    est = make_estimator(name, params, seed).fit(X, y)
    return SurrogateModel(name, dict(params), est, metrics, nmae, -neg,
                          evaluated=[(r[1], -r[0]) for r in results],
                          subset_flag=subset)


def gate_check(model: SurrogateModel, zeta_mean: float = 0.1,
               zeta_std: float = 0.02) -> bool:
    """Pass iff fold-mean and fold-std of normalized MAE are within thresholds."""
    if not model.fold_nmae:
        raise ValueError("model has no cross-validation record")
    return model.nmae_mean <= zeta_mean and model.nmae_std <= zeta_std


class ShortfallWarning(UserWarning):
    """Fewer synthetic rows were accepted than requested."""


@dataclass(frozen=True)
class SyntheticSpec:
    """Synthetic sampling settings.

    ``tau`` rows are requested; a proposal is accepted when at least
    ``kappa`` original rows lie within Euclidean distance ``r``. With
    ``normalize`` on, distances are measured after min-max scaling each
    feature to [0, 1].
    """

    tau: int
    r: float = 0.025
    kappa: int = 3
    max_rejections: int | None = None
    normalize: bool = True

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not self.r > 0:
            raise ValueError("r must be > 0")
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")

    @property
    def rejection_cap(self) -> int:
        if self.max_rejections is not None:
            return self.max_rejections
        return 200 * self.tau + 10_000


def _scaling(X: np.ndarray, normalize: bool):
    lo, hi = X.min(axis=0), X.max(axis=0)
    if not normalize:
        return lo, hi, np.ones_like(lo)
    span = hi - lo
    return lo, hi, np.where(span > 0, span, 1.0)


def augment(data: Dataset, model: SurrogateModel, spec: SyntheticSpec,
            seed: int = 0) -> Dataset:
    """Append up to ``spec.tau`` surrogate-labelled rows inside the data's box.

    Proposals are uniform in the min-max bounding box and kept only if they
    have at least ``kappa`` original neighbours within ``r``. Original rows
    are never modified; appended rows are flagged in ``synthetic``.
    """
    if spec.tau == 0:
        return data
    X = data.features
    lo, hi, scale = _scaling(X, spec.normalize)
    tree = cKDTree((X - lo) / scale)
    rng = np.random.default_rng(seed)
    accepted = []
    rejected = 0
    batch = max(256, 4 * spec.tau)
    cap = spec.rejection_cap
    while len(accepted) < spec.tau and rejected <= cap:
        prop = rng.uniform(lo, hi, size=(batch, X.shape[1]))
        counts = tree.query_ball_point((prop - lo) / scale, spec.r, return_length=True)
        for row, ok in zip(prop, counts >= spec.kappa):
            if ok:
                accepted.append(row)
                if len(accepted) == spec.tau:
                    break
            else:
                rejected += 1
                if rejected > cap:
                    break
    if len(accepted) < spec.tau:
        warnings.warn(f"synthetic sampling accepted {len(accepted)} of {spec.tau} "
                      f"rows after {rejected} rejections", ShortfallWarning, stacklevel=2)
    if not accepted:
        return data
    S = np.array(accepted)
    y_syn = model.predict(S)
    prior = data.synthetic if data.synthetic is not None else np.zeros(data.n_samples, bool)
    return Dataset(np.vstack([X, S]), np.concatenate([data.target, y_syn]), data.names,
                   synthetic=np.concatenate([prior, np.ones(len(S), bool)]))


def feature_importance(model: SurrogateModel, data: Dataset, seed: int = 0,
                       n_repeats: int = 10) -> np.ndarray:
    """Permutation importance: mean MAE increase over column shuffles.

    Negative means (shuffle noise on irrelevant columns) are reported as 0.
    """
    X, y = data.features, data.target
    base = float(np.mean(np.abs(model.predict(X) - y)))
    rng = np.random.default_rng(seed)
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        incs = []
        for _ in range(n_repeats):
            Xp = X.copy()
            Xp[:, j] = rng.permutation(Xp[:, j])
            incs.append(float(np.mean(np.abs(model.predict(Xp) - y))) - base)
        out[j] = max(0.0, float(np.mean(incs)))
    return out


def default_spec(n_samples: int, **kw) -> SyntheticSpec:
    return SyntheticSpec(tau=int(math.ceil(0.1 * n_samples)), **kw)
