import warnings

import numpy as np
import pytest

from eqdetect.dataset import Dataset, generate_benchmark
from eqdetect.surrogate import (ShortfallWarning, SyntheticSpec, augment, cv_normalized_mae,
                                feature_importance, gate_check, normalized_mae, search_model)


def _linear(n=200, seed=0, extra=1):
    rng = np.random.default_rng(seed)
    X = rng.uniform(1, 10, size=(n, 1 + extra))
    return Dataset(X, 3.0 * X[:, 0], tuple(f"x{i}" for i in range(1 + extra)))


def test_exact_linear_target_fits():
    m = search_model(_linear(), k=5, seed=0)
    assert m.r2_mean >= 0.999
    assert m.k == 5


def test_pure_noise_target():
    rng = np.random.default_rng(1)
    d = Dataset(rng.uniform(size=(300, 3)), rng.normal(size=300), ("a", "b", "c"))
    assert search_model(d, seed=0).r2_mean <= 0.1


def test_search_is_deterministic_and_records_provenance():
    d = generate_benchmark("A", 150, seed=2)
    a, b = search_model(d, seed=4), search_model(d, seed=4)
    assert a.key == b.key and a.score == b.score
    assert len(a.evaluated) == 9
    assert a.summary()["model"] == a.key


def test_budget_subset_flagged():
    m = search_model(generate_benchmark("A", 100, seed=2), budget=2, seed=0)
    assert m.subset_flag and len(m.evaluated) == 2


def test_gate_rules():
    m = search_model(_linear(), seed=0)
    m.fold_nmae = [0.0] * 5
    assert gate_check(m, 1e-9, 1e-9)
    m.fold_nmae = [0.0, 0.1, 0.0, 0.1, 0.05]   # mean 0.05, std ~0.045
    assert not gate_check(m)
    m.fold_nmae = [0.05] * 5
    assert gate_check(m)


def test_normalized_mae_range():
    assert normalized_mae([1, 2, 3], [1, 2, 3]) == 0.0
    assert 0.0 <= normalized_mae([0, 0, 0], [1, 5, 9]) <= 1.0
    assert cv_normalized_mae(_linear(), k=5) < 0.1


def test_augment_tau_zero_identity():
    d = _linear()
    m = search_model(d, seed=0)
    assert augment(d, m, SyntheticSpec(tau=0)) is d


@pytest.mark.parametrize("normalize,r", [(True, 0.15), (False, 1.5)])
def test_augment_neighbour_constraint_exhaustive(normalize, r):
    d = generate_benchmark("A", 300, seed=5)
    m = search_model(d, seed=0, budget=1)
    spec = SyntheticSpec(tau=40, r=r, kappa=3, normalize=normalize)
    out = augment(d, m, spec, seed=1)
    X = d.features
    lo, span = X.min(0), np.ptp(X, axis=0)
    scale = span if normalize else np.ones_like(span)
    syn = out.features[out.synthetic]
    assert len(syn) == 40
    # every synthetic row: brute-force count of originals within r
    dist = np.sqrt((((syn[:, None, :] - X[None, :, :]) / scale) ** 2).sum(-1))
    assert np.all((dist <= r).sum(1) >= 3)
    np.testing.assert_array_equal(out.features[: d.n_samples], X)
    np.testing.assert_array_equal(out.target[d.n_samples:], m.predict(syn))
    assert np.all(syn >= lo) and np.all(syn <= X.max(0))


def test_augment_shortfall_warns():
    d = generate_benchmark("B", 60, seed=0)
    m = search_model(d, seed=0, budget=1)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        out = augment(d, m, SyntheticSpec(tau=5, r=0.01, max_rejections=500), seed=0)
    assert any(issubclass(x.category, ShortfallWarning) for x in w)
    assert out.n_samples == d.n_samples


def test_importance_signal_vs_noise():
    d = _linear(400)
    m = search_model(d, seed=0)
    imp = feature_importance(m, d, seed=0)
    assert imp[0] > 10 * imp[1]
    assert np.all(imp >= -1e-9)


def test_importance_constant_feature():
    rng = np.random.default_rng(3)
    X = np.column_stack([rng.uniform(size=200), np.full(200, 4.0)])
    d = Dataset(X, 2 * X[:, 0], ("a", "c"))
    imp = feature_importance(search_model(d, seed=0), d)
    assert imp[1] == pytest.approx(0.0, abs=1e-12)
