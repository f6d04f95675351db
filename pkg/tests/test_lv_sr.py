import itertools
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from eqdetect.dataset import Dataset, generate_benchmark
from eqdetect.expr import ExprTree, canonicalize, evaluate, parse
from eqdetect.lv_sr import (EPS_FLOOR, OP_CODES, ConfigError, FbtCandidate, LvConfig, Sampler,
                            SamplingStrategy, StructureConstraint, candidate_tree,
                            count_topologies, enumerate_topologies, fit_and_score, run_lv_sr,
                            sample_candidate, update_sampling)
from eqdetect.metrics import LossSpec, loss, target_scale

FUNCS = ("add", "sub", "mul", "div")
OPS = {f: -(OP_CODES[f] + 1) for f in FUNCS}


def _brute_shapes(n):
    """Every valid prefix arity sequence of length n, by exhaustive search."""
    out = []
    for bits in itertools.product((0, 2), repeat=n):
        need = 1
        ok = True
        for i, a in enumerate(bits):
            if need == 0:
                ok = False
                break
            need += a - 1
        if ok and need == 0:
            out.append(bits)
    return out


def test_topology_counts_match_catalan_and_brute_force():
    expected = [1, 2, 5, 14, 42, 132, 429, 1430]
    for size, want in zip(range(3, 18, 2), expected):
        got = enumerate_topologies(size, size)
        assert len(got) == want == len(_brute_shapes(size))
        assert sorted(got) == sorted(_brute_shapes(size))
        assert count_topologies(size, size) == want


def test_topology_ranges():
    assert len(enumerate_topologies(3, 3)) == 1
    assert len(enumerate_topologies(3, 7)) == 8
    assert enumerate_topologies(1, 1) == [(0,)]
    with pytest.raises(ValueError):
        enumerate_topologies(5, 3)


def _names(n):
    return tuple(f"h{i + 1}" for i in range(n))


def _sampler(n=4, constraints=StructureConstraint(), strategy=SamplingStrategy(), xi=(3, 9)):
    return Sampler(n, LvConfig(*xi), strategy, constraints, _names(n))


def test_required_feature_always_present():
    s = _sampler(constraints=StructureConstraint(required_features=("h1",)))
    rng = np.random.default_rng(0)
    for _ in range(2000):
        assert 0 in sample_candidate(s, rng).tokens


def test_quota_fraction():
    s = _sampler(n=12, strategy=SamplingStrategy(forced_feature_quota=("h3", 0.8)),
                 xi=(5, 17))
    rng = np.random.default_rng(1)
    n = 10_000
    hits = sum(2 in sample_candidate(s, rng).tokens for _ in range(n))
    assert abs(hits / n - 0.8) <= 0.02


def test_quota_with_required_feature_and_subtree():
    cons = StructureConstraint(required_features=("h1",), required_subtree="mul(h2, h2)")
    s = _sampler(strategy=SamplingStrategy(forced_feature_quota=("h3", 0.5)), constraints=cons)
    rng = np.random.default_rng(2)
    for _ in range(1000):
        toks = sample_candidate(s, rng).tokens
        assert 0 in toks
        assert any(toks[i:i + 3] == (OPS["mul"], 1, 1) for i in range(len(toks) - 2))


def test_uniform_over_size_three_allocations():
    s = _sampler(n=2, xi=(3, 3))
    rng = np.random.default_rng(3)
    counts = Counter(sample_candidate(s, rng).tokens for _ in range(36_000))
    assert len(counts) == 4 * 3 * 3
    assert stats.chisquare(list(counts.values())).pvalue > 0.001


def test_infeasible_constraints_raise():
    with pytest.raises(ConfigError):
        _sampler(constraints=StructureConstraint(required_features=("h1", "h2", "h3")), xi=(3, 3))
    with pytest.raises(ConfigError):
        _sampler(strategy=SamplingStrategy(forced_feature_quota=("h1", 0.5)),
                 constraints=StructureConstraint(required_features=("h1",)))
    with pytest.raises(ConfigError):
        _sampler(constraints=StructureConstraint(required_subtree="mul(h1, mul(h2, h3))"),
                 xi=(3, 3))
    with pytest.raises(ConfigError):
        _sampler(constraints=StructureConstraint(required_features=("nope",)))
    with pytest.raises(ConfigError):
        SamplingStrategy(forced_feature_quota=("h1", 1.5))


def _c_data(scale=13.08):
    d = generate_benchmark("C", 300, 0, noise=None)
    return d, scale


C_TOKENS = (OPS["div"], OPS["mul"], OPS["sub"], 0, 1, 2, OPS["mul"], 1, OPS["mul"], 3, 3)


def test_fit_recovers_prefactor():
    d = generate_benchmark("C", 300, 0, noise=None)
    c = fit_and_score(FbtCandidate(C_TOKENS), d, LossSpec())
    assert c.a == pytest.approx(13.08, abs=1e-9)
    assert c.b == pytest.approx(0.0, abs=1e-9)


def test_fit_identity_and_constant():
    rng = np.random.default_rng(0)
    X = rng.uniform(1, 10, size=(50, 2))
    d = Dataset(X, X[:, 0] + X[:, 1], ("p", "q"))
    c = fit_and_score(FbtCandidate((OPS["add"], 0, 1)), d, LossSpec())
    assert (c.a, c.b) == (pytest.approx(1, abs=1e-9), pytest.approx(0, abs=1e-9))
    # x0 - x0 is constant zero
    c = fit_and_score(FbtCandidate((OPS["sub"], 0, 0)), d, LossSpec())
    assert c.a == 0.0 and c.b == pytest.approx(d.target.mean())
    assert candidate_tree(c, 2).size == 1


def test_fit_loss_counts_coefficients():
    rng = np.random.default_rng(0)
    X = rng.uniform(1, 10, size=(50, 2))
    d = Dataset(X, X[:, 0] * X[:, 1], ("p", "q"))
    c = fit_and_score(FbtCandidate((OPS["mul"], 0, 1)), d, LossSpec(psi=0.1))
    assert c.loss == pytest.approx(0.1 * 5, abs=1e-8)


def test_update_equal_losses_keeps_table():
    hist = {(3, 1, 0, 1, 1): 2.0, (5, 2, 0, 2, 1): 2.0, (7, 3, 0, 2, 2): 2.0}
    table = {3: 0.2, 5: 0.3, 7: 0.5}
    out = update_sampling(hist, table, K=2)
    for k in table:
        assert out[k] == pytest.approx(table[k])


def test_update_favours_low_loss_size():
    hist = {}
    for i in range(10):
        hist[(3, i % 3, 1, i % 2, 1)] = 1.0
        hist[(5, i % 3, 2, i % 2, 3)] = 10.0
    table = {3: 0.5, 5: 0.5}
    out = update_sampling(hist, table, K=3)
    assert out[3] > 0.5 > out[5]
    assert sum(out.values()) == pytest.approx(1.0)


def test_update_floor():
    hist = {(3, 1, 0, 2, 0): 1e-6, (5, 2, 0, 3, 0): 1e12}
    table = {3: 0.5, 5: 0.5}
    for _ in range(30):
        table = update_sampling(hist, table, K=1)
    assert table[5] >= EPS_FLOOR * (1 - 1e-9)
    assert sum(table.values()) == pytest.approx(1.0)


def _oracle_best(X, y, n_funcs=FUNCS):
    """Brute-force minimum loss over every size-3 allocation, evaluated
    with the tree evaluator and numpy least squares."""
    nf = X.shape[1]
    spec = LossSpec().with_scale(target_scale(y))
    best = np.inf
    for f in n_funcs:
        for a, b in itertools.product(range(nf + 1), repeat=2):
            leaf = lambda j: 1.0 if j == nf else j  # noqa: E731
            t = evaluate(ExprTree((f, leaf(a), leaf(b))), X)
            if np.std(t) > 1e-9 * max(1.0, abs(t.mean())):
                coef, *_ = np.linalg.lstsq(np.column_stack([t, np.ones_like(t)]), y, rcond=None)
                pred = coef[0] * t + coef[1]
            else:
                pred = np.full_like(y, y.mean())
            best = min(best, loss(5, pred, y, spec))
    return best


def test_exhaustive_mode_matches_brute_force_100_datasets():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        nf = int(rng.integers(1, 4))
        X = rng.uniform(0.5, 5, size=(30, nf))
        w = rng.normal(size=nf)
        y = X @ w + rng.normal(0, 0.5, 30) + (X[:, 0] * X[:, -1] if seed % 2 else 0)
        d = Dataset(X, y, _names(nf))
        res = run_lv_sr(d, LvConfig(3, 3, seed=seed))
        assert res.exhaustive and res.stop_reason == "exhausted"
        assert res.evaluations == 4 * (nf + 1) ** 2
        assert res.best.loss == pytest.approx(_oracle_best(X, y), rel=1e-9, abs=1e-12)


def test_two_feature_space_is_36():
    rng = np.random.default_rng(0)
    X = rng.uniform(1, 5, size=(40, 2))
    res = run_lv_sr(Dataset(X, X[:, 0] / X[:, 1], ("p", "q")), LvConfig(3, 3))
    assert res.evaluations == 36
    assert res.key == canonicalize(parse("div(x0, x1)"))


def test_sampled_search_finds_c_structure():
    from eqdetect.dataset import train_test_split
    d = train_test_split(generate_benchmark("C", 800, 4), 0.2, 4)
    res = run_lv_sr(d, LvConfig(9, 13, seed=4, patience=20_000), SamplingStrategy(rho=60_000))
    assert not res.exhaustive
    assert res.raw.size == 11
    assert res.best.a == pytest.approx(13.08, rel=0.02)


def test_stop_rules_and_determinism():
    d = generate_benchmark("C", 200, 1)
    cfg = LvConfig(3, 9, seed=3, keep_log=True)
    a = run_lv_sr(d, cfg, SamplingStrategy(rho=3000, theta=500))
    b = run_lv_sr(d, cfg, SamplingStrategy(rho=3000, theta=500))
    assert a.stop_reason == "rho" and a.evaluations == 3000
    assert a.summary(d.names) == b.summary(d.names)
    assert len({t for t, *_ in a.log}) == 3000   # no candidate scored twice
    p = run_lv_sr(d, LvConfig(3, 9, seed=3, patience=200), SamplingStrategy(rho=10**6))
    assert p.stop_reason == "patience"


def test_write_log(tmp_path):
    d = generate_benchmark("A", 60, 1)
    res = run_lv_sr(d, LvConfig(3, 3, keep_log=True))
    res.write_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "key,size,loss,a,b" and len(lines) == 1 + res.evaluations


def test_lv_config_validation():
    with pytest.raises(ConfigError):
        LvConfig(4, 4)
    with pytest.raises(ConfigError):
        LvConfig(3, 5, functions=("pow",))
