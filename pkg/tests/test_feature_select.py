import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqdetect.dataset import Dataset, FeatureGroups
from eqdetect.feature_select import (ABSENT, FsConfig, decode, fs_crossover, fs_fitness,
                                     fs_mutate, fs_select, run_feature_selection)

B_GROUPS = FeatureGroups.from_ranges([(1, 7), (8, 14), (15, 21), (22, 28), 29, 30, 31, 32, 33], 33)


def _dummy(n_features, n=20):
    rng = np.random.default_rng(0)
    return Dataset(rng.uniform(size=(n, n_features)), rng.uniform(size=n),
                   tuple(f"y{i + 1}" for i in range(n_features)))


def test_fitness_perfect_oracle():
    d = _dummy(33)
    cfg = FsConfig(omega_fs=1.0)
    assert fs_fitness((0,) * 9, d, B_GROUPS, cfg, oracle=lambda _: 0.0) == 0.0


def test_fitness_hand_arithmetic():
    d = _dummy(33)
    f = fs_fitness((0,) * 9, d, B_GROUPS, FsConfig(), oracle=lambda _: 0.2)
    assert f == pytest.approx(0.9 * 0.2 + 0.1 * 9 / 33, abs=1e-12)
    assert f == pytest.approx(0.2073, abs=5e-5)


def test_fitness_strict_mode_ranks_by_error():
    d = _dummy(33)
    errs = {(0,) * 9: 0.3, (1, 1, 1, 1, 0, 0, 0, 0, 0): 0.1}
    fa, fb = (fs_fitness(c, d, B_GROUPS, FsConfig(), oracle=lambda s, e=e: e)
              for c, e in errs.items())
    assert fb < fa and fa - fb == pytest.approx(0.9 * 0.2)


def test_fitness_empty_subset_is_worst():
    g = FeatureGroups(((0, 1), (2,)))
    assert fs_fitness((ABSENT, ABSENT), _dummy(3), g, FsConfig(optional_membership=True)) == 1.0


def test_decode_one_per_group():
    assert decode((6, 0, 3, 1, 0, 0, 0, 0, 0), B_GROUPS) == (6, 7, 17, 22, 28, 29, 30, 31, 32)


def test_select_full_royalty_is_permutation():
    pop = [(i,) for i in range(10)]
    out = fs_select(pop, np.linspace(0, 0.9, 10), 1.0, 0)
    assert sorted(out) == pop


def test_select_uniform_when_tied():
    pop = [(i,) for i in range(4)]
    counts = np.zeros(4)
    rng = np.random.default_rng(0)
    for _ in range(2000):
        for c in fs_select(pop, [0.5] * 4, 0.0, rng):
            counts[c[0]] += 1
    np.testing.assert_allclose(counts / counts.sum(), 0.25, atol=0.02)


def test_select_best_always_survives():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        fit = rng.uniform(size=20)
        pop = [(i,) for i in range(20)]
        out = fs_select(pop, fit, 1 / 20, rng)
        assert (int(np.argmin(fit)),) in out
        assert len(out) == 20


def test_crossover_cases():
    a, b = (1, 2, 3, 4), (5, 6, 7, 8)
    assert fs_crossover(a, b, 0, point=0) == (b, a)
    assert fs_crossover(a, a, 3) == (a, a)


@given(st.integers(0, 10_000), st.integers(1, 12))
@settings(max_examples=100, deadline=None)
def test_crossover_positional_provenance(seed, n):
    rng = np.random.default_rng(seed)
    a = tuple(rng.integers(0, 7, n))
    b = tuple(rng.integers(0, 7, n))
    c1, c2 = fs_crossover(a, b, rng)
    for i in range(n):
        assert {c1[i], c2[i]} == {a[i], b[i]}


def test_mutate_singletons_identity():
    for s in range(50):
        assert fs_mutate((0, 0, 0), (1, 1, 1), s) == (0, 0, 0)


def test_mutate_rate_and_change():
    rng = np.random.default_rng(0)
    n = 20_000
    changed = 0
    for _ in range(n):
        out = fs_mutate((3,) + (0,) * 8, B_GROUPS.sizes, rng)
        changed += out[0] != 3
        for i, s in enumerate(B_GROUPS.sizes):
            assert 0 <= out[i] < s
    assert changed / n == pytest.approx(7 / 33, abs=0.01)


def test_run_single_choice_groups():
    d = _dummy(1)
    res = run_feature_selection(d, FeatureGroups.singletons(1))
    assert res.selected == (0,) and res.generations_run == 0


def test_run_trace_monotone_and_strict_size():
    d = _dummy(33, n=40)
    err = {}

    def oracle(sub):
        key = sub.names
        return err.setdefault(key, float(np.random.default_rng(abs(hash(key)) % 2**32).uniform()))

    res = run_feature_selection(d, B_GROUPS, FsConfig(population=12, generations=8), oracle)
    assert len(res.selected) == 9
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
    assert res.fitness == res.trace[-1]


def test_planted_signal_recovered():
    # target depends only on the third member of the second group
    groups = FeatureGroups(((0, 1), (2, 3, 4, 5)))
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.uniform(1, 10, size=(120, 6))
        d = Dataset(X, 2.0 * X[:, 4] ** 2, tuple(f"f{i}" for i in range(6)))
        res = run_feature_selection(d, groups, FsConfig(population=6, generations=20, seed=seed))
        hits += res.chromosome[1] == 2
    assert hits >= 18
