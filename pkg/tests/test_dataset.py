import numpy as np
import pytest

from eqdetect.dataset import (EXPERIMENTS, DataError, Dataset, FeatureGroups, MetadataError,
                              NoiseSpec, generate_benchmark, inject_noise, load_csv,
                              train_test_split, write_benchmark, write_csv)


def _write(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")


def test_load_csv_thirty_three_features_nine_groups(tmp_path):
    rng = np.random.default_rng(0)
    p = tmp_path / "b.csv"
    _write(p, [f"y{i}" for i in range(1, 34)] + ["t"], rng.uniform(size=(20, 34)).round(4).tolist())
    data, groups = load_csv(p, [(1, 7), (8, 14), (15, 21), (22, 28), 29, 30, 31, 32, 33])
    assert data.n_features == 33
    assert groups.n_groups == 9
    assert sorted(groups.sizes) == [1] * 5 + [7] * 4


def test_load_csv_default_singletons(tmp_path):
    p = tmp_path / "a.csv"
    _write(p, ["a", "b", "c", "y"], [[1, 2, 3, 4], [5, 6, 7, 8]])
    data, groups = load_csv(p)
    assert groups.groups == ((0,), (1,), (2,))
    assert data.names == ("a", "b", "c")
    np.testing.assert_array_equal(data.target, [4, 8])


def test_load_csv_rejects_text_cell(tmp_path):
    p = tmp_path / "bad.csv"
    _write(p, ["a", "y"], [[1, 2], ["abc", 3]])
    with pytest.raises(DataError):
        load_csv(p)


@pytest.mark.parametrize("ranges", [[(1, 2)], [(1, 2), (2, 3)], [(1, 4)], [(0, 3)]])
def test_bad_group_ranges(ranges):
    with pytest.raises(MetadataError):
        FeatureGroups.from_ranges(ranges, 3)


def test_group_ranges_roundtrip():
    g = FeatureGroups.from_ranges([(3, 4), 1, 2], 4)
    assert g.groups == ((0,), (1,), (2, 3))
    assert g.to_ranges() == [[1, 1], [2, 2], [3, 4]]


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.ones((3, 2)), np.ones(2), ("a", "b"))
    with pytest.raises(DataError):
        Dataset(np.ones((2, 2)), np.ones(2), ("a", "a"))
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan], [1.0]]), np.ones(2), ("a",))


def test_dataset_is_read_only():
    d = Dataset(np.ones((2, 1)), np.ones(2), ("a",))
    with pytest.raises(ValueError):
        d.features[0, 0] = 5.0


def test_csv_roundtrip(tmp_path):
    d = generate_benchmark("C", 30, seed=3)
    write_csv(d, tmp_path / "c.csv")
    back, _ = load_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.features, d.features)
    np.testing.assert_array_equal(back.target, d.target)
    assert back.names == d.names


def test_write_benchmark_sidecar(tmp_path):
    d = generate_benchmark("A", 20, seed=1, noise=None)
    side = write_benchmark(d, tmp_path / "a.csv", experiment="A", seed=1, noise=None)
    assert side.exists() and '"experiment": "A"' in side.read_text()


def _row(experiment, values):
    exp = EXPERIMENTS[experiment]
    return float(exp.formula({k: np.array([v], dtype=float) for k, v in values.items()})[0])


def test_experiment_a_formula():
    assert _row("A", {"x1": 1, "x2": 2, "x3": 3}) == pytest.approx(7.0)


def test_experiment_c_formula():
    assert _row("C", {"z1": 2, "z2": 1, "z3": 1, "z4": 1}) == pytest.approx(13.08)


def test_experiment_d_drops_z4():
    d = generate_benchmark("D", 50, seed=0)
    assert d.names == ("z1", "z2", "z3")
    assert d.n_features == 3


@pytest.mark.parametrize("key,n_feat", [("A", 3), ("B", 33), ("C", 4), ("D", 3), ("E", 12)])
def test_generator_shapes_and_determinism(key, n_feat):
    a = generate_benchmark(key, 40, seed=7)
    b = generate_benchmark(key, 40, seed=7)
    assert a.n_features == n_feat
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.target, b.target)


def test_generate_rejects_unknown():
    with pytest.raises(ValueError):
        generate_benchmark("Q", 40, seed=0)


def test_zero_noise_is_identity():
    d = generate_benchmark("A", 30, seed=0, noise=None)
    out = inject_noise(d, NoiseSpec("both", 0.0, 1))
    assert out.features.tobytes() == d.features.tobytes()
    assert out.target.tobytes() == d.target.tobytes()


def test_target_noise_relative_std():
    d = generate_benchmark("A", 20_000, seed=0, noise=None)
    out = inject_noise(d, NoiseSpec("target", 0.02, 5))
    eps = out.target / d.target - 1.0
    assert 0.016 <= eps.std(ddof=1) <= 0.024
    np.testing.assert_array_equal(out.features, d.features)


def test_input_noise_leaves_target():
    d = generate_benchmark("A", 100, seed=0, noise=None)
    out = inject_noise(d, NoiseSpec("input", 0.05, 5))
    np.testing.assert_array_equal(out.target, d.target)
    assert not np.array_equal(out.features, d.features)


def test_both_mode_spreads_more_on_c():
    # dispersion of the noisy target around the formula evaluated on the
    # (possibly noisy) inputs, which is what a search sees
    clean = generate_benchmark("C", 20_000, seed=2, noise=None)
    formula = EXPERIMENTS["C"].formula

    def spread(d):
        cols = {n: d.features[:, i] for i, n in enumerate(d.names)}
        return np.std(d.target / formula(cols) - 1.0)

    tgt = inject_noise(clean, NoiseSpec("target", 0.05, 9))
    both = inject_noise(clean, NoiseSpec("both", 0.05, 9))
    assert spread(both) > spread(tgt)


@pytest.mark.parametrize("n,frac,tr,te", [(400, 0.75, 100, 300), (10, 0.2, 8, 2)])
def test_split_sizes(n, frac, tr, te):
    d = generate_benchmark("A", n, seed=0)
    s = train_test_split(d, frac, seed=1)
    assert len(s.train_idx) == tr and len(s.test_idx) == te
    assert set(s.train_idx).isdisjoint(s.test_idx)
    assert len(set(s.train_idx) | set(s.test_idx)) == n


def test_split_degenerate():
    d = Dataset(np.ones((3, 1)), np.arange(3.0), ("a",))
    with pytest.raises(ValueError):
        train_test_split(d, 0.9, seed=0)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec("sideways", 0.1)
    with pytest.raises(ValueError):
        NoiseSpec("target", 1.5)
