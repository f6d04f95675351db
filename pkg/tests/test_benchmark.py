import numpy as np
import pytest

from eqdetect.benchmark import (DESK, desk_config, knowledge_grid, noise_sweep, structural_match,
                                write_rows)
from eqdetect.expr import parse


def test_structural_match_a():
    names = ("x1", "x2", "x3")
    m = structural_match(parse("add(mul(x3, x2), x1)", names), names, "A")
    assert m.match
    np.testing.assert_allclose(m.coefficients, [1, 1], atol=1e-9)
    assert not structural_match(parse("add(mul(x1, x2), x3)", names), names, "A").match
    # a term with a zero coefficient is not a match
    assert not structural_match(parse("x1", names), names, "A").match


def test_structural_match_scaled_c():
    names = ("z1", "z2", "z3", "z4")
    t = parse("add(mul(12.9, div(mul(sub(z1, z2), z3), mul(z2, mul(z4, z4)))), 0.04)", names)
    m = structural_match(t, names, "C")
    assert m.match and m.coefficients[0] == pytest.approx(12.9)
    assert m.prefactor_error == pytest.approx(abs(12.9 - 13.08) / 13.08)


def test_structural_match_unrecoverable_d():
    names = ("z1", "z2", "z3")
    assert not structural_match(parse("mul(z1, z3)", names), names, "D").match


def test_desk_config_overrides():
    cfg = desk_config("B", seed=5, ga_runs=2)
    assert cfg.seed == 5 and cfg.ga_runs == 2 and cfg.force_lv
    assert set(DESK) == set("ABCDEF")


def test_small_knowledge_grid_rows():
    rows = knowledge_grid(repeats=1, configs=[(0, 0, 0, 0, 0), (1, 1, 1, 1, 1)], n_samples=200,
                          ga_population=60, ga_generations=3, ga_runs=1, rho=2000,
                          lv_patience=500)
    assert [r["config"] for r in rows] == ["00000", "11111"]
    assert rows[0]["normalized_time"] == 1.0
    assert all(0.0 <= r["success_rate"] <= 1.0 for r in rows)


def test_small_sweep_and_csv(tmp_path):
    from eqdetect.benchmark import SweepSettings
    st = SweepSettings(n_samples=150, ga_population=60, ga_generations=5, rho=2000,
                       patience=500, xi=(3, 7))
    rows = noise_sweep("A", [0.0], modes=("target",), repeats=1, settings=st)
    assert {r["component"] for r in rows} == {"GA", "LV"}
    write_rows(rows, tmp_path / "s.csv")
    head = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert head == "experiment,mode,level,component,repeats,success"
    with pytest.raises(ValueError):
        noise_sweep("B", [0.0])
