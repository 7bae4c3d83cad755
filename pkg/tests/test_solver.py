import math
import numpy as np
import pytest

from qexp_bsde.drivers import DriverSpec, linear_driver, zero_driver
from qexp_bsde.errors import ContractError, PicardDivergenceError
from qexp_bsde.levy import MarkSpec, TimeGrid, additive_model, simulate_paths
from qexp_bsde.problems import PROBLEM_PRESETS, problem_from_config, solve_problem
from qexp_bsde.regression import RegressionBasis
from qexp_bsde.solver import (PicardOptions, StepData, picard_iterate, solve_lattice, solve_qexp_cascade,
                              solve_regression)


def _step(e, dt=0.1):
    n = np.size(e)
    return StepData(0, 0.0, np.zeros((n, 1)), np.asarray(e, dtype=float), np.zeros((n, 1)), np.zeros((n, 0)), dt)


def test_picard_solves_implicit_linear_step():
    res = picard_iterate(_step([1.0, 2.0]), lambda t, x, y, z, p: 2.0 * y)
    np.testing.assert_allclose(res.y, np.array([1.0, 2.0]) / 0.8, rtol=1e-12)
    assert res.iterations < 40


def test_picard_divergence_is_reported():
    with pytest.raises(PicardDivergenceError) as info:
        picard_iterate(_step([10.0], dt=1.0), lambda t, x, y, z, p: 10.0 * y**2)
    assert info.value.step == 0


def test_picard_warns_at_iteration_cap(caplog):
    res = picard_iterate(_step([1.0], dt=0.5), lambda t, x, y, z, p: y, opts=PicardOptions(max_iter=3))
    assert len(res.residuals) == 3
    assert "stopped after 3 iterations" in caplog.text


def test_zero_driver_constant_terminal():
    sol = solve_problem(PROBLEM_PRESETS["zero_smoke"](c=1.7))
    assert all(np.all(y == 1.7) for y in sol.Y)
    assert all(np.all(np.abs(z) < 1e-14) for z in sol.Z)


def test_linear_ode_matches_implicit_euler_closed_form():
    n = 50
    sol = solve_problem(PROBLEM_PRESETS["linear_ode"](alpha=1.0, n_steps=n))
    assert sol.y0 == pytest.approx((1 - 1.0 / n) ** -n, rel=1e-12)
    assert abs(sol.y0 - math.e) < 0.03


def test_cole_hopf_lattice_is_exact():
    sol = solve_problem(PROBLEM_PRESETS["cole_hopf"](gamma=1.0, n_steps=50))
    assert sol.y0 == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(sol.Z[10], 1.0, atol=1e-12)


def test_identity_martingale_representation():
    sol = solve_problem(PROBLEM_PRESETS["identity_martingale"](n_steps=20))
    np.testing.assert_allclose(sol.Z[5], 1.0, atol=1e-12)
    np.testing.assert_allclose(sol.psi[5], 0.5 * (1 - 1.0 / 20), atol=1e-12)


def test_regression_and_lattice_agree_on_linear_driver():
    prob = PROBLEM_PRESETS["linear_driver"]()
    lat = solve_problem(prob)
    reg = solve_problem(prob, "regression", n_paths=5000, seed=1)
    assert abs(reg.y0 - lat.y0) < 4 * reg.y0_stderr
    assert reg.meta["n_paths"] == 5000


def test_regression_rates_mismatch():
    paths = simulate_paths(additive_model(marks=MarkSpec([0.5], [1.0])), TimeGrid(0, 1, 5), [0.0], 500, seed=0)
    drv = zero_driver(marks=MarkSpec([0.5], [2.0]))
    with pytest.raises(ContractError):
        solve_regression(paths, drv, lambda X: X[:, 0], RegressionBasis(1))


def test_quadratic_direct_solve_carries_note():
    sol = solve_problem(PROBLEM_PRESETS["cole_hopf"](n_steps=10))
    assert any("quadratic" in n for n in sol.notes)


def test_export_csv(tmp_path):
    sol = solve_problem(PROBLEM_PRESETS["linear_driver"](n_steps=3))
    f = tmp_path / "sol.csv"
    sol.export_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0].startswith("step") or "Y" in lines[0]
    assert len(lines) > 4


def test_cascade_is_monotone_and_sandwiches_direct():
    prob = PROBLEM_PRESETS["exp_utility"](n_steps=10)
    lat = prob.lattice()
    res = solve_qexp_cascade(lat, prob.driver, prob.terminal(lat.state(10)), [[1, 1, 10], [2, 1, 10], [1, 2, 10]])
    assert res.monotone()
    t = res.y0_table()
    assert t["(2,1,10)"] >= t["(1,1,10)"] >= t["(1,2,10)"]


def test_problem_from_config_errors():
    from qexp_bsde.errors import ConfigError
    with pytest.raises(ConfigError, match=r"problem\.preset"):
        problem_from_config({"preset": "nope"})
    with pytest.raises(ConfigError, match=r"problem\.params"):
        problem_from_config({"preset": "cole_hopf", "params": {"bogus": 1}})
