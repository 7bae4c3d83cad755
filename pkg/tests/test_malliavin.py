import math

import numpy as np
import pytest

from qexp_bsde.errors import CapabilityError, DomainError
from qexp_bsde.levy import MarkSpec
from qexp_bsde.malliavin import (DerivativeDirection, check_representation, finite_difference_oracle,
                                 forward_derivative_paths, residuals_shrink, solve_malliavin_jump,
                                 solve_malliavin_jump_direct, solve_malliavin_wiener, write_diagnostics_csv)
from qexp_bsde.problems import PROBLEM_PRESETS, solve_problem


def test_direction_validation():
    with pytest.raises(DomainError):
        DerivativeDirection("bogus", 0, 0.5)
    prob = PROBLEM_PRESETS["identity_martingale"]()
    assert DerivativeDirection("jump", 0, 0.5).size(prob.model) == 0.5
    with pytest.raises(DomainError):
        DerivativeDirection("jump", 3, 0.5).size(prob.model)


def test_wiener_derivative_identity_and_zero_before_s():
    prob = PROBLEM_PRESETS["identity_martingale"](n_steps=20)
    base = solve_problem(prob)
    ms = solve_malliavin_wiener(base, prob, DerivativeDirection("wiener", 0, 0.5))
    assert ms.node == 10
    assert all(np.all(ms.Y[i] == 0) for i in range(10))
    for i in range(10, 21):
        np.testing.assert_allclose(ms.Y[i], 1.0, atol=1e-12)


def test_wiener_derivative_linear_driver():
    n = 40
    prob = PROBLEM_PRESETS["linear_driver"](alpha=0.5, b=0.0, power=1, n_steps=n)
    base = solve_problem(prob)
    ms = solve_malliavin_wiener(base, prob, DerivativeDirection("wiener", 0, 0.25))
    for i in (10, 20, 30):
        t = i / n
        np.testing.assert_allclose(ms.Y[i], math.exp(0.5 * (1 - t)), atol=0.02)


def test_wiener_derivative_cole_hopf():
    prob = PROBLEM_PRESETS["cole_hopf"](n_steps=20)
    base = solve_problem(prob)
    ms = solve_malliavin_wiener(base, prob, DerivativeDirection("wiener", 0, 0.25))
    np.testing.assert_allclose(ms.Y[10], 1.0, atol=1e-10)


def test_jump_derivative_difference_equals_direct():
    prob = PROBLEM_PRESETS["saturating"](n_steps=16)
    base = solve_problem(prob)
    d = DerivativeDirection("jump", 0, 0.5)
    a = solve_malliavin_jump(base, prob, d)
    b = solve_malliavin_jump_direct(base, prob, d)
    for i in range(a.node, 17):
        np.testing.assert_allclose(a.Y[i], b.Y[i], atol=1e-9)
    assert all(np.all(a.Y[i] == 0) for i in range(a.node))


def test_jump_derivative_identity_and_linearity():
    vals = []
    for size in (0.5, 1.0):
        marks = MarkSpec([size], [1.0])
        prob = PROBLEM_PRESETS["identity_martingale"](n_steps=20, marks=marks.to_config())
        base = solve_problem(prob)
        ms = solve_malliavin_jump(base, prob, DerivativeDirection("jump", 0, 0.5))
        vals.append(ms.Y[15])
        np.testing.assert_allclose(ms.Y[15], 1.0, atol=1e-12)
    np.testing.assert_allclose(vals[0], vals[1], atol=1e-12)


def test_direct_jump_needs_lattice():
    prob = PROBLEM_PRESETS["identity_martingale"](n_steps=10)
    base = solve_problem(prob, "regression", n_paths=500)
    with pytest.raises(CapabilityError):
        solve_malliavin_jump_direct(base, prob, DerivativeDirection("jump", 0, 0.5))


def test_finite_difference_oracle():
    prob = PROBLEM_PRESETS["identity_martingale"](n_steps=10)
    g, e = finite_difference_oracle(prob, [0.3], 0.1)
    assert g[0] == pytest.approx(1.0, abs=1e-12) and e[0] == 0.0
    quad = PROBLEM_PRESETS["zero_smoke"]().with_terminal(lambda X: X[:, 0] ** 2)
    quad = quad.__class__(**{**quad.__dict__, "model": PROBLEM_PRESETS["linear_ode"]().model})
    g, _ = finite_difference_oracle(quad, [0.7], 0.05)
    assert g[0] == pytest.approx(1.4, abs=1e-12)
    with pytest.raises(DomainError):
        finite_difference_oracle(prob, [0.0], 0.0)


def test_fd_oracle_h_sweep_stable_on_cole_hopf():
    prob = PROBLEM_PRESETS["cole_hopf"](n_steps=10)
    gs = [finite_difference_oracle(prob, [0.0], h)[0][0] for h in (0.1, 0.05, 0.025)]
    np.testing.assert_allclose(gs, 1.0, atol=1e-9)


def test_forward_derivative_multiplicative():
    prob = PROBLEM_PRESETS["linear_forward"](n_steps=10, alpha=0.0, vol=0.0)
    paths = prob.paths(50, seed=0)
    DX = forward_derivative_paths(prob.model, paths, DerivativeDirection("jump", 0, 0.5))
    # dX = X e dμ̃ is linear, so the inserted jump scales X_T by (1 + z) and the quotient is X_T
    np.testing.assert_allclose(DX[-1][:, 0], paths.X[:, -1, 0], rtol=1e-12)
    assert all(np.all(DX[i] == 0) for i in range(5))


def test_representation_on_lattice_and_csv(tmp_path):
    prob = PROBLEM_PRESETS["identity_martingale"](n_steps=20)
    base = solve_problem(prob)
    rows = check_representation(base, prob)
    assert {r.quantity for r in rows} == {"DY_vs_Z", "Z_vs_dudx_sigma", "zDY_vs_psi", "psi_vs_u_jump"}
    assert all(r.passed for r in rows)
    assert all(residuals_shrink(rows, rows).values())
    f = tmp_path / "d.csv"
    write_diagnostics_csv(rows, f)
    assert f.read_text().splitlines()[0].startswith("s,direction,quantity,lhs,rhs,abs_error,rel_error")
