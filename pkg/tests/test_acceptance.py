"""One test per acceptance criterion; each prints a single pass/fail line."""

import json
import math
import subprocess
import sys
from dataclasses import replace

import numpy as np

from qexp_bsde import estimates as est
from qexp_bsde.drivers import (RegularizationIndex, cole_hopf_driver, exp_utility_driver, inf_convolve,
                               j_gamma, qexp_saturating_driver, regularize, sample_points, truncate_phi,
                               truncate_phi_prime)
from qexp_bsde.levy import MarkSpec
from qexp_bsde.malliavin import check_representation, residuals_shrink
from qexp_bsde.problems import PROBLEM_PRESETS, solve_problem
from qexp_bsde.solver import PicardOptions, solve_lattice, solve_qexp_cascade

OPTS = PicardOptions()


def test_criterion_01_function_identities(verdict):
    x = np.linspace(-5, 5, 10_000)
    worst_id = 0.0
    for g in (0.5, 1.0, 2.0):
        lhs = 2 * g * j_gamma(2 * g, x)
        rhs = np.expm1(g * x) ** 2 + 2 * g * j_gamma(g, x)
        worst_id = max(worst_id, float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(lhs), 1e-300))))
    s = np.expm1(x) ** 2 + np.expm1(-x) ** 2
    min_ratio = float(np.min(s / x**2))
    ok = worst_id <= 1e-12 and min_ratio >= 1 - 1e-12
    verdict(1, "j_gamma identity and exponential square inequality", ok,
            f"identity rel err {worst_id:.2e}, min of ((e^x-1)^2+(e^-x-1)^2)/x^2 = {min_ratio:.6f}")


def test_criterion_02_truncation_and_regularization(verdict):
    m = 3
    x = np.linspace(-12, 12, 24_001)
    phi = truncate_phi(m, x)
    inner = np.abs(x) <= m
    region_ok = (np.array_equal(phi[inner], x[inner]) and np.all(phi[x >= m + 2] == m + 1)
                 and np.all(phi[x <= -(m + 2)] == -(m + 1)))
    num_slope = np.abs(np.diff(phi) / np.diff(x))
    slope = max(float(np.max(np.abs(truncate_phi_prime(m, x)))), float(np.max(num_slope)))

    marks = MarkSpec([0.5, -0.3], [1.0, 0.5])
    drv = qexp_saturating_driver(gamma=1.0, beta=0.5, l=0.2, marks=marks)
    pts = sample_points(400, n_marks=2, radius=3.0)
    t, X, y, z, psi = (pts[k] for k in ("t", "x", "y", "z", "psi"))
    fbar = np.maximum(drv(t, X, y, z, psi), 0.0)
    env = [inf_convolve(drv, n, t, X, y, z, psi) for n in (1, 2, 4, 8, 16)]
    mono = all(np.all(a <= b + 1e-12) for a, b in zip(env, env[1:]))
    below = all(np.all(e <= fbar + 1e-12) for e in env)

    numeric = replace(drv, quadratic_split=None)
    closed_err = max(float(np.max(np.abs(inf_convolve(numeric, n, t, X, y, z, psi)
                                         - inf_convolve(drv, n, t, X, y, z, psi)))) for n in (1, 2, 4))

    lip = 0.0
    bound_excess = -np.inf
    rng = np.random.default_rng(7)
    for base in (drv, numeric, exp_utility_driver(gamma=1.0, theta=0.5, marks=marks)):
        for n, mm in ((1, 2), (3, 2), (4, 8)):
            f = regularize(base, RegularizationIndex(n, mm, 5))
            z2 = z + rng.normal(scale=0.3, size=z.shape)
            ratio = np.abs(f(t, X, y, z, psi) - f(t, X, y, z2, psi)) / np.linalg.norm(z - z2, axis=1)
            lip = max(lip, float(np.max(ratio)))
            bound_excess = max(bound_excess, float(np.max(ratio)) - max(n, mm))
    ok = region_ok and slope <= 1 + 1e-9 and mono and below and closed_err <= 1e-6 and bound_excess <= 1e-6
    verdict(2, "truncation and Lipschitz regularization suite", ok,
            f"regions {region_ok}, max|phi'| {slope:.9f}, monotone {mono}, <= f+ {below}, "
            f"closed-form err {closed_err:.1e}, Lipschitz excess {bound_excess:.1e}")


def test_criterion_03_solver_oracles(verdict):
    rows = []
    for n in (25, 50, 100, 200):
        sol = solve_problem(PROBLEM_PRESETS["linear_ode"](alpha=1.0, T=1.0, n_steps=n), "lattice")
        rows.append((1.0 / n, abs(sol.y0 - math.e)))
    err_001 = rows[2][1]
    order = est.scaling_exponent([r[0] for r in rows], [r[1] for r in rows])
    ch = solve_problem(PROBLEM_PRESETS["cole_hopf"](gamma=1.0, T=1.0, n_steps=100), "lattice").y0
    prob = PROBLEM_PRESETS["linear_driver"]()
    lat = solve_problem(prob, "lattice").y0
    reg = solve_problem(prob, "regression", n_paths=10_000, seed=0)
    gap, se = abs(reg.y0 - lat), reg.y0_stderr
    ok = err_001 <= 0.05 and 0.7 <= order <= 1.3 and abs(ch - 0.5) <= 0.02 and gap <= 3 * se
    verdict(3, "lattice and regression oracles", ok,
            f"|Y0-e| {err_001:.4f}, order {order:.3f}, Cole-Hopf Y0 {ch:.6f}, "
            f"regression gap {gap:.5f} vs 3se {3 * se:.5f}")


def test_criterion_04_universal_bounds(verdict):
    violations = 0
    worst_y = 0.0
    for g in (0.5, 1.0, 2.0):
        for T in (0.5, 1.0, 2.0):
            prob = PROBLEM_PRESETS["saturating"](gamma=g, T=T, n_steps=int(40 * T), beta=0.0, l=0.0, xi_scale=1.0)
            sol = solve_lattice(prob.lattice(), prob.driver, prob.terminal, OPTS)
            reps = est.bound_reports(sol, prob.driver, prob.xi_bound)
            violations += sum(r.violated for r in reps)
            worst_y = max(worst_y, reps[0].realized_value - reps[0].bound_value)
    verdict(4, "universal Y and BMO bounds on the saturating preset", violations == 0,
            f"{violations} violations over 3x3 sweep, max(Y_sup - bound) {worst_y:.3g}")


def test_criterion_05_comparison(verdict):
    prob = PROBLEM_PRESETS["exp_utility"](n_steps=25)
    lat = prob.lattice()
    base = solve_lattice(lat, prob.driver, prob.terminal, OPTS)
    worst = 0.0
    for eps in (0.1, 0.01):
        lo_xi = solve_lattice(lat, prob.driver, lambda X, e=eps: prob.terminal(X) - e, OPTS)
        drv = replace(prob.driver, f=lambda t, x, y, z, p, e=eps, f=prob.driver.f: f(t, x, y, z, p) - e)
        lo_f = solve_lattice(lat, drv, prob.terminal, OPTS)
        for sol in (lo_xi, lo_f):
            worst = max(worst, est.compare_solutions(sol, base, OPTS.tol).max_violation)
    verdict(5, "comparison principle on the exponential-utility preset", worst <= OPTS.tol,
            f"max violation {worst:.2e} (Picard tol {OPTS.tol:.0e})")


def test_criterion_06_cascade(verdict):
    prob = PROBLEM_PRESETS["exp_utility"](theta=1.5, xi_scale=1.5, n_steps=25)
    lat = prob.lattice()
    sched = [[n, m, 20] for n in (1, 2, 4, 8) for m in (1, 2, 4, 8)]
    res = solve_qexp_cascade(lat, prob.driver, prob.terminal(lat.state(lat.n_steps)), sched, OPTS)

    lp = PROBLEM_PRESETS["lipschitz"](L=3.0, n_steps=25)
    llat = lp.lattice()
    direct = solve_lattice(llat, lp.driver, lp.terminal, OPTS)
    ybound = est.universal_y_bound(lp.driver.beta, lp.driver.gamma, lp.grid.T, lp.xi_bound, lp.driver.l_bound)
    k = int(math.ceil(ybound))
    lres = solve_qexp_cascade(llat, lp.driver, lp.terminal(llat.state(llat.n_steps)),
                              [[n, m, k] for n in (3, 4, 8) for m in (3, 4, 8)], OPTS)
    gap = max(est.compare_solutions(s, direct).max_gap for s in lres.solutions.values())
    ok = res.n_violation <= 1e-10 and res.m_violation <= 1e-10 and gap <= 1e-8
    verdict(6, "cascade monotonicity and Lipschitz agreement", ok,
            f"n-violation {res.n_violation:.1e}, m-violation {res.m_violation:.1e}, "
            f"Lipschitz gap {gap:.1e} at k={k}")


def test_criterion_07_energy(verdict):
    worst = -np.inf
    n_checks = 0
    for name, ctor in PROBLEM_PRESETS.items():
        prob = ctor(n_steps=25)
        sol = solve_problem(prob, "lattice" if prob.model.additive else "regression", n_paths=10_000)
        bmo = est.bmo_norm(sol, "Z")
        for n in (1, 2):
            r = est.energy_check(sol, n, bmo, tolerance=1e-12)
            worst = max(worst, r.realized_value - r.bound_value)
            n_checks += 1
            if r.violated:
                verdict(7, "energy inequality", False, f"{name} n={n}: {r.realized_value} > {r.bound_value}")
    verdict(7, "energy inequality on all presets", True, f"{n_checks} checks, max(realized - bound) {worst:.3g}")


def test_criterion_08_malliavin_representation(verdict):
    failures = []
    n_rows = 0
    for name in ("identity_martingale", "linear_forward", "cole_hopf"):
        res = {}
        for level, n_steps, n_paths in (("coarse", 20, 5_000), ("fine", 40, 10_000)):
            prob = PROBLEM_PRESETS[name](n_steps=n_steps)
            base = solve_problem(prob, "regression", n_paths=n_paths, seed=0)
            res[level] = check_representation(base, prob)
        for r in res["fine"]:
            n_rows += 1
            if not r.passed:
                failures.append(f"{name} {r.quantity} s={r.s:.2f} err {r.abs_error:.3g} > {r.tolerance:.3g}")
        shrink = residuals_shrink(res["coarse"], res["fine"])
        failures += [f"{name} {key} did not shrink" for key, v in shrink.items() if not v]
    verdict(8, "Malliavin representation diagnostics", not failures,
            f"{n_rows} rows checked" + ("; " + "; ".join(failures) if failures else ", all shrink under refinement"))


def test_criterion_09_stability(verdict):
    prob = PROBLEM_PRESETS["saturating"](beta=0.5, l=0.1, n_steps=40)
    lat = prob.lattice()
    base = solve_lattice(lat, prob.driver, prob.terminal, OPTS)

    def solve(eps):
        return solve_lattice(lat, prob.driver, lambda X: prob.terminal(X) + eps, OPTS), base, eps, None

    sweep = est.stability_sweep(solve, [0.1, 0.01, 0.001])
    ratios = sweep.ratios
    ok = 0.9 <= sweep.exponent <= 1.1 and bool(np.all(np.isfinite(ratios))) and ratios.max() <= 10.0
    verdict(9, "stability sweep", ok,
            f"exponent {sweep.exponent:.4f}, LHS/RHS ratios {np.array2string(ratios, precision=4)}")


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "qexp_bsde", *args], cwd=cwd, capture_output=True, text=True)


def test_criterion_10_determinism_and_cli(verdict, tmp_path):
    cfg = tmp_path / "reg.json"
    cfg.write_text(json.dumps({"scenario": "regression_vs_lattice", "seed": 11,
                               "solver": {"n_paths": 2000}}))
    runs = [_cli("run", str(cfg), "--out-dir", str(tmp_path / f"run{k}"), "--quiet", cwd=tmp_path) for k in (0, 1)]
    csvs = sorted(p.name for p in (tmp_path / "run0").glob("*.csv"))
    same = bool(csvs) and all((tmp_path / "run0" / c).read_bytes() == (tmp_path / "run1" / c).read_bytes()
                              for c in csvs)
    failing = tmp_path / "fail.json"
    failing.write_text(json.dumps({"scenario": "cole_hopf", "params": {"tolerance": 1e-12},
                                   "problem": {"preset": "cole_hopf", "params": {"n_steps": 10, "gamma": 1.0}},
                                   "driver": {"preset": "zero"}}))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": "cole_hopf", "problem": {"preset": "nope"}}))
    fail_run = _cli("run", str(failing), "--out-dir", str(tmp_path / "f"), cwd=tmp_path)
    bad_run = _cli("run", str(bad), cwd=tmp_path)
    codes = ([r.returncode for r in runs], fail_run.returncode, bad_run.returncode)
    ok = same and codes == ([0, 0], 1, 2) and "FAIL" in fail_run.stdout and "$.problem.preset" in bad_run.stderr
    verdict(10, "byte-identical reruns and exit-code contract", ok,
            f"{len(csvs)} CSVs identical={same}, exit codes pass/fail/config = {codes}")
