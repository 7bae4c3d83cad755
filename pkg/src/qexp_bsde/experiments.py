"""Declarative experiment runner.

A JSON config names a registered scenario plus optional preset overrides and
solver options.  Each scenario runs a fixed pipeline (simulate, solve,
diagnose), writes CSV tables into the output directory and returns verdicts.
``manifest.json`` and ``summary.txt`` are written last.  All randomness
derives from the config seed through named sub-streams, so equal configs give
byte-identical CSVs.
"""

from __future__ import annotations

import contextlib
import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import estimates as est
from .drivers import driver_from_config
from .errors import ConfigError, PipelineError, QexpError
from .levy import model_from_config
from .malliavin import check_representation, residuals_shrink
from .problems import PROBLEM_PRESETS, problem_from_config, solve_problem
from .regression import RegressionBasis
from .solver import PicardOptions, solve_lattice, solve_qexp_cascade

STATUSES = ("pass", "fail", "skipped")

SOLVER_DEFAULTS = {"backend": "lattice", "n_paths": 10_000, "degree": 2, "picard_tol": 1e-12,
                   "picard_max_iter": 100, "scheme": "binomial"}


# --------------------------------------------------------------------------
# config


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int = 0
    out_dir: str = "out"
    problem: dict | None = None
    model: dict | None = None
    driver: dict | None = None
    solver: dict = field(default_factory=dict)
    cascade: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("$", "config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        for key in raw:
            if key not in known:
                raise ConfigError(f"$.{key}", f"unknown field; expected one of {sorted(known)}")
        if "scenario" not in raw:
            raise ConfigError("$.scenario", "missing")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"invalid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError("$.scenario", f"unknown scenario {self.scenario!r}; known: {sorted(SCENARIOS)}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("$.seed", f"expected a non-negative integer, got {self.seed!r}")
        for key in self.solver:
            if key not in SOLVER_DEFAULTS:
                raise ConfigError(f"$.solver.{key}", f"unknown option; expected one of {sorted(SOLVER_DEFAULTS)}")
        opts = self.solver_options()
        if opts["backend"] not in ("lattice", "regression"):
            raise ConfigError("$.solver.backend", f"expected 'lattice' or 'regression', got {opts['backend']!r}")
        if not isinstance(opts["n_paths"], int) or opts["n_paths"] < 1:
            raise ConfigError("$.solver.n_paths", "expected a positive integer")
        if not isinstance(opts["degree"], int) or opts["degree"] < 0:
            raise ConfigError("$.solver.degree", "expected a non-negative integer")
        if self.problem is not None:
            problem_from_config(self.problem, "$.problem")
        if self.model is not None:
            model = model_from_config(self.model, "$.model")
            if self.problem is not None:
                dim = problem_from_config(self.problem, "$.problem").model.dim_x
                if model.dim_x != dim:
                    raise ConfigError("$.model", f"model dimension {model.dim_x} does not match problem dimension {dim}")
        if self.driver is not None:
            driver_from_config(self.driver, "$.driver")
        sched = self.cascade.get("schedule")
        if sched is not None:
            if not isinstance(sched, list) or not all(isinstance(s, list) and len(s) == 3 for s in sched):
                raise ConfigError("$.cascade.schedule", "expected a list of [n, m, k] triples")

    def solver_options(self) -> dict:
        return {**SOLVER_DEFAULTS, **self.solver}

    def picard(self) -> PicardOptions:
        o = self.solver_options()
        return PicardOptions(tol=float(o["picard_tol"]), max_iter=int(o["picard_max_iter"]))

    def basis(self) -> RegressionBasis:
        return RegressionBasis(degree=int(self.solver_options()["degree"]))

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# manifest


@dataclass
class Verdict:
    check: str
    status: str
    value: float | None = None
    threshold: float | None = None
    detail: str = ""


@dataclass
class RunManifest:
    config: dict
    files: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    tables: list = field(default_factory=list)  # (title, text) blocks for the summary

    @property
    def exit_code(self) -> int:
        return 1 if any(v.status == "fail" for v in self.verdicts) else 0

    def to_dict(self) -> dict:
        return {"config": self.config, "files": self.files, "timings": self.timings,
                "verdicts": [asdict(v) for v in self.verdicts], "exit_code": self.exit_code}


def emit_report(manifest: RunManifest) -> str:
    """One-page text summary of a run."""
    cfg = manifest.config
    lines = [f"scenario: {cfg.get('scenario')}   seed: {cfg.get('seed')}", ""]
    n_pass = sum(v.status == "pass" for v in manifest.verdicts)
    n_fail = sum(v.status == "fail" for v in manifest.verdicts)
    n_skip = sum(v.status == "skipped" for v in manifest.verdicts)
    lines.append(f"checks: {len(manifest.verdicts)} (pass {n_pass}, fail {n_fail}, skipped {n_skip})")
    for v in manifest.verdicts:
        flag = {"pass": "PASS", "fail": "FAIL", "skipped": "SKIP"}[v.status]
        val = "" if v.value is None else f" value={v.value:.6g}"
        thr = "" if v.threshold is None else f" threshold={v.threshold:.6g}"
        lines.append(f"  [{flag}] {v.check}{val}{thr}" + (f"  ({v.detail})" if v.detail else ""))
    for title, text in manifest.tables:
        lines += ["", title, text]
    if manifest.files:
        lines += ["", "files: " + ", ".join(manifest.files)]
    lines += ["", f"exit code: {manifest.exit_code}"]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# run context


class RunContext:
    def __init__(self, config: ExperimentConfig, out_dir: Path, manifest: RunManifest):
        self.config = config
        self.out_dir = out_dir
        self.manifest = manifest
        self.params = dict(config.params)

    def param(self, key, default):
        return self.params.get(key, default)

    @contextlib.contextmanager
    def step(self, module: str, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except ConfigError:
            raise
        except QexpError as exc:
            raise PipelineError(module, name, exc) from exc
        finally:
            self.manifest.timings[f"{module}/{name}"] = round(time.perf_counter() - t0, 4)

    def check(self, name: str, passed: bool | None, value=None, threshold=None, detail: str = ""):
        status = "skipped" if passed is None else ("pass" if passed else "fail")
        v = None if value is None else float(value)
        t = None if threshold is None else float(threshold)
        self.manifest.verdicts.append(Verdict(name, status, v, t, detail))

    def path(self, name: str) -> Path:
        if name not in self.manifest.files:
            self.manifest.files.append(name)
        return self.out_dir / name

    def write_rows(self, name: str, header: list, rows: list):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])

    def table(self, title: str, text: str):
        self.manifest.tables.append((title, text))

    def problem(self, default_preset: str, **defaults):
        cfg = self.config.problem or {"preset": default_preset, "params": defaults}
        prob = problem_from_config(cfg, "$.problem")
        if self.config.model is not None:
            prob = replace(prob, model=model_from_config(self.config.model, "$.model"), value_function=None)
        if self.config.driver is not None:
            prob = prob.with_driver(driver_from_config(self.config.driver, "$.driver"))
        return prob

    def solve(self, problem, backend=None):
        o = self.config.solver_options()
        return solve_problem(problem, backend or o["backend"], n_paths=int(o["n_paths"]), seed=self.config.seed,
                             basis=self.config.basis(), opts=self.config.picard(), scheme=o["scheme"])


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


# --------------------------------------------------------------------------
# scenarios


def scenario_empty(ctx: RunContext):
    """No pipeline; exercises the reporting path."""


def scenario_zero_driver_smoke(ctx: RunContext):
    """``f ≡ 0`` with constant terminal: ``Y ≡ c``."""
    prob = ctx.problem("zero_smoke", c=1.0, n_steps=10)
    c = prob.params.get("c", 1.0)
    with ctx.step("bsde_solver", "solve"):
        sol = ctx.solve(prob)
    with ctx.step("cli", "export"):
        sol.export_csv(ctx.path("solution.csv"), max_paths=200)
    err = abs(sol.y0 - c)
    ctx.check("Y0_equals_terminal_constant", err <= 1e-12, sol.y0, c, f"|Y0-c|={err:.3g}")


def scenario_cole_hopf(ctx: RunContext):
    """Quadratic driver with a closed-form ``Y_0 = γT/2``."""
    prob = ctx.problem("cole_hopf", T=1.0, n_steps=100)
    gamma, T = prob.driver.gamma, prob.grid.T - prob.grid.t0
    tol = ctx.param("tolerance", 0.02)
    with ctx.step("bsde_solver", "solve"):
        sol = ctx.solve(prob)
    with ctx.step("cli", "export"):
        sol.export_csv(ctx.path("solution.csv"), max_paths=200)
    target = gamma * T / 2
    ctx.check("cole_hopf_Y0", abs(sol.y0 - target) <= tol, sol.y0, target, f"tolerance {tol}")


def scenario_linear_ode(ctx: RunContext):
    """``f = α y``, ``ξ = 1``: ``Y_0 = e^{αT}`` and first-order convergence in dt."""
    alpha = ctx.param("alpha", 1.0)
    T = ctx.param("T", 1.0)
    steps = ctx.param("n_steps", [25, 50, 100, 200])
    rows = []
    with ctx.step("bsde_solver", "dt_sweep"):
        for n in steps:
            sol = solve_problem(PROBLEM_PRESETS["linear_ode"](alpha=alpha, T=T, n_steps=n), "lattice",
                                opts=ctx.config.picard())
            rows.append((n, T / n, sol.y0, abs(sol.y0 - math.exp(alpha * T))))
    ctx.write_rows("convergence.csv", ["n_steps", "dt", "y0", "abs_error"], rows)
    order = est.scaling_exponent([r[1] for r in rows], [r[3] for r in rows])
    at = {r[0]: r for r in rows}
    n01 = int(round(T / 0.01))
    if n01 in at:
        ctx.check("linear_ode_Y0_dt0.01", at[n01][3] <= 0.05, at[n01][2], math.exp(alpha * T), "|Y0 - e^{aT}| <= 0.05")
    ctx.check("linear_ode_order", 0.7 <= order <= 1.3, order, 1.0, "order in [0.7, 1.3]")


def scenario_regression_vs_lattice(ctx: RunContext):
    """Regression ``Y_0`` within ``n_sigma`` standard errors of the lattice value."""
    prob = ctx.problem("linear_driver", n_steps=10)
    n_sigma = ctx.param("n_sigma", 3.0)
    with ctx.step("bsde_solver", "lattice"):
        lat = ctx.solve(prob, "lattice")
    with ctx.step("bsde_solver", "regression"):
        reg = ctx.solve(prob, "regression")
    gap = abs(reg.y0 - lat.y0)
    se = reg.y0_stderr
    ctx.write_rows("comparison.csv", ["backend", "y0", "stderr"],
                   [("lattice", lat.y0, 0.0), ("regression", reg.y0, se)])
    ctx.check("regression_matches_lattice", gap <= n_sigma * se, gap, n_sigma * se, f"{n_sigma} standard errors")


def scenario_bounds(ctx: RunContext):
    """Universal bounds on the bound-saturating preset over a (γ, T) sweep."""
    gammas = ctx.param("gammas", [0.5, 1.0, 2.0])
    Ts = ctx.param("Ts", [0.5, 1.0, 2.0])
    steps_per_unit = ctx.param("steps_per_unit", 40)
    rows = []
    n_viol = 0
    with ctx.step("estimates", "sweep"):
        for g in gammas:
            for T in Ts:
                prob = PROBLEM_PRESETS["saturating"](gamma=g, T=T, n_steps=max(1, int(round(steps_per_unit * T))))
                sol = solve_lattice(prob.lattice(), prob.driver, prob.terminal, ctx.config.picard())
                for r in est.bound_reports(sol, prob.driver, prob.xi_bound):
                    rows.append((g, T, r.quantity, r.bound_value, r.realized_value, r.slack, r.violated))
                    n_viol += int(r.violated)
    ctx.write_rows("bounds.csv", ["gamma", "T"] + est.REPORT_FIELDS, rows)
    ctx.check("universal_bounds_no_violation", n_viol == 0, n_viol, 0, f"{len(rows)} reports")


def scenario_comparison(ctx: RunContext):
    """Ordered terminals and drivers give ordered solutions node by node."""
    prob = ctx.problem("exp_utility", n_steps=25)
    eps_list = ctx.param("eps", [0.1, 0.01])
    tol = ctx.param("tolerance", 1e-10)
    rows = []
    with ctx.step("estimates", "compare"):
        lat = prob.lattice()
        base = solve_lattice(lat, prob.driver, prob.terminal, ctx.config.picard())
        for eps in eps_list:
            lower_xi = solve_lattice(lat, prob.driver, lambda X, e=eps: prob.terminal(X) - e, ctx.config.picard())
            drv = replace(prob.driver, f=lambda t, x, y, z, p, e=eps, f=prob.driver.f: f(t, x, y, z, p) - e)
            lower_f = solve_lattice(lat, drv, prob.terminal, ctx.config.picard())
            for kind, sol in (("terminal", lower_xi), ("driver", lower_f)):
                rep = est.compare_solutions(sol, base, tol)
                rows.append((kind, eps, rep.verdict, rep.max_violation, rep.max_gap))
                ctx.check(f"comparison_{kind}_eps{eps}", rep.ok, rep.max_violation, tol, rep.verdict)
    ctx.write_rows("comparison.csv", ["perturbed", "eps", "verdict", "max_violation", "max_gap"], rows)


def _monotonicity_table(res) -> str:
    ns = sorted({i.n for i in res.schedule})
    ms = sorted({i.m for i in res.schedule})
    y = {(i.n, i.m): res.solutions[i].y0 for i in res.schedule}
    lines = ["n\\m " + "".join(f"{m:>14d}" for m in ms)]
    for n in ns:
        lines.append(f"{n:<4d}" + "".join(f"{y[(n, m)]:14.8f}" if (n, m) in y else f"{'':14s}" for m in ms))
    return "\n".join(lines)


def scenario_cascade(ctx: RunContext):
    """Regularization cascade: monotone in ``n`` and ``m``; agrees with a Lipschitz direct solve."""
    prob = ctx.problem("exp_utility", theta=1.5, xi_scale=1.5, n_steps=25)
    sched = ctx.config.cascade.get("schedule") or [[n, m, 20] for n in (1, 2, 4, 8) for m in (1, 2, 4, 8)]
    tol = ctx.param("tolerance", 1e-10)
    with ctx.step("bsde_solver", "cascade"):
        lat = prob.lattice()
        res = solve_qexp_cascade(lat, prob.driver, prob.terminal(lat.state(lat.n_steps)), sched, ctx.config.picard())
    ctx.write_rows("cascade.csv", ["n", "m", "k", "y0", "sup_gap_prev", "max_picard_iters"],
                   [(r["n"], r["m"], r["k"], r["y0"], r["sup_gap_prev"], r["max_picard_iters"]) for r in res.trace])
    ctx.table("monotonicity table of Y0^{n,m}", _monotonicity_table(res))
    ctx.check("cascade_increasing_in_n", res.n_violation <= tol, res.n_violation, tol)
    ctx.check("cascade_decreasing_in_m", res.m_violation <= tol, res.m_violation, tol)
    if ctx.param("lipschitz_check", True):
        lp = PROBLEM_PRESETS["lipschitz"](n_steps=25)
        with ctx.step("bsde_solver", "lipschitz_cascade"):
            llat = lp.lattice()
            direct = solve_lattice(llat, lp.driver, lp.terminal, ctx.config.picard())
            bound = est.universal_y_bound(lp.driver.beta, lp.driver.gamma, lp.grid.T, 1.0, lp.driver.l_bound)
            k = int(math.ceil(2 * bound)) + 1
            lres = solve_qexp_cascade(llat, lp.driver, lp.terminal(llat.state(llat.n_steps)),
                                      [[n, m, k] for n in (3, 4, 8) for m in (3, 4, 8)], ctx.config.picard())
        gap = max(est.compare_solutions(s, direct).max_gap for s in lres.solutions.values())
        ctx.check("lipschitz_cascade_matches_direct", gap <= 1e-8, gap, 1e-8, f"k={k}")


ENERGY_PRESETS = {
    "cole_hopf": {"n_steps": 50},
    "saturating": {"n_steps": 40},
    "exp_utility": {"n_steps": 25},
    "identity_martingale": {"n_steps": 25},
    "linear_driver": {"n_steps": 25},
    "lipschitz": {"n_steps": 25},
    "linear_forward": {"n_steps": 25},
    "linear_ode": {"n_steps": 25},
    "zero_smoke": {"n_steps": 10},
}


def scenario_energy(ctx: RunContext):
    """``E[(∫|Z|²)^n] <= n! ‖Z‖^{2n}_BMO`` for ``n = 1, 2`` on the presets."""
    presets = ctx.param("presets", ENERGY_PRESETS)
    rows = []
    with ctx.step("estimates", "energy"):
        for name, params in presets.items():
            prob = PROBLEM_PRESETS[name](**params)
            # non-additive forward models do not recombine; use paths for those
            sol = ctx.solve(prob, None if prob.model.additive else "regression")
            bmo = est.bmo_norm(sol, "Z")
            for n in (1, 2):
                r = est.energy_check(sol, n, bmo, tolerance=1e-12)
                rows.append((name, n, r.bound_value, r.realized_value, r.slack, r.violated))
                ctx.check(f"energy_{name}_n{n}", not r.violated, r.realized_value, r.bound_value)
    ctx.write_rows("energy.csv", ["preset", "n", "bound", "realized", "slack", "violated"], rows)


MALLIAVIN_PRESETS = ("identity_martingale", "linear_forward", "cole_hopf")


def scenario_malliavin(ctx: RunContext):
    """Representation diagnostics on closed-form presets, coarse and refined."""
    presets = ctx.param("presets", list(MALLIAVIN_PRESETS))
    coarse = ctx.param("coarse", {"n_steps": 20, "n_paths": 5000})
    fine = ctx.param("fine", {"n_steps": 40, "n_paths": 10000})
    backend = ctx.config.solver_options()["backend"] if ctx.config.solver.get("backend") else "regression"
    all_rows = []
    for name in presets:
        res = {}
        for level, cfg in (("coarse", coarse), ("fine", fine)):
            prob = PROBLEM_PRESETS[name](n_steps=cfg["n_steps"])
            with ctx.step("malliavin", f"{name}_{level}"):
                base = solve_problem(prob, backend, n_paths=cfg["n_paths"], seed=ctx.config.seed,
                                     basis=ctx.config.basis(), opts=ctx.config.picard())
                res[level] = check_representation(base, prob, opts=ctx.config.picard())
            all_rows += [(name, level, r) for r in res[level]]
        for r in res["fine"]:
            ctx.check(f"malliavin_{name}_{r.quantity}_{r.direction}_s{r.s:.3g}", r.passed, r.abs_error, r.tolerance)
        shrink = residuals_shrink(res["coarse"], res["fine"])
        ctx.check(f"malliavin_{name}_refinement_shrinks", all(shrink.values()),
                  sum(not v for v in shrink.values()), 0, "rows not shrinking")
    with open(ctx.path("malliavin_diagnostics.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["preset", "level"] + ["s", "direction", "quantity", "lhs", "rhs", "abs_error", "rel_error",
                                          "stderr", "tolerance", "passed"])
        for name, level, r in all_rows:
            w.writerow([name, level, repr(r.s), r.direction, r.quantity, repr(r.lhs), repr(r.rhs),
                        repr(r.abs_error), repr(r.rel_error), repr(r.stderr), repr(r.tolerance), str(r.passed).lower()])


def scenario_stability(ctx: RunContext):
    """Terminal perturbations ``ξ + ε``: ``‖δY‖`` scales linearly in ``ε``."""
    prob = ctx.problem("saturating", beta=0.5, l=0.1, n_steps=40)
    eps_list = ctx.param("eps", [0.1, 0.01, 0.001])
    with ctx.step("estimates", "stability"):
        lat = prob.lattice()
        base = solve_lattice(lat, prob.driver, prob.terminal, ctx.config.picard())

        def solve(eps):
            pert = solve_lattice(lat, prob.driver, lambda X: prob.terminal(X) + eps, ctx.config.picard())
            return pert, base, eps, None
        sweep = est.stability_sweep(solve, eps_list)
    ctx.write_rows("stability.csv", ["eps", "dY_sup", "dZ_bmo", "dpsi_bmo", "lhs", "rhs", "ratio"],
                   [(e, r.dY_sup, r.dZ_bmo, r.dpsi_bmo, r.lhs, r.rhs, r.ratio) for e, r in zip(sweep.eps, sweep.reports)])
    ctx.check("stability_exponent", 0.9 <= sweep.exponent <= 1.1, sweep.exponent, 1.0, "in [0.9, 1.1]")
    cap = ctx.param("ratio_cap", 10.0)
    ratios = sweep.ratios
    ctx.check("stability_ratio_bounded", bool(np.all(np.isfinite(ratios)) and ratios.max() <= cap),
              float(ratios.max()), cap)


SCENARIOS = {
    "empty": scenario_empty,
    "zero_driver_smoke": scenario_zero_driver_smoke,
    "cole_hopf": scenario_cole_hopf,
    "linear_ode": scenario_linear_ode,
    "regression_vs_lattice": scenario_regression_vs_lattice,
    "bounds": scenario_bounds,
    "comparison": scenario_comparison,
    "cascade": scenario_cascade,
    "energy": scenario_energy,
    "malliavin": scenario_malliavin,
    "stability": scenario_stability,
}


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunManifest:
    """Run the configured scenario, write CSVs, ``manifest.json`` and ``summary.txt``."""
    config.validate()
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError("$.out_dir", f"{out} is not writable")
    manifest = RunManifest(config.to_dict())
    ctx = RunContext(config, out, manifest)
    t0 = time.perf_counter()
    SCENARIOS[config.scenario](ctx)
    manifest.timings["total"] = round(time.perf_counter() - t0, 4)
    manifest.files += ["manifest.json", "summary.txt"]
    (out / "summary.txt").write_text(emit_report(manifest))
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest
