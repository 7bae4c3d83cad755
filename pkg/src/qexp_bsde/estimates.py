"""Norms, a priori bounds and comparison/stability diagnostics.

BMO-type norms are estimated by replacing the stopping-time supremum with a
supremum over grid times and the essential supremum with a maximum over
lattice nodes or simulated paths.  Grid times are stopping times, so the
estimates are lower bounds of the true norms; bound checks compare the
estimate, not the true norm.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, DomainError
from .lattice import LatticeModel
from .solver import BsdeSolution

ESTIMATOR_NOTE = ("grid-time sup of conditional tail expectations, max over nodes/paths; "
                  "a lower estimate of the stopping-time norm")


@dataclass(frozen=True)
class BmoEstimate:
    """Squared norm estimate with its per-node profile ``max_x E[tail | F_{t_i}]``."""

    value: float
    profile: np.ndarray
    which: str
    estimator_note: str = ESTIMATOR_NOTE


@dataclass(frozen=True)
class BoundReport:
    quantity: str
    bound_value: float
    realized_value: float
    tolerance: float = 0.0

    @property
    def slack(self) -> float:
        return self.bound_value - self.realized_value

    @property
    def violated(self) -> bool:
        return self.realized_value - self.bound_value > self.tolerance

    def row(self) -> dict:
        return {"quantity": self.quantity, "bound": self.bound_value, "realized": self.realized_value,
                "slack": self.slack, "violated": self.violated}


# --------------------------------------------------------------------------
# conditional tail expectations


def _rates(sol: BsdeSolution) -> np.ndarray:
    return np.asarray(sol.projector.rates, dtype=float)


def _integrand(sol: BsdeSolution, which: str, i: int) -> np.ndarray:
    dt = sol.grid.dt
    if which == "Z":
        return np.sum(sol.Z[i] ** 2, axis=1) * dt
    if which in ("psi_B", "psi_BMO"):
        rates = _rates(sol)
        if rates.size == 0:
            return np.zeros(sol.Y[i].shape[0])
        return sol.psi[i] ** 2 @ rates * dt
    raise DomainError(f"unknown norm {which!r}; expected Z, psi_B or psi_BMO")


def tail_expectations(sol: BsdeSolution, increments: list) -> list:
    """``V_i = E_i[Σ_{k >= i} a_k]`` for per-layer increments ``a_k``.

    Exact recursion on a lattice; on paths the pathwise tail sum is
    regressed on the step basis.
    """
    n = sol.n_steps
    proj = sol.projector
    V = [None] * (n + 1)
    V[n] = np.zeros(proj.layer_size(n))
    if isinstance(proj, LatticeModel):
        for i in range(n - 1, sol.start - 1, -1):
            V[i] = increments[i] + proj.cond_expect(i, V[i + 1])
    else:
        tail = np.zeros(proj.layer_size(n))
        for i in range(n - 1, sol.start - 1, -1):
            tail = tail + increments[i]
            V[i] = increments[i] + proj.cond_expect(i, tail - increments[i])
    for i in range(sol.start):
        V[i] = np.zeros(proj.layer_size(i))
    return V


def jinf_norm(sol: BsdeSolution) -> float:
    """``‖ψ‖²_{J∞}``: the largest squared jump integrand over steps that can jump."""
    if _rates(sol).size == 0:
        return 0.0
    return max(float(np.max(sol.psi[i] ** 2, initial=0.0)) for i in range(sol.start, sol.n_steps))


def bmo_norm(sol: BsdeSolution, which: str = "Z") -> BmoEstimate:
    """Grid estimate of ``‖Z‖²_{H²BMO}``, ``‖ψ‖²_{J²B}`` or ``‖ψ‖²_{J²BMO}``.

    For ``psi_BMO`` a jump exactly at the stopping time adds its squared
    size: at every node reached by a jump edge the profile includes
    ``ψ²(parent, mark) + V(child)``.
    """
    n = sol.n_steps
    inc = [_integrand(sol, which, i) for i in range(n)]
    V = tail_expectations(sol, inc)
    profile = np.array([float(np.max(v, initial=0.0)) for v in V])
    if which == "psi_BMO" and _rates(sol).size:
        proj = sol.projector
        for i in range(sol.start, n):
            par, chi, mk = proj.jump_arrivals(i)
            if par.size:
                vals = sol.psi[i][par, mk] ** 2 + V[i + 1][chi]
                profile[i + 1] = max(profile[i + 1], float(vals.max()))
    profile[: sol.start] = 0.0
    return BmoEstimate(float(profile.max(initial=0.0)), profile, which)


def energy_moment(sol: BsdeSolution, n: int) -> float:
    """``E[(∫|Z|² ds)^n]`` from the start layer: exact on a lattice, sample mean on paths."""
    steps = sol.n_steps
    a = [_integrand(sol, "Z", i) for i in range(steps)]
    proj = sol.projector
    if isinstance(proj, LatticeModel):
        # m[p] = E_i[S_i^p] with S_i = Σ_{k >= i} a_k
        m = [np.ones(proj.layer_size(steps))] + [np.zeros(proj.layer_size(steps)) for _ in range(n)]
        for i in range(steps - 1, sol.start - 1, -1):
            nxt = [proj.cond_expect(i, mp) for mp in m]
            m = [sum(math.comb(p, r) * a[i] ** r * nxt[p - r] for r in range(p + 1)) for p in range(n + 1)]
        return float(m[n] @ proj.weights(sol.start))
    S = np.sum(a[sol.start:], axis=0)
    return float(np.mean(S**n))


def energy_check(sol: BsdeSolution, n: int, bmo: BmoEstimate | None = None, tolerance: float = 0.0) -> BoundReport:
    """``E[(∫|Z|²)^n] <= n! (‖Z‖²_BMO)^n`` with the grid BMO estimate."""
    if n not in (1, 2, 3):
        raise DomainError(f"energy power must be 1, 2 or 3, got {n}")
    bmo = bmo if bmo is not None else bmo_norm(sol, "Z")
    return BoundReport(f"energy_n{n}", math.factorial(n) * bmo.value**n, energy_moment(sol, n), tolerance)


# --------------------------------------------------------------------------
# universal bounds


def universal_y_bound(beta: float, gamma: float, T: float, xi_norm: float, l_norm: float) -> float:
    """``e^{βT} (‖ξ‖∞ + T ‖l‖)``."""
    if not gamma > 0:
        raise DomainError("gamma must be > 0")
    return float(math.exp(beta * T) * (xi_norm + T * l_norm))


def universal_bmo_bound(gamma: float, beta: float, T: float, y_norm: float, l_norm: float) -> float:
    """Bound on ``‖Z‖²_{H²BMO} + ‖ψ‖²_{J²B}`` given ``‖Y‖_{S∞}``."""
    if not gamma > 0:
        raise DomainError("gamma must be > 0")
    return float(math.exp(4 * gamma * y_norm) / gamma**2 * (3 + 6 * gamma * T * (beta * y_norm + l_norm)))


def bound_reports(sol: BsdeSolution, driver, xi_norm: float, y_tolerance: float | None = None,
                  bmo_tolerance: float = 0.0) -> list:
    """Universal ``Y`` bound, BMO bound and ``‖ψ‖_{J∞} <= 2 ‖Y‖`` on a solved instance.

    The BMO bound is evaluated at the a priori ``‖Y‖`` bound, not at the realized norm.
    """
    T = sol.grid.T - sol.grid.times[sol.start]
    y_bound = universal_y_bound(driver.beta, driver.gamma, T, xi_norm, driver.l_bound)
    y_sup = sol.sup_y()
    tol = 2 * sol.grid.dt if y_tolerance is None else y_tolerance
    bmo = bmo_norm(sol, "Z").value + bmo_norm(sol, "psi_B").value
    return [
        BoundReport("Y_sup", y_bound, y_sup, tol),
        BoundReport("Z_bmo2_plus_psi_jb2", universal_bmo_bound(driver.gamma, driver.beta, T, y_bound, driver.l_bound),
                    bmo, bmo_tolerance),
        BoundReport("psi_jinf", 2 * y_sup, math.sqrt(jinf_norm(sol)), tol),
    ]


# --------------------------------------------------------------------------
# comparison and stability


def _check_matched(sol1: BsdeSolution, sol2: BsdeSolution):
    if sol1.grid != sol2.grid:
        raise ContractError(f"solutions live on different grids: {sol1.grid} vs {sol2.grid}")
    for i in range(sol1.n_steps + 1):
        if sol1.Y[i].shape != sol2.Y[i].shape:
            raise ContractError(f"layer {i} has {sol1.Y[i].shape} vs {sol2.Y[i].shape} nodes")
    if sol1.projector is not sol2.projector and sol1.backend == "regression":
        a, b = sol1.projector.paths, sol2.projector.paths
        if a.seed != b.seed or a.n_paths != b.n_paths:
            raise ContractError("regression solutions use different noise")


@dataclass(frozen=True)
class ComparisonReport:
    verdict: str  # "equal", "ordered" or "violated"
    max_violation: float
    max_gap: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.verdict != "violated"


def compare_solutions(sol1: BsdeSolution, sol2: BsdeSolution, tolerance: float = 0.0) -> ComparisonReport:
    """Node-wise check of ``Y¹ <= Y²``; the violation is ``max(Y¹ - Y²)⁺``."""
    _check_matched(sol1, sol2)
    layers = range(max(sol1.start, sol2.start), sol1.n_steps + 1)
    excess = max(float(np.max(sol1.Y[i] - sol2.Y[i])) for i in layers)
    gap = max(float(np.max(np.abs(sol1.Y[i] - sol2.Y[i]))) for i in layers)
    viol = max(excess, 0.0)
    if gap == 0.0:
        verdict = "equal"
    elif viol <= tolerance:
        verdict = "ordered"
    else:
        verdict = "violated"
    return ComparisonReport(verdict, viol, gap, tolerance)


def difference_solution(sol1: BsdeSolution, sol2: BsdeSolution) -> BsdeSolution:
    _check_matched(sol1, sol2)
    sub = lambda a, b: [x - y for x, y in zip(a, b)]
    return replace(sol1, Y=sub(sol1.Y, sol2.Y), Z=sub(sol1.Z, sol2.Z), psi=sub(sol1.psi, sol2.psi),
                   notes=["difference"], meta={})


@dataclass(frozen=True)
class StabilityReport:
    """Left side ``‖δZ‖_BMO + ‖δψ‖_{J²BMO}`` and right-side gap aggregates."""

    dY_sup: float
    dZ_bmo: float
    dpsi_bmo: float
    delta_xi: float
    delta_f: float

    @property
    def lhs(self) -> float:
        return self.dZ_bmo + self.dpsi_bmo

    @property
    def rhs(self) -> float:
        return self.dY_sup + self.delta_xi + self.delta_f

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else 0.0

    def reports(self) -> list:
        return [BoundReport("stability_lhs", float("nan"), self.lhs), BoundReport("stability_rhs", float("nan"), self.rhs)]


def stability_gap(sol1: BsdeSolution, sol2: BsdeSolution, delta_xi: float, delta_f_trace: list | None = None) -> StabilityReport:
    """Gap norms between two solutions on matched noise.

    ``delta_f_trace[i]`` holds ``|δf|`` at the nodes of layer ``i``; the
    driver aggregate is the grid sup of its conditional tail integral.
    """
    diff = difference_solution(sol1, sol2)
    dY = diff.sup_y()
    dZ = math.sqrt(bmo_norm(diff, "Z").value)
    dpsi = math.sqrt(bmo_norm(diff, "psi_BMO").value)
    df = 0.0
    if delta_f_trace is not None:
        inc = [np.abs(np.asarray(delta_f_trace[i], dtype=float)) * sol1.grid.dt for i in range(sol1.n_steps)]
        df = max(float(np.max(v, initial=0.0)) for v in tail_expectations(diff, inc))
    return StabilityReport(dY, dZ, dpsi, abs(float(delta_xi)), df)


@dataclass(frozen=True)
class SweepResult:
    eps: np.ndarray
    reports: list
    exponent: float

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.reports])


def scaling_exponent(eps, values) -> float:
    """Least-squares slope of ``log values`` against ``log eps``."""
    return float(np.polyfit(np.log(np.asarray(eps, dtype=float)), np.log(np.asarray(values, dtype=float)), 1)[0])


def stability_sweep(solve, eps_values) -> SweepResult:
    """``solve(eps) -> (base, perturbed, delta_xi, delta_f_trace)`` for each ``eps``."""
    eps = np.asarray(eps_values, dtype=float)
    reports = [stability_gap(*solve(float(e))) for e in eps]
    return SweepResult(eps, reports, scaling_exponent(eps, [r.dY_sup for r in reports]))


# --------------------------------------------------------------------------
# output


REPORT_FIELDS = ["quantity", "bound", "realized", "slack", "violated"]


def write_reports_csv(reports: list, file):
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w", newline="") if own else file
    try:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in reports:
            row = r.row()
            w.writerow([row["quantity"], repr(float(row["bound"])), repr(float(row["realized"])),
                        repr(float(row["slack"])), str(row["violated"]).lower()])
    finally:
        if own:
            fh.close()


def summarize_reports(reports: list) -> str:
    lines = [f"{'quantity':28s} {'bound':>12s} {'realized':>12s} {'slack':>12s}  verdict"]
    for r in reports:
        lines.append(f"{r.quantity:28s} {r.bound_value:12.6g} {r.realized_value:12.6g} {r.slack:12.6g}  "
                     f"{'VIOLATED' if r.violated else 'ok'}")
    lines.append(f"note: {ESTIMATOR_NOTE}")
    return "\n".join(lines)
