"""Backward induction for discrete BSDEs with jumps.

One step of the scheme is

    (e, z, ψ) = (E_i[Y_{i+1}], E_i[Y_{i+1} ΔW]/dt, E_i[Y_{i+1} Δμ̃_j]/(λ_j dt))
    Y_i = e + f(t_i, X_i, Y_i, z, ψ) dt,

explicit in ``(z, ψ)`` and implicit in ``Y_i``, which is found by Picard
iteration.  The conditional expectations come from a projector: a
``LatticeModel`` (exact) or a ``RegressionProjector`` (least squares).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drivers import DriverSpec, RegularizationIndex, regularize
from .errors import ContractError, PicardDivergenceError, QexpError
from .lattice import LatticeModel
from .levy import PathEnsemble
from .regression import RegressionBasis, RegressionProjector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PicardOptions:
    tol: float = 1e-12
    max_iter: int = 100
    divergence_window: int = 5


@dataclass(frozen=True)
class StepData:
    """Frozen inputs of one implicit step."""

    step: int
    t: float
    x: np.ndarray
    e: np.ndarray
    z: np.ndarray
    psi: np.ndarray
    dt: float


@dataclass(frozen=True)
class PicardResult:
    y: np.ndarray
    z: np.ndarray
    psi: np.ndarray
    residuals: list

    @property
    def iterations(self) -> int:
        return len(self.residuals)


def picard_iterate(step: StepData, driver: Callable, y_init=None, opts: PicardOptions = PicardOptions()) -> PicardResult:
    """Fixed point of ``y = e + f(t, x, y, z, ψ) dt``.

    The residual ``max |y_{k+1} - y_k|`` is recorded each iteration.  The loop
    stops once it falls below ``tol * max(1, max|y|)``; it raises
    ``PicardDivergenceError`` when the residual fails to decrease over
    ``divergence_window`` successive iterations.
    """
    y = np.array(step.e if y_init is None else y_init, dtype=float)
    res: list[float] = []
    w = opts.divergence_window
    for _ in range(opts.max_iter):
        y_new = step.e + driver(step.t, step.x, y, step.z, step.psi) * step.dt
        r = float(np.max(np.abs(y_new - y))) if y.size else 0.0
        res.append(r)
        y = y_new
        if not np.isfinite(r):
            raise PicardDivergenceError(step.step, res)
        if r <= opts.tol * max(1.0, float(np.max(np.abs(y), initial=0.0))):
            break
        if len(res) > w and all(res[-k] >= res[-k - 1] for k in range(1, w + 1)):
            raise PicardDivergenceError(step.step, res)
    else:
        log.warning("Picard iteration at step %d stopped after %d iterations, residual %.3g",
                    step.step, opts.max_iter, res[-1])
    return PicardResult(y, step.z, step.psi, res)


@dataclass
class BsdeSolution:
    """Discrete solution on the layers of a projector.

    ``Y[i]`` has one entry per node (lattice) or path (regression) of layer
    ``i``; ``Z[i]`` and ``psi[i]`` are the step-``i`` estimates and are zero on
    the terminal layer.
    """

    Y: list
    Z: list
    psi: list
    picard_iters: np.ndarray
    residuals: np.ndarray
    grid: object
    projector: object
    backend: str
    driver_name: str = ""
    traces: list = field(default_factory=list, repr=False)
    fits: list = field(default_factory=list, repr=False)
    notes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    start: int = 0

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def y0(self) -> float:
        """Probability-weighted mean of ``Y`` on the first solved layer."""
        i = self.start
        return float(self.Y[i] @ self.projector.weights(i))

    @property
    def y0_stderr(self) -> float:
        return float(self.meta.get("y0_stderr", 0.0))

    def sup_y(self) -> float:
        return max(float(np.max(np.abs(y), initial=0.0)) for y in self.Y[self.start:])

    def sup_psi(self) -> float:
        return max(float(np.max(np.abs(p), initial=0.0)) for p in self.psi[self.start:])

    def state(self, i: int) -> np.ndarray:
        return self.projector.state(i)

    def export_csv(self, file, max_paths: int | None = None):
        """Rows ``layer, node, t, x*, Y, z*, psi*``; floats written with ``repr``."""
        own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
        fh = open(file, "w", newline="") if own else file
        try:
            w = csv.writer(fh)
            X0 = self.state(0)
            n, d, M = X0.shape[1], self.Z[0].shape[1], self.psi[0].shape[1]
            w.writerow(["layer", "node", "t"] + [f"x{a}" for a in range(n)] + ["Y"]
                       + [f"z{k}" for k in range(d)] + [f"psi{j}" for j in range(M)])
            times = self.grid.times
            for i in range(self.start, self.n_steps + 1):
                X = self.state(i)
                rows = X.shape[0] if max_paths is None else min(X.shape[0], max_paths)
                for a in range(rows):
                    w.writerow([i, a, repr(float(times[i]))] + [repr(float(v)) for v in X[a]]
                               + [repr(float(self.Y[i][a]))] + [repr(float(v)) for v in self.Z[i][a]]
                               + [repr(float(v)) for v in self.psi[i][a]])
        finally:
            if own:
                fh.close()


def backward_induction(proj, terminal_values: np.ndarray, driver_at: Callable, opts: PicardOptions = PicardOptions(),
                       start: int = 0, backend: str = "", driver_name: str = "") -> BsdeSolution:
    """Run the scheme from the terminal layer down to layer ``start``.

    ``driver_at(i)`` returns the driver callable used at step ``i``.  Layers
    before ``start`` are left as zeros.
    """
    n = proj.n_steps
    grid = proj.grid
    dt = grid.dt
    times = grid.times
    Y = [None] * (n + 1)
    Z = [None] * (n + 1)
    P = [None] * (n + 1)
    Y[n] = np.asarray(terminal_values, dtype=float)
    if Y[n].shape != (proj.layer_size(n),):
        raise ContractError(f"terminal values have shape {Y[n].shape}, layer has {proj.layer_size(n)} nodes")
    iters = np.zeros(n, dtype=np.int64)
    resid = np.zeros(n)
    traces: list = [None] * n
    fits: list = [None] * n
    for i in range(n - 1, start - 1, -1):
        e, z, psi, fit = proj.project(i, Y[i + 1])
        step = StepData(i, float(times[i]), proj.state(i), e, z, psi, dt)
        out = picard_iterate(step, driver_at(i), opts=opts)
        Y[i], Z[i], P[i] = out.y, z, psi
        iters[i] = out.iterations
        resid[i] = out.residuals[-1]
        traces[i] = out.residuals
        fits[i] = fit
    d = Z[n - 1].shape[1] if n > start else 0
    M = P[n - 1].shape[1] if n > start else 0
    Z[n] = np.zeros((proj.layer_size(n), d))
    P[n] = np.zeros((proj.layer_size(n), M))
    for i in range(start):
        Y[i] = np.zeros(proj.layer_size(i))
        Z[i] = np.zeros((proj.layer_size(i), d))
        P[i] = np.zeros((proj.layer_size(i), M))
    return BsdeSolution(Y, Z, P, iters, resid, grid, proj, backend, driver_name, traces, fits, start=start)


def _driver_notes(driver: DriverSpec, dt: float) -> list:
    notes = []
    if driver.z_lipschitz is None:
        notes.append("direct Picard on a quadratic driver: no convergence guarantee (use the cascade)")
    if driver.y_lipschitz is not None and driver.y_lipschitz * dt >= 1:
        log.warning("y-Lipschitz constant times dt is %.3g >= 1; Picard contraction not guaranteed",
                    driver.y_lipschitz * dt)
        notes.append("y-Lipschitz constant times dt >= 1")
    return notes


def _terminal(terminal, X):
    return np.asarray(terminal(X), dtype=float).reshape(X.shape[0])


def solve_lattice(lattice: LatticeModel, driver: DriverSpec, terminal: Callable,
                  opts: PicardOptions = PicardOptions(), start: int = 0) -> BsdeSolution:
    """Exact dynamic programming of the discrete BSDE on a lattice."""
    sol = backward_induction(lattice, _terminal(terminal, lattice.state(lattice.n_steps)), lambda i: driver,
                             opts, start, "lattice", driver.name)
    sol.notes.extend(_driver_notes(driver, lattice.grid.dt))
    return sol


def pathwise_y0(sol: BsdeSolution, driver: Callable) -> np.ndarray:
    """Per-path ``ξ + Σ f dt - Σ Z ΔW - Σ ψ Δμ̃`` from the start layer.

    Its mean estimates ``Y_0`` and its spread gives the Monte-Carlo error.
    """
    proj = sol.projector
    dt = sol.grid.dt
    times = sol.grid.times
    v = np.array(sol.Y[-1], dtype=float)
    for i in range(sol.start, sol.n_steps):
        X = proj.state(i)
        v = v + driver(times[i], X, sol.Y[i], sol.Z[i], sol.psi[i]) * dt
        v = v - np.sum(sol.Z[i] * proj.dW[:, i], axis=1) - np.sum(sol.psi[i] * proj.dmu[:, i], axis=1)
    return v


def solve_regression(paths: PathEnsemble, driver: DriverSpec, terminal: Callable,
                     basis: RegressionBasis = RegressionBasis(), opts: PicardOptions = PicardOptions(),
                     features=None, start: int = 0) -> BsdeSolution:
    """Least-squares Monte-Carlo solution on a path ensemble.

    ``Y0`` carries a standard error from the pathwise estimator
    ``ξ + Σ f dt - Σ Z ΔW - Σ ψ Δμ̃``.
    """
    if driver.marks.n_marks and driver.marks.rates != paths.marks.rates:
        raise ContractError("driver and path ensemble use different jump intensities")
    proj = RegressionProjector(paths, basis, features)
    X_T = paths.X[:, -1]
    sol = backward_induction(proj, _terminal(terminal, X_T), lambda i: driver, opts, start, "regression", driver.name)
    sol.notes.extend(_driver_notes(driver, paths.grid.dt))
    v = pathwise_y0(sol, driver)
    sol.meta["y0_pathwise"] = float(v.mean())
    sol.meta["y0_stderr"] = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    sol.meta["n_paths"] = paths.n_paths
    return sol


# --------------------------------------------------------------------------
# cascade


@dataclass
class CascadeResult:
    schedule: list
    solutions: dict
    trace: list
    n_violation: float
    m_violation: float

    def y0_table(self) -> dict:
        return {str(idx): self.solutions[idx].y0 for idx in self.schedule}

    def monotone(self, tol: float = 1e-10) -> bool:
        return self.n_violation <= tol and self.m_violation <= tol


def _sup_gap(a: BsdeSolution, b: BsdeSolution) -> float:
    return max(float(np.max(np.abs(ya - yb), initial=0.0)) for ya, yb in zip(a.Y, b.Y))


def _max_excess(a: BsdeSolution, b: BsdeSolution) -> float:
    """``max (Y^a - Y^b)`` over all nodes (positive means ``Y^a > Y^b`` somewhere)."""
    return max(float(np.max(ya - yb, initial=-np.inf)) for ya, yb in zip(a.Y, b.Y))


def solve_qexp_cascade(projector, driver: DriverSpec, terminal_values: np.ndarray, schedule: list,
                       opts: PicardOptions = PicardOptions(), **envelope_opts) -> CascadeResult:
    """Solve the regularized BSDEs ``f^{n,m,k}`` for every index in ``schedule``.

    All members share one projector, so node-wise comparisons are exact on a
    lattice.  Monotonicity is checked for every pair differing in one index:
    ``Y`` must decrease in ``m`` and increase in ``n``.
    """
    schedule = [s if isinstance(s, RegularizationIndex) else RegularizationIndex(*s) for s in schedule]
    backend = "lattice" if isinstance(projector, LatticeModel) else "regression"
    sols = {}
    trace = []
    prev = None
    for idx in schedule:
        drv = regularize(driver, idx, **envelope_opts)
        try:
            sol = backward_induction(projector, terminal_values, lambda i, f=drv: f, opts, 0, backend, drv.name)
        except QexpError as exc:
            raise _with_index(exc, idx)
        sols[idx] = sol
        gap = _sup_gap(sol, sols[prev]) if prev is not None else float("nan")
        trace.append({"n": idx.n, "m": idx.m, "k": idx.k_trunc, "y0": sol.y0, "sup_gap_prev": gap,
                      "max_picard_iters": int(sol.picard_iters.max(initial=0))})
        prev = idx
    n_viol = m_viol = 0.0
    for a in schedule:
        for b in schedule:
            if a.k_trunc != b.k_trunc:
                continue
            if a.m == b.m and b.n > a.n:
                n_viol = max(n_viol, _max_excess(sols[a], sols[b]))
            if a.n == b.n and b.m > a.m:
                m_viol = max(m_viol, _max_excess(sols[b], sols[a]))
    return CascadeResult(schedule, sols, trace, n_viol, m_viol)


def _with_index(exc: QexpError, idx: RegularizationIndex):
    exc.args = (f"cascade index {idx}: {exc}",)
    exc.cascade_index = idx
    return exc
