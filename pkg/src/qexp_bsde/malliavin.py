"""Malliavin derivatives of forward and backward components.

Wiener directions solve a linear BSDE whose coefficients are the partial
derivatives of the driver frozen along the base solution.  Jump directions
are difference quotients: the BSDE is re-solved on the noise with one extra
jump of size ``z`` inserted at ``s`` and ``(𝒴 - Y)/z`` is returned.

The representation checks compare, at a time ``s``,

1. ``D_{s,0} Y_s`` with ``Z_s``,
2. ``z D_{s,z} Y_s`` with ``ψ_s(z)``,
3. ``Z_s`` with ``∂ₓu σ`` and ``ψ_s(z)`` with ``u(x + γ) - u(x)``, where ``u`` is
   obtained by re-solving from bumped initial states.

Node values at ``s`` stand in for predictable projections; at grid
resolution the two cannot be told apart.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .drivers import driver_partials
from .errors import CapabilityError, DomainError
from .lattice import LatticeModel, lattice_insert_jump
from .levy import LevyModel, PathEnsemble, insert_jump, simulate_paths
from .regression import RegressionBasis, RegressionProjector
from .solver import BsdeSolution, PicardOptions, backward_induction, pathwise_y0, solve_lattice, solve_regression

log = logging.getLogger(__name__)

PREDICTABLE_NOTE = "node value at s used in place of the predictable projection"


@dataclass(frozen=True)
class DerivativeDirection:
    """``kind`` is ``"wiener"`` (component ``index``) or ``"jump"`` (mark ``index``)."""

    kind: str
    index: int
    s: float

    def __post_init__(self):
        if self.kind not in ("wiener", "jump"):
            raise DomainError(f"direction kind must be 'wiener' or 'jump', got {self.kind!r}")

    def size(self, model: LevyModel) -> float:
        if self.kind == "wiener":
            return 0.0
        if not 0 <= self.index < model.marks.n_marks:
            raise DomainError(f"no mark with index {self.index}")
        return model.marks.sizes[self.index]

    def label(self) -> str:
        return f"{self.kind}{self.index}"


@dataclass
class MalliavinSolution:
    """``(Y, Z, ψ)`` of a derivative direction; zero on layers before ``node``."""

    direction: DerivativeDirection
    Y: list
    Z: list
    psi: list
    DX: list
    node: int
    backend: str
    notes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# forward derivative


def _layers(carrier):
    if isinstance(carrier, LatticeModel):
        return carrier.X, carrier.step_noise
    if isinstance(carrier, PathEnsemble):
        N = carrier.n_paths
        idx = np.arange(N)
        return [carrier.X[:, i] for i in range(carrier.grid.n_steps + 1)], \
            lambda i: (idx, carrier.dW[:, i], carrier.dN[:, i])
    raise DomainError(f"cannot differentiate along {type(carrier).__name__}")


def forward_derivative_paths(model: LevyModel, carrier, direction: DerivativeDirection) -> list:
    """Per-layer ``D X`` along a path ensemble or lattice; zero before ``s``.

    Wiener: starts from the ``index`` column of ``σ`` and follows the
    linearized Euler map.  Jump: starts from ``γ(s, X_s, z)/z`` and follows
    difference quotients of the coefficients, which reproduces
    ``(X^{s,z} - X)/z`` step by step.
    """
    X, noise = _layers(carrier)
    grid = carrier.grid
    times, dt = grid.times, grid.dt
    i_s = grid.node_index(direction.s)
    rates = model.marks.rate_array
    DX = [np.zeros_like(x) for x in X]
    if direction.kind == "wiener":
        if not 0 <= direction.index < model.dim_w:
            raise DomainError(f"no Wiener component {direction.index}")
        DX[i_s] = model.vol(times[i_s], X[i_s])[:, :, direction.index]
    else:
        z = direction.size(model)
        DX[i_s] = model.jump(times[i_s], X[i_s], direction.index) / z
    for i in range(i_s, grid.n_steps):
        par, dW, dN = noise(i)
        x, dx, t = X[i][par], DX[i][par], times[i]
        dmu = dN - rates * dt
        if direction.kind == "wiener":
            try:
                step = np.einsum("pac,pc->pa", model.drift_jacobian(t, x), dx) * dt
                step += np.einsum("pakc,pc,pk->pa", model.vol_jacobian(t, x), dx, dW)
                for j in range(rates.size):
                    step += np.einsum("pac,pc->pa", model.jump_jacobian(t, x, j), dx) * dmu[:, [j]]
            except (TypeError, NotImplementedError) as exc:
                raise CapabilityError(f"model coefficients are not differentiable: {exc}") from exc
        else:
            xz = x + z * dx
            step = (model.drift(t, xz) - model.drift(t, x)) / z * dt
            step += np.einsum("pak,pk->pa", (model.vol(t, xz) - model.vol(t, x)) / z, dW)
            for j in range(rates.size):
                step += (model.jump(t, xz, j) - model.jump(t, x, j)) / z * dmu[:, [j]]
        DX[i + 1] = dx + step
    return DX


# --------------------------------------------------------------------------
# backward derivatives


def _terminal_derivative(problem, X_T, DX_T):
    if problem.terminal_grad is not None:
        return np.sum(problem.terminal_grad(X_T) * DX_T, axis=1)
    h = 1e-4 * (1 + np.max(np.abs(X_T), axis=1, keepdims=True))
    return (problem.terminal(X_T + h * DX_T) - problem.terminal(X_T - h * DX_T)) / (2 * h[:, 0])


def solve_malliavin_wiener(base: BsdeSolution, problem, direction: DerivativeDirection,
                           opts: PicardOptions = PicardOptions()) -> MalliavinSolution:
    """Linear BSDE for ``D_{s,0}`` with coefficients frozen along ``base``."""
    if direction.kind != "wiener":
        raise DomainError("solve_malliavin_wiener needs a wiener direction")
    proj = base.projector
    carrier = proj if isinstance(proj, LatticeModel) else proj.paths
    DX = forward_derivative_paths(problem.model, carrier, direction)
    i_s = base.grid.node_index(direction.s)
    n = base.n_steps
    if isinstance(proj, LatticeModel):
        mproj = proj
    else:
        feats = np.concatenate([proj.paths.X, np.stack(DX, axis=1)], axis=2)
        mproj = RegressionProjector(proj.paths, proj.basis, features=feats, prune=True)
    times = base.grid.times
    driver = problem.driver

    def driver_at(i):
        g = driver_partials(driver, times[i], base.state(i), base.Y[i], base.Z[i], base.psi[i])
        fx = np.sum(g["x"] * DX[i], axis=1)
        gy, gz, gp = g["y"], g["z"], g["psi"]

        def lin(t, x, y, z, p):
            return fx + gy * y + np.sum(gz * z, axis=1) + np.sum(gp * p, axis=1)
        return lin

    term = _terminal_derivative(problem, base.state(n), DX[n])
    sol = backward_induction(mproj, term, driver_at, opts, i_s, base.backend, f"D_wiener[{driver.name}]")
    return MalliavinSolution(direction, sol.Y, sol.Z, sol.psi, DX, i_s, base.backend, [PREDICTABLE_NOTE],
                             {"picard_iters": sol.picard_iters})


def solve_malliavin_jump(base: BsdeSolution, problem, direction: DerivativeDirection,
                         opts: PicardOptions = PicardOptions()) -> MalliavinSolution:
    """Difference quotient ``(𝒴^{s,z} - Y)/z`` with ``𝒴^{s,z}`` solved on ``ω^{s,z}``."""
    if direction.kind != "jump":
        raise DomainError("solve_malliavin_jump needs a jump direction")
    model = problem.model
    z = direction.size(model)
    proj = base.projector
    i_s = base.grid.node_index(direction.s)
    if isinstance(proj, LatticeModel):
        carrier = proj
        shifted = lattice_insert_jump(proj, model, direction.s, direction.index)
        other = solve_lattice(shifted, problem.driver, problem.terminal, opts, start=i_s)
    else:
        carrier = proj.paths
        shifted = insert_jump(proj.paths, model, direction.s, model.marks.directions[direction.index], direction.index)
        other = solve_regression(shifted, problem.driver, problem.terminal, proj.basis, opts, start=i_s)
    DX = forward_derivative_paths(model, carrier, direction)
    n = base.n_steps
    Y, Z, P = [], [], []
    for i in range(n + 1):
        if i < i_s:
            Y.append(np.zeros_like(base.Y[i]))
            Z.append(np.zeros_like(base.Z[i]))
            P.append(np.zeros_like(base.psi[i]))
        else:
            Y.append((other.Y[i] - base.Y[i]) / z)
            Z.append((other.Z[i] - base.Z[i]) / z)
            P.append((other.psi[i] - base.psi[i]) / z)
    return MalliavinSolution(direction, Y, Z, P, DX, i_s, base.backend, [PREDICTABLE_NOTE],
                             {"shifted_solution": other})


def solve_malliavin_jump_direct(base: BsdeSolution, problem, direction: DerivativeDirection,
                                opts: PicardOptions = PicardOptions()) -> MalliavinSolution:
    """The jump-direction BSDE solved directly on a lattice.

    Driver ``(f(X^{s,z}, Y + z y, Z + z ζ, ψ + z p) - f(X, Y, Z, ψ))/z`` and
    terminal ``(ξ(X^{s,z}_T) - ξ(X_T))/z``.  Step by step this is the same
    algebra as the difference of two solves.
    """
    proj = base.projector
    if not isinstance(proj, LatticeModel):
        raise CapabilityError("the direct jump BSDE is implemented on the lattice backend only")
    model = problem.model
    z = direction.size(model)
    i_s = base.grid.node_index(direction.s)
    shifted = lattice_insert_jump(proj, model, direction.s, direction.index)
    DX = forward_derivative_paths(model, proj, direction)
    times = base.grid.times
    f = problem.driver

    def driver_at(i):
        Xs, X = shifted.state(i), proj.state(i)
        Yb, Zb, Pb = base.Y[i], base.Z[i], base.psi[i]
        f0 = f(times[i], X, Yb, Zb, Pb)

        def g(t, x, y, zz, p):
            return (f(t, Xs, Yb + z * y, Zb + z * zz, Pb + z * p) - f0) / z
        return g

    n = base.n_steps
    term = (problem.terminal(shifted.state(n)) - problem.terminal(proj.state(n))) / z
    sol = backward_induction(proj, term, driver_at, opts, i_s, "lattice", f"D_jump[{f.name}]")
    return MalliavinSolution(direction, sol.Y, sol.Z, sol.psi, DX, i_s, "lattice", [PREDICTABLE_NOTE])


# --------------------------------------------------------------------------
# value-function oracle


def _value(problem, node, x, backend, n_paths, seed, basis, opts):
    """``u(t_node, x)`` with its Monte-Carlo standard error (0 on the lattice)."""
    sub = problem.restart(node, x)
    if backend == "lattice":
        sol = solve_lattice(sub.lattice(), sub.driver, sub.terminal, opts)
        return sol.y0, None
    paths = simulate_paths(sub.model, sub.grid, sub.x0, n_paths, seed, stream="samples")
    sol = solve_regression(paths, sub.driver, sub.terminal, basis, opts)
    return sol.y0, pathwise_y0(sol, sub.driver)


def finite_difference_oracle(problem, x0, h: float, backend: str = "lattice", n_paths: int = 10_000, seed: int = 0,
                             basis=None, opts: PicardOptions = PicardOptions(), node: int = 0):
    """Central difference of ``u(t_node, .)`` at ``x0``; returns ``(gradient, stderr)``.

    Both bumped solves share the seed, so Monte-Carlo noise largely cancels.
    Regression re-solves draw from the ``samples`` sub-stream.
    """
    if not h > 0:
        raise DomainError("bump size must be positive")
    basis = basis or RegressionBasis()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    grad = np.zeros(x0.size)
    err = np.zeros(x0.size)
    for c in range(x0.size):
        e = np.zeros(x0.size)
        e[c] = h
        up, vu = _value(problem, node, x0 + e, backend, n_paths, seed, basis, opts)
        dn, vd = _value(problem, node, x0 - e, backend, n_paths, seed, basis, opts)
        grad[c] = (up - dn) / (2 * h)
        if vu is not None:
            err[c] = float(np.std(vu - vd, ddof=1) / np.sqrt(vu.size) / (2 * h))
    return grad, err


def value_jump_oracle(problem, x0, mark: int, backend="lattice", n_paths=10_000, seed=0, basis=None,
                      opts: PicardOptions = PicardOptions(), node: int = 0):
    """``u(t, x + γ(t, x, z)) - u(t, x)`` with its standard error."""
    basis = basis or RegressionBasis()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    t = problem.grid.times[node]
    x1 = x0 + problem.model.jump(t, x0[None, :], mark)[0]
    a, va = _value(problem, node, x1, backend, n_paths, seed, basis, opts)
    b, vb = _value(problem, node, x0, backend, n_paths, seed, basis, opts)
    err = 0.0 if va is None else float(np.std(va - vb, ddof=1) / np.sqrt(va.size))
    return a - b, err


# --------------------------------------------------------------------------
# representation diagnostics


@dataclass(frozen=True)
class DiagnosticRow:
    s: float
    direction: str
    quantity: str
    lhs: float
    rhs: float
    abs_error: float
    stderr: float
    tolerance: float

    @property
    def rel_error(self) -> float:
        return self.abs_error / max(abs(self.rhs), 1e-12)

    @property
    def passed(self) -> bool:
        return self.abs_error <= self.tolerance


DIAG_FIELDS = ["s", "direction", "quantity", "lhs", "rhs", "abs_error", "rel_error", "stderr", "tolerance", "passed"]


def _summary(lhs, rhs, w, regression):
    d = np.abs(lhs - rhs)
    err = float(d @ w)
    se = float(np.std(d, ddof=1) / np.sqrt(d.size)) if regression and d.size > 1 else 0.0
    return float(lhs @ w), float(rhs @ w), err, se


def _sample_states(base: BsdeSolution, i: int, n_points: int):
    """Indices of ``n_points`` nodes/paths at probability quantiles of the first state coordinate."""
    X = base.state(i)
    w = base.projector.weights(i)
    order = np.argsort(X[:, 0], kind="stable")
    cdf = np.cumsum(w[order])
    qs = (np.arange(n_points) + 0.5) / n_points
    picks = order[np.minimum(np.searchsorted(cdf, qs), order.size - 1)]
    return np.unique(picks)


def check_representation(base: BsdeSolution, problem, fractions=(0.25, 0.5, 0.75), n_fd_points: int = 5,
                         h: float = 0.05, abs_floor: float = 0.05, n_sigma: float = 3.0,
                         opts: PicardOptions = PicardOptions(), fd_paths: int | None = None) -> list:
    """Rows of the three representation diagnostics at each sampled time.

    Tolerance per row is ``max(abs_floor, n_sigma * stderr)``.  Wiener
    directions cover every Brownian component; jump directions use the first
    mark of each Poisson direction.
    """
    model = problem.model
    grid = base.grid
    regression = base.backend == "regression"
    rows = []
    marks = model.marks
    jump_marks = [marks.marks_of(k)[0] for k in range(marks.n_directions)]
    if regression:
        paths = base.projector.paths
        fd_kw = dict(backend="regression", n_paths=fd_paths or paths.n_paths, seed=paths.seed,
                     basis=base.projector.basis, opts=opts)
    else:
        fd_kw = dict(backend="lattice", opts=opts)
    for frac in fractions:
        s = grid.t0 + frac * (grid.T - grid.t0)
        i = grid.node_index(s)
        s = float(grid.times[i])
        w = base.projector.weights(i)
        X = base.state(i)
        sig = model.vol(s, X)
        pick = _sample_states(base, i, n_fd_points)
        fd_states = X[pick]
        if regression:
            _, z_pts, psi_pts = base.fits[i].predict(fd_states)
        else:
            z_pts, psi_pts = base.Z[i][pick], base.psi[i][pick]
        grads, gerrs = [], []
        for x in fd_states:
            g, ge = finite_difference_oracle(problem, x, h, node=i, **fd_kw)
            grads.append(g)
            gerrs.append(ge)
        grads, gerrs = np.array(grads), np.array(gerrs)
        for k in range(model.dim_w):
            d = DerivativeDirection("wiener", k, s)
            ms = solve_malliavin_wiener(base, problem, d, opts)
            lhs, rhs, err, se = _summary(ms.Y[i], base.Z[i][:, k], w, regression)
            rows.append(DiagnosticRow(s, d.label(), "DY_vs_Z", lhs, rhs, err, se, max(abs_floor, n_sigma * se)))
            sig_pts = sig[pick][:, :, k]
            oracle = np.sum(grads * sig_pts, axis=1)
            oracle_se = np.sqrt(np.sum((gerrs * sig_pts) ** 2, axis=1))
            diff = np.abs(z_pts[:, k] - oracle)
            se3 = float(np.max(oracle_se)) if oracle_se.size else 0.0
            rows.append(DiagnosticRow(s, d.label(), "Z_vs_dudx_sigma", float(z_pts[:, k].mean()), float(oracle.mean()),
                                      float(diff.mean()), se3, max(abs_floor, n_sigma * se3)))
        for j in jump_marks:
            d = DerivativeDirection("jump", j, s)
            z = marks.sizes[j]
            mj = solve_malliavin_jump(base, problem, d, opts)
            lhs, rhs, err, se = _summary(z * mj.Y[i], base.psi[i][:, j], w, regression)
            rows.append(DiagnosticRow(s, d.label(), "zDY_vs_psi", lhs, rhs, err, se, max(abs_floor, n_sigma * se)))
            oracle, oerr = [], []
            for x in fd_states:
                v, e = value_jump_oracle(problem, x, j, node=i, **fd_kw)
                oracle.append(v)
                oerr.append(e)
            oracle = np.array(oracle)
            diff = np.abs(psi_pts[:, j] - oracle)
            se3 = float(max(oerr)) if oerr else 0.0
            rows.append(DiagnosticRow(s, d.label(), "psi_vs_u_jump", float(psi_pts[:, j].mean()), float(oracle.mean()),
                                      float(diff.mean()), se3, max(abs_floor, n_sigma * se3)))
    return rows


def residuals_shrink(coarse: list, fine: list, floor: float = 1e-8) -> dict:
    """Per ``(s-fraction order, direction, quantity)``: does the refined residual not exceed the coarse one?

    Rows are matched by position; pairs where both residuals are below
    ``floor`` count as shrinking (both are at rounding level).
    """
    out = {}
    for a, b in zip(coarse, fine):
        key = (round(a.s, 12), a.direction, a.quantity)
        out[key] = b.abs_error <= a.abs_error or max(a.abs_error, b.abs_error) <= floor
    return out


def write_diagnostics_csv(rows: list, file):
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w", newline="") if own else file
    try:
        w = csv.writer(fh)
        w.writerow(DIAG_FIELDS)
        for r in rows:
            w.writerow([repr(r.s), r.direction, r.quantity, repr(r.lhs), repr(r.rhs), repr(r.abs_error),
                        repr(r.rel_error), repr(r.stderr), repr(r.tolerance), str(r.passed).lower()])
    finally:
        if own:
            fh.close()
