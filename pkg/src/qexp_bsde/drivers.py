"""Drivers of quadratic-exponential BSDEs and their Lipschitz regularisation.

A driver is a vectorised callable ``f(t, x, y, z, psi)`` with ``x (N, n)``,
``y (N,)``, ``z (N, d)`` and ``psi (N, M)`` (one column per jump mark),
returning ``(N,)``.  Jump integrals ``∫ g(ψ(e)) ν(de)`` are finite sums
``Σ_j g(ψ_j) λ_j`` over the marks of the attached :class:`MarkSpec`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError, ContractError, DomainError, SaturationError
from .levy import NO_MARKS, MarkSpec

log = logging.getLogger(__name__)

_EXP_LIMIT = 709.0
_SERIES_CUT = 1e-2


def j_gamma(gamma, u):
    """``(e^{γu} - 1 - γu) / γ``, accurate near zero.

    Raises :class:`SaturationError` when ``γu`` overflows ``exp``.
    """
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    u = np.asarray(u, dtype=float)
    x = gamma * u
    big = np.nanmax(x) if x.size else 0.0
    if big > _EXP_LIMIT:
        raise SaturationError(float(big))
    small = np.abs(x) < _SERIES_CUT
    # x^2/2! + ... + x^9/9!; truncation error below 1e-19 relative on |x|<1e-2
    xs = np.where(small, x, 0.0)
    series = np.zeros_like(xs)
    term = xs * xs / 2.0
    for k in range(3, 11):
        series = series + term
        term = term * xs / k
    out = np.where(small, series, np.expm1(np.where(small, 0.0, x)) - x)
    return out / gamma


def dj_gamma(gamma, u):
    """Derivative ``e^{γu} - 1`` of :func:`j_gamma`."""
    return np.expm1(gamma * np.asarray(u, dtype=float))


def jump_integral(fun_values, marks: MarkSpec):
    """``Σ_j g_j λ_j`` over the last axis."""
    if marks.n_marks == 0:
        return np.zeros(np.shape(fun_values)[:-1])
    return np.asarray(fun_values) @ marks.rate_array


@dataclass(frozen=True)
class DriverSpec:
    """A driver with its declared quadratic-exponential structure constants.

    ``quadratic_split = (c, rest)`` declares ``f = rest(t,x,y,psi) + c/2 |z|^2``
    with ``rest >= 0``; the Lipschitz envelopes then have closed forms.
    ``grad`` returns the partial derivatives as a dict with keys
    ``"x", "y", "z", "psi"``; central differences are used otherwise.
    """

    f: Callable
    beta: float
    gamma: float
    l_bound: float
    xi_bound: float = 1.0
    lipschitz_profile: Callable | None = None
    agamma_witness: Callable | None = None
    marks: MarkSpec = NO_MARKS
    name: str = "custom"
    quadratic_split: tuple | None = None
    grad: Callable | None = None
    y_lipschitz: float | None = None
    z_lipschitz: float | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.beta < 0:
            raise DomainError(f"beta must be >= 0, got {self.beta}")
        if not self.gamma > 0:
            raise DomainError(f"gamma must be > 0, got {self.gamma}")

    def __call__(self, t, x, y, z, psi):
        return self.f(t, x, y, z, psi)

    def to_config(self) -> dict:
        return {"preset": self.name, "params": dict(self.params)}


# --------------------------------------------------------------------------
# structure certificates


def upper_structure_bound(driver: DriverSpec, y, z, psi):
    z = np.atleast_2d(z)
    return (driver.l_bound + driver.beta * np.abs(y) + 0.5 * driver.gamma * np.sum(z**2, axis=-1)
            + jump_integral(j_gamma(driver.gamma, psi), driver.marks))


def lower_structure_bound(driver: DriverSpec, y, z, psi):
    z = np.atleast_2d(z)
    return -(driver.l_bound + driver.beta * np.abs(y) + 0.5 * driver.gamma * np.sum(z**2, axis=-1)
             + jump_integral(j_gamma(driver.gamma, -np.asarray(psi)), driver.marks))


@dataclass(frozen=True)
class StructureReport:
    upper_slack: np.ndarray
    lower_slack: np.ndarray
    n_violations: int
    max_violation: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def check_structure(driver: DriverSpec, t, x, y, z, psi, atol=1e-12, rtol=1e-9) -> StructureReport:
    """Slack of both sides of the quadratic-exponential structure condition.

    A point violates a side when its slack is below
    ``-(atol + rtol * (|f| + |bound|))``.
    """
    f = driver.f(t, x, y, z, psi)
    up = upper_structure_bound(driver, y, z, psi)
    lo = lower_structure_bound(driver, y, z, psi)
    s_up = up - f
    s_lo = f - lo
    tol_up = atol + rtol * (np.abs(f) + np.abs(up))
    tol_lo = atol + rtol * (np.abs(f) + np.abs(lo))
    bad = (s_up < -tol_up) | (s_lo < -tol_lo)
    worst = float(max(0.0, -np.min(s_up), -np.min(s_lo)))
    return StructureReport(s_up, s_lo, int(np.count_nonzero(bad)), worst, atol)


@dataclass(frozen=True)
class AGammaReport:
    c1: float
    c2: float
    n_violations: int
    max_violation: float

    @property
    def ok(self) -> bool:
        return self.c1 > -1 and self.n_violations == 0


def check_agamma(driver: DriverSpec, t, x, y, z, psi, psi2, atol=1e-10) -> AGammaReport:
    """Verify ``f(ψ) - f(ψ') <= Σ Γ_j (ψ_j - ψ'_j) λ_j`` with the driver's witness.

    Also reports ``C1 = min Γ / (1∧|e|)`` and ``C2 = max Γ / (1∧|e|)``; the
    condition needs ``C1 > -1``.
    """
    if driver.agamma_witness is None:
        raise DomainError(f"driver {driver.name!r} carries no A_Gamma witness")
    marks = driver.marks
    Gam = driver.agamma_witness(t, x, y, z, psi, psi2)
    lhs = driver.f(t, x, y, z, psi) - driver.f(t, x, y, z, psi2)
    rhs = jump_integral(Gam * (psi - psi2), marks)
    gap = lhs - rhs
    tol = atol * (1 + np.abs(lhs) + np.abs(rhs))
    eta = np.minimum(1.0, np.abs(marks.size_array)) if marks.n_marks else np.ones(0)
    scaled = Gam / eta if marks.n_marks else np.zeros((1, 1))
    return AGammaReport(float(np.min(scaled)), float(np.max(scaled)),
                        int(np.count_nonzero(gap > tol)), float(max(0.0, np.max(gap))))


def sample_points(n, dim_x=1, dim_w=1, n_marks=0, radius=3.0, T=1.0, seed=0):
    """Quasi-random (Halton) points ``(t, x, y, z, psi)`` in a box of given radius."""
    dim = 1 + dim_x + 1 + dim_w + n_marks
    u = qmc.Halton(d=dim, seed=seed).random(n)
    v = radius * (2 * u - 1)
    t = T * u[:, 0]
    x, y, z, psi = np.split(v[:, 1:], np.cumsum([dim_x, 1, dim_w]), axis=1)
    y = y[:, 0]
    return {"t": t, "x": x, "y": y, "z": z, "psi": psi}


# --------------------------------------------------------------------------
# smooth truncation


def truncate_phi(m, x):
    """Smooth odd truncation: identity on ``|x| <= m``, ``±(m+1)`` beyond ``m+2``.

    On ``[m, m+2]`` it is ``m + 2 q((x-m)/2)`` with ``q(s) = s - s^3 + s^4/2``,
    the Hermite blend with ``q'(0)=1``, ``q'(1)=q''(0)=q''(1)=0``; its slope
    ``(1-s)^2 (1+2s)`` stays in ``[0, 1]``.
    """
    if m < 1:
        raise DomainError(f"truncation level must be >= 1, got {m}")
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    s = np.clip((a - m) / 2.0, 0.0, 1.0)
    blend = m + 2.0 * (s - s**3 + 0.5 * s**4)
    out = np.where(a <= m, a, blend)
    return np.sign(x) * out


def truncate_phi_prime(m, x):
    a = np.abs(np.asarray(x, dtype=float))
    s = np.clip((a - m) / 2.0, 0.0, 1.0)
    return np.where(a <= m, 1.0, (1 - s) ** 2 * (1 + 2 * s))


# --------------------------------------------------------------------------
# inf/sup convolution


def _golden(obj, lo, hi, iters):
    """Vectorised golden-section minimisation of ``obj`` on ``[lo, hi]``."""
    g = (math.sqrt(5) - 1) / 2
    a, b = lo.copy(), hi.copy()
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = obj(c), obj(d)
    for _ in range(iters):
        left = fc < fd
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        c_new = np.where(left, b - g * (b - a), d)
        d_new = np.where(left, c, a + g * (b - a))
        f_new = obj(np.where(left, c_new, d_new))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
        c, d = c_new, d_new
    w = np.where(fc < fd, c, d)
    return w, np.minimum(fc, fd)


def lipschitz_envelope(pos, n, z, n_grid=65, golden_iters=50, sweeps=None):
    """``inf_w { pos(w) + n |z - w| }`` for a nonnegative ``pos``.

    The minimiser lies in the ball of radius ``pos(z)/n`` around ``z``
    (any farther ``w`` costs more than ``w = z``).  Each coordinate is searched
    by a grid followed by golden-section refinement; ``w = z`` is always a
    candidate, so the result never exceeds ``pos(z)``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    N, d = z.shape
    best = np.asarray(pos(z), dtype=float).copy()
    w = z.copy()
    radius = best / n
    active = radius > 0
    if not np.any(active):
        return best
    sweeps = sweeps or (1 if d == 1 else 3)
    u = np.linspace(-1.0, 1.0, n_grid)
    for _ in range(sweeps):
        for c in range(d):
            idx = np.nonzero(active)[0]
            wa, za, ra = w[idx], z[idx], radius[idx]

            def obj_batch(wc, wa=wa, za=za, idx=idx, c=c):
                # wc (len(idx), G)
                G = wc.shape[1]
                ww = np.repeat(wa[:, None, :], G, axis=1)
                ww[:, :, c] = wc
                flat = ww.reshape(-1, d)
                val = pos(flat, np.repeat(idx, G)) + n * np.linalg.norm(np.repeat(za, G, axis=0) - flat, axis=1)
                return val.reshape(len(idx), G)

            grid = za[:, c:c + 1] + ra[:, None] * u[None, :]
            vals = obj_batch(grid)
            k = np.argmin(vals, axis=1)
            on_edge = (k == 0) | (k == n_grid - 1)
            if np.any(on_edge & (vals[np.arange(len(idx)), k] < best[idx] - 1e-14)):
                grid2 = za[:, c:c + 1] + 2 * ra[:, None] * u[None, :]
                vals2 = obj_batch(grid2)
                k2 = np.argmin(vals2, axis=1)
                use = vals2[np.arange(len(idx)), k2] < vals[np.arange(len(idx)), k]
                grid = np.where(use[:, None], grid2, grid)
                vals = np.where(use[:, None], vals2, vals)
                k = np.where(use, k2, k)
                if np.any(use & ((k == 0) | (k == n_grid - 1))):
                    log.warning("inf-convolution minimiser on the enlarged search boundary for %d points",
                                int(np.count_nonzero(use & ((k == 0) | (k == n_grid - 1)))))
            rows = np.arange(len(idx))
            lo = grid[rows, np.maximum(k - 1, 0)]
            hi = grid[rows, np.minimum(k + 1, n_grid - 1)]
            wg, vg = _golden(lambda s: obj_batch(s[:, None])[:, 0], lo, hi, golden_iters)
            vgrid = vals[rows, k]
            take_g = vg < np.minimum(vgrid, best[idx])
            take_grid = (~take_g) & (vgrid < best[idx])
            new_wc = np.where(take_g, wg, np.where(take_grid, grid[rows, k], wa[:, c]))
            w[idx, c] = new_wc
            best[idx] = np.minimum(best[idx], np.minimum(vg, vgrid))
    return best


def _positive_part_fun(driver, t, x, y, psi, sign):
    """``w -> max(sign * f(t, x, y, w, psi), 0)`` restricted to selected rows."""

    def pos(w, rows=None):
        if rows is None:
            xx, yy, pp = x, y, psi
        else:
            xx, yy, pp = x[rows], y[rows], psi[rows]
        return np.maximum(sign * driver.f(t, xx, yy, w, pp), 0.0)

    return pos


def _broadcast_args(x, y, z, psi):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    N = z.shape[0]
    y = np.broadcast_to(np.asarray(y, dtype=float), (N,))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x = np.broadcast_to(x, (N, x.shape[1]))
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    psi = np.broadcast_to(psi, (N, psi.shape[1]))
    return x, y, z, psi


def inf_convolve(driver: DriverSpec, n, t, x, y, z, psi, **opts):
    """``inf_w { (f ∨ 0)(t, x, y, w, ψ) + n |z - w| }`` (n-Lipschitz minorant)."""
    x, y, z, psi = _broadcast_args(x, y, z, psi)
    if driver.quadratic_split is not None:
        c, rest = driver.quadratic_split
        r = rest(t, x, y, psi)
        nz = np.linalg.norm(z, axis=1)
        return r + np.where(nz <= n / c, 0.5 * c * nz**2, n * nz - n * n / (2 * c))
    return lipschitz_envelope(_positive_part_fun(driver, t, x, y, psi, 1.0), n, z, **opts)


def sup_convolve(driver: DriverSpec, m, t, x, y, z, psi, **opts):
    """``sup_w { (f ∧ 0)(t, x, y, w, ψ) - m |z - w| }`` (m-Lipschitz majorant)."""
    x, y, z, psi = _broadcast_args(x, y, z, psi)
    if driver.quadratic_split is not None:
        return np.zeros(z.shape[0])
    return -lipschitz_envelope(_positive_part_fun(driver, t, x, y, psi, -1.0), m, z, **opts)


@dataclass(frozen=True)
class RegularizationIndex:
    n: int
    m: int
    k_trunc: int

    def __post_init__(self):
        if min(self.n, self.m, self.k_trunc) < 1:
            raise DomainError(f"regularisation indices must be >= 1, got {self}")

    def __str__(self):
        return f"({self.n},{self.m},{self.k_trunc})"


def regularize(driver: DriverSpec, idx: RegularizationIndex, **opts) -> DriverSpec:
    """The globally Lipschitz driver ``f^{n,m,k}``.

    ``y`` and each component of ``ψ`` pass through ``truncate_phi(k, .)``; the
    positive part is replaced by its n-Lipschitz inf-convolution and the
    negative part by its m-Lipschitz sup-convolution.  Declared structure
    constants are inherited unchanged.
    """
    n, m, k = idx.n, idx.m, idx.k_trunc

    def f_reg(t, x, y, z, psi):
        x, y, z, psi = _broadcast_args(x, y, z, psi)
        yk = truncate_phi(k, y)
        pk = truncate_phi(k, psi)
        return inf_convolve(driver, n, t, x, yk, z, pk, **opts) + sup_convolve(driver, m, t, x, yk, z, pk, **opts)

    return replace(driver, f=f_reg, name=f"{driver.name}^{idx}", quadratic_split=None, grad=None,
                   agamma_witness=None, z_lipschitz=float(max(n, m)),
                   lipschitz_profile=lambda M: float(max(n, m)),
                   params={**driver.params, "regularization": [n, m, k]})


# --------------------------------------------------------------------------
# jump aggregation


@dataclass(frozen=True)
class JumpAggregatorSpec:
    """``u_i = Σ_{j in direction i} ρ_i(x_j) G_i(s, ψ_j) λ_j``.

    ``rho(e, i)``, ``G(s, v, i)`` and ``dG(s, v, i)`` are vectorised in ``e``/``v``.
    ``G_R(R)`` and ``dG_R(R)`` are the declared sup-bounds on ``|v| <= R``.
    """

    rho: Callable
    G: Callable
    dG: Callable
    G_R: Callable
    dG_R: Callable

    def rho_norm(self, marks: MarkSpec, direction: int) -> float:
        js = marks.marks_of(direction)
        e = marks.size_array[js]
        return float(np.sqrt(np.sum(self.rho(e, direction) ** 2 * marks.rate_array[js])))


def identity_aggregator() -> JumpAggregatorSpec:
    return JumpAggregatorSpec(rho=lambda e, i: np.ones_like(e), G=lambda s, v, i: v,
                              dG=lambda s, v, i: np.ones_like(v), G_R=lambda R: R, dG_R=lambda R: 1.0)


def aggregate_jumps(agg: JumpAggregatorSpec, s, psi, marks: MarkSpec):
    """Per-direction aggregates ``(N, k)`` of a mark vector ``psi (N, M)``."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    if psi.shape[-1] != marks.n_marks:
        raise ContractError(f"psi has {psi.shape[-1]} marks, the mark set has {marks.n_marks}")
    out = np.zeros((psi.shape[0], marks.n_directions))
    for i in range(marks.n_directions):
        js = marks.marks_of(i)
        e = marks.size_array[js]
        lam = marks.rate_array[js]
        out[:, i] = np.sum(agg.rho(e, i) * agg.G(s, psi[:, js], i) * lam, axis=1)
    return out


def aggregator_lipschitz_bound(agg: JumpAggregatorSpec, marks: MarkSpec, psi, psi2, M):
    """``‖ρ‖_{L²ν} G'_M ‖ψ - ψ'‖_{L²ν}`` per direction, shape ``(N, k)``."""
    psi = np.atleast_2d(psi)
    psi2 = np.atleast_2d(psi2)
    out = np.zeros((psi.shape[0], marks.n_directions))
    for i in range(marks.n_directions):
        js = marks.marks_of(i)
        diff = np.sqrt(np.sum((psi[:, js] - psi2[:, js]) ** 2 * marks.rate_array[js], axis=1))
        out[:, i] = agg.rho_norm(marks, i) * agg.dG_R(M) * diff
    return out


# --------------------------------------------------------------------------
# partial derivatives


def driver_partials(driver: DriverSpec, t, x, y, z, psi, h_rel=1e-4):
    """Dict of partials ``x (N,n)``, ``y (N,)``, ``z (N,d)``, ``psi (N,M)``."""
    if driver.grad is not None:
        return driver.grad(t, x, y, z, psi)
    out = {}
    f = driver.f
    h = h_rel * (1 + np.abs(y))
    out["y"] = (f(t, x, y + h, z, psi) - f(t, x, y - h, z, psi)) / (2 * h)
    for key, arr in (("x", x), ("z", z), ("psi", psi)):
        cols = []
        for c in range(arr.shape[1]):
            hc = h_rel * (1 + np.abs(arr[:, c]))
            ap = arr.copy(); ap[:, c] += hc
            am = arr.copy(); am[:, c] -= hc
            args_p = {"x": x, "z": z, "psi": psi}; args_p[key] = ap
            args_m = {"x": x, "z": z, "psi": psi}; args_m[key] = am
            cols.append((f(t, args_p["x"], y, args_p["z"], args_p["psi"])
                         - f(t, args_m["x"], y, args_m["z"], args_m["psi"])) / (2 * hc))
        out[key] = np.stack(cols, axis=1) if cols else np.zeros(arr.shape)
    return out


# --------------------------------------------------------------------------
# presets


def _mean_value_slope(fun, dfun, a, b):
    """``(fun(a) - fun(b)) / (a - b)``, with ``dfun`` on the diagonal."""
    diff = a - b
    close = np.abs(diff) < 1e-9
    safe = np.where(close, 1.0, diff)
    return np.where(close, dfun(0.5 * (a + b)), (fun(a) - fun(b)) / safe)


def zero_driver(gamma=1.0, marks=NO_MARKS):
    """``f ≡ 0``."""

    def f(t, x, y, z, psi):
        return np.zeros(np.shape(y))

    def grad(t, x, y, z, psi):
        return {"x": np.zeros_like(x), "y": np.zeros_like(y), "z": np.zeros_like(z), "psi": np.zeros_like(psi)}

    return DriverSpec(f, 0.0, gamma, 0.0, marks=marks, name="zero", grad=grad, y_lipschitz=0.0,
                      z_lipschitz=0.0, lipschitz_profile=lambda M: 0.0,
                      agamma_witness=lambda t, x, y, z, p, q: np.zeros_like(p),
                      params={"gamma": gamma})


def _linear_jump_constant(c, gamma):
    """Smallest ``K`` with ``|c| v <= j_γ(v) + K`` for all real ``v``."""
    a = abs(c)
    return ((1 + a) * math.log1p(a) - a) / gamma


def linear_driver(alpha=0.0, b=0.0, c=0.0, marks=NO_MARKS, gamma=1.0, dim_w=1):
    """``f = α y + <b, z> + Σ_i c_i u_i`` with ``u_i = Σ_{j∈i} λ_j ψ_j``."""
    bvec = np.broadcast_to(np.asarray(b, dtype=float), (dim_w,)).copy()
    k = marks.n_directions
    cvec = np.broadcast_to(np.asarray(c, dtype=float), (max(k, 1),)).copy()
    cmark = np.array([cvec[i] for i in marks.directions]) if marks.n_marks else np.zeros(0)
    if np.any(cmark <= -1):
        raise DomainError("jump coefficient c must exceed -1 for the structure condition")
    weights = cmark * marks.rate_array if marks.n_marks else np.zeros(0)

    def f(t, x, y, z, psi):
        return alpha * y + z @ bvec + (psi @ weights if weights.size else 0.0)

    def grad(t, x, y, z, psi):
        N = np.shape(y)[0]
        return {"x": np.zeros_like(x), "y": np.full(N, float(alpha)), "z": np.broadcast_to(bvec, z.shape).copy(),
                "psi": np.broadcast_to(weights, psi.shape).copy()}

    l = float(bvec @ bvec) / (2 * gamma) + sum(lam * _linear_jump_constant(cj, gamma)
                                               for cj, lam in zip(cmark, marks.rates))
    return DriverSpec(f, abs(alpha), gamma, l, marks=marks, name="linear", grad=grad,
                      y_lipschitz=abs(alpha), z_lipschitz=float(np.linalg.norm(bvec)),
                      lipschitz_profile=lambda M: abs(alpha) + float(np.linalg.norm(bvec)) + float(np.abs(weights).sum()),
                      agamma_witness=lambda t, x, y, z, p, q: np.broadcast_to(cmark, p.shape).copy(),
                      params={"alpha": alpha, "b": np.asarray(b).tolist(), "c": np.asarray(c).tolist(),
                              "gamma": gamma, "dim_w": dim_w})


def _jgamma_witness(gamma):
    def witness(t, x, y, z, p, q):
        return _mean_value_slope(lambda v: j_gamma(gamma, v), lambda v: dj_gamma(gamma, v), p, q)
    return witness


def qexp_saturating_driver(gamma=1.0, beta=0.0, l=0.0, marks=NO_MARKS):
    """``f = l + β|y| + (γ/2)|z|^2 + Σ λ_j j_γ(ψ_j)``: the upper structure bound itself."""

    def rest(t, x, y, psi):
        return l + beta * np.abs(y) + jump_integral(j_gamma(gamma, psi), marks)

    def f(t, x, y, z, psi):
        return rest(t, x, y, psi) + 0.5 * gamma * np.sum(np.atleast_2d(z) ** 2, axis=-1)

    def grad(t, x, y, z, psi):
        return {"x": np.zeros_like(x), "y": beta * np.sign(y), "z": gamma * z,
                "psi": dj_gamma(gamma, psi) * marks.rate_array if marks.n_marks else np.zeros_like(psi)}

    lam = marks.rate_array.sum() if marks.n_marks else 0.0
    return DriverSpec(f, beta, gamma, l, marks=marks, name="qexp_saturating", quadratic_split=(gamma, rest),
                      grad=grad, y_lipschitz=beta,
                      lipschitz_profile=lambda M: beta + gamma + lam * math.expm1(gamma * M),
                      agamma_witness=_jgamma_witness(gamma),
                      params={"gamma": gamma, "beta": beta, "l": l})


def cole_hopf_driver(gamma=1.0):
    """``f = (γ/2)|z|^2``; solution ``Y_t = (1/γ) ln E[e^{γξ} | F_t]``."""
    drv = qexp_saturating_driver(gamma=gamma)
    return replace(drv, name="cole_hopf", params={"gamma": gamma})


def exp_utility_driver(gamma=1.0, theta=0.5, marks=NO_MARKS, dim_w=1):
    """``f = (γ/2)|z|^2 - <θ, z> + Σ λ_j j_γ(ψ_j)``.

    The entropic/exponential-utility form with a market price of risk ``θ``.
    It takes both signs.  Declared structure constants are ``2γ`` and
    ``l = |θ|^2 / (2γ)``.  The A_Γ witness is the mean-value slope of ``j_γ``,
    which is bounded below by ``e^{-γM} - 1 > -1``.
    """
    th = np.broadcast_to(np.asarray(theta, dtype=float), (dim_w,)).copy()

    def f(t, x, y, z, psi):
        z = np.atleast_2d(z)
        return 0.5 * gamma * np.sum(z**2, axis=-1) - z @ th + jump_integral(j_gamma(gamma, psi), marks)

    def grad(t, x, y, z, psi):
        return {"x": np.zeros_like(x), "y": np.zeros_like(y), "z": gamma * z - th,
                "psi": dj_gamma(gamma, psi) * marks.rate_array if marks.n_marks else np.zeros_like(psi)}

    lam = marks.rate_array.sum() if marks.n_marks else 0.0
    return DriverSpec(f, 0.0, 2 * gamma, float(th @ th) / (2 * gamma), marks=marks, name="exp_utility",
                      grad=grad, y_lipschitz=0.0,
                      lipschitz_profile=lambda M: gamma + float(np.linalg.norm(th)) + lam * math.expm1(gamma * M),
                      agamma_witness=_jgamma_witness(gamma),
                      params={"gamma": gamma, "theta": np.asarray(theta).tolist(), "dim_w": dim_w})


def lipschitz_driver(L=3.0, a=0.5, c=0.5, marks=NO_MARKS, gamma=1.0, dim_w=1):
    """Globally Lipschitz ``f = a sin(y) + (L/√d) Σ_k sin(z_k) + c Σ λ_j sin(ψ_j)``.

    Its z-Lipschitz constant is exactly ``L``.
    """
    lam = marks.rate_array if marks.n_marks else np.zeros(0)
    scale = L / math.sqrt(dim_w)

    def f(t, x, y, z, psi):
        z = np.atleast_2d(z)
        jump = np.sin(psi) @ (c * lam) if lam.size else 0.0
        return a * np.sin(y) + scale * np.sum(np.sin(z), axis=-1) + jump

    def grad(t, x, y, z, psi):
        return {"x": np.zeros_like(x), "y": a * np.cos(y), "z": scale * np.cos(z),
                "psi": c * np.cos(psi) * lam if lam.size else np.zeros_like(psi)}

    def witness(t, x, y, z, p, q):
        return c * _mean_value_slope(np.sin, np.cos, p, q)

    l = abs(a) + L * L / (2 * gamma) + abs(c) * float(lam.sum())
    return DriverSpec(f, 0.0, gamma, l, marks=marks, name="lipschitz", grad=grad,
                      y_lipschitz=abs(a), z_lipschitz=float(L),
                      lipschitz_profile=lambda M: abs(a) + L + abs(c) * float(lam.sum()),
                      agamma_witness=witness,
                      params={"L": L, "a": a, "c": c, "gamma": gamma, "dim_w": dim_w})


DRIVER_PRESETS = {
    "zero": zero_driver,
    "linear": linear_driver,
    "qexp_saturating": qexp_saturating_driver,
    "cole_hopf": cole_hopf_driver,
    "exp_utility": exp_utility_driver,
    "lipschitz": lipschitz_driver,
}


def driver_from_config(cfg: dict, path: str = "driver") -> DriverSpec:
    """Build a driver from ``{"preset": name, "params": {...}}``."""
    if not isinstance(cfg, dict) or "preset" not in cfg:
        raise ConfigError(path, "expected an object with a 'preset' field")
    name = cfg["preset"]
    if name not in DRIVER_PRESETS:
        raise ConfigError(f"{path}.preset", f"unknown driver preset {name!r}; known: {sorted(DRIVER_PRESETS)}")
    params = dict(cfg.get("params", {}))
    try:
        if "marks" in params:
            params["marks"] = MarkSpec.from_config(params["marks"])
        return DRIVER_PRESETS[name](**params)
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"{path}.params", str(exc)) from exc
