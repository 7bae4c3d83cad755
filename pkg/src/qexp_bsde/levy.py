"""Jump-diffusion forward model with finitely many jump marks.

The Lévy measure of every Poisson direction is a finite sum of point masses,
so the compensated measure reduces to per-mark counting processes minus
``rate * dt``.  Paths are simulated with an Euler scheme whose jumps are
aggregated per time step and applied at the end of the step.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError, DomainError, ModelEvaluationError

log = logging.getLogger(__name__)

# Named sub-streams of the counter-based generator.
STREAMS = {"paths": 1, "lattice": 2, "bootstrap": 3, "samples": 4}


@dataclass(frozen=True)
class MarkSpec:
    """Finite-support jump measure.

    Mark ``j`` has size ``sizes[j]``, intensity ``rates[j]`` and belongs to
    Poisson direction ``directions[j]``.  An empty mark set means no jumps.
    """

    sizes: tuple = ()
    rates: tuple = ()
    directions: tuple = ()

    def __post_init__(self):
        sizes = tuple(float(s) for s in self.sizes)
        rates = tuple(float(r) for r in self.rates)
        dirs = tuple(int(i) for i in self.directions) if self.directions else (0,) * len(sizes)
        if not (len(sizes) == len(rates) == len(dirs)):
            raise DomainError("sizes, rates and directions must have equal length")
        if any(r <= 0 or not np.isfinite(r) for r in rates):
            raise DomainError(f"mark intensities must be positive, got {rates}")
        if any(s == 0 or not np.isfinite(s) for s in sizes):
            raise DomainError(f"mark sizes must be nonzero, got {sizes}")
        if dirs and (min(dirs) < 0 or sorted(set(dirs)) != list(range(max(dirs) + 1))):
            raise DomainError(f"directions must cover 0..k-1, got {dirs}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "directions", dirs)

    @property
    def n_marks(self) -> int:
        return len(self.sizes)

    @property
    def n_directions(self) -> int:
        return max(self.directions) + 1 if self.directions else 0

    @property
    def size_array(self) -> np.ndarray:
        return np.asarray(self.sizes, dtype=float)

    @property
    def rate_array(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=float)

    @property
    def second_moment(self) -> float:
        """``∫ |z|^2 ν(dz)`` summed over directions."""
        return float(np.sum(self.size_array**2 * self.rate_array))

    def m_measure(self) -> np.ndarray:
        """Masses of ``m(dz) = z^2 ν(dz)`` at each mark."""
        return self.size_array**2 * self.rate_array

    def marks_of(self, direction: int) -> list[int]:
        return [j for j, i in enumerate(self.directions) if i == direction]

    def to_config(self) -> dict:
        return {"sizes": list(self.sizes), "rates": list(self.rates),
                "directions": list(self.directions)}

    @classmethod
    def from_config(cls, cfg) -> "MarkSpec":
        if cfg is None:
            return cls()
        return cls(cfg.get("sizes", ()), cfg.get("rates", ()), cfg.get("directions", ()))


NO_MARKS = MarkSpec()


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise DomainError(f"need T > t0, got t0={self.t0}, T={self.T}")
        if int(self.n_steps) < 1:
            raise DomainError(f"need n_steps >= 1, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def node_index(self, s: float) -> int:
        """Index of the grid node nearest to ``s``."""
        if s < self.t0 - 1e-12 or s > self.T + 1e-12:
            raise DomainError(f"time {s} outside [{self.t0}, {self.T}]")
        return int(np.clip(np.rint((s - self.t0) / self.dt), 0, self.n_steps))

    def tail(self, i: int) -> "TimeGrid":
        """The sub-grid starting at node ``i`` with the same step."""
        return TimeGrid(float(self.times[i]), self.T, self.n_steps - i)


def _fd_jacobian(fun, t, x, h_rel=1e-4):
    """Central-difference Jacobian of ``fun(t, x)`` w.r.t. the last axis of x."""
    n = x.shape[1]
    cols = []
    for c in range(n):
        h = h_rel * (1.0 + np.abs(x[:, c]))
        xp = x.copy()
        xm = x.copy()
        xp[:, c] += h
        xm[:, c] -= h
        d = (fun(t, xp) - fun(t, xm)) / (2 * h).reshape((-1,) + (1,) * (fun(t, x).ndim - 1))
        cols.append(d)
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class LevyModel:
    """Coefficients of ``dX = b dt + σ dW + Σ γ(X-, mark) dμ̃``.

    All coefficient callables are vectorised over a leading path axis:
    ``b(t, x) -> (N, n)``, ``sigma(t, x) -> (N, n, d)`` and
    ``gamma_jump(t, x, e, i) -> (N, n)`` for a mark of size ``e`` in
    direction ``i``.  Optional ``db``, ``dsigma`` and ``dgamma`` give the
    x-Jacobians; central differences are used when they are missing.
    """

    dim_x: int
    dim_w: int
    b: Callable
    sigma: Callable
    gamma_jump: Callable
    marks: MarkSpec = NO_MARKS
    lipschitz_K: float = 1.0
    additive: bool = False
    db: Callable | None = None
    dsigma: Callable | None = None
    dgamma: Callable | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def drift(self, t, x):
        return self._checked("drift", self.b(t, x), t, x)

    def vol(self, t, x):
        return self._checked("diffusion", self.sigma(t, x), t, x)

    def jump(self, t, x, j):
        e = self.marks.sizes[j]
        return self._checked("jump coefficient", self.gamma_jump(t, x, e, self.marks.directions[j]), t, x)

    def jump_all(self, t, x):
        """``(N, n, M)`` array of jump coefficients for every mark."""
        if self.marks.n_marks == 0:
            return np.zeros(x.shape + (0,))
        return np.stack([self.jump(t, x, j) for j in range(self.marks.n_marks)], axis=-1)

    def drift_jacobian(self, t, x):
        if self.db is not None:
            return self.db(t, x)
        return _fd_jacobian(self.b, t, x)

    def vol_jacobian(self, t, x):
        """``(N, n, d, n)``: derivative of σ[:, a, k] w.r.t. x[:, c]."""
        if self.dsigma is not None:
            return self.dsigma(t, x)
        return _fd_jacobian(self.sigma, t, x)

    def jump_jacobian(self, t, x, j):
        e = self.marks.sizes[j]
        i = self.marks.directions[j]
        if self.dgamma is not None:
            return self.dgamma(t, x, e, i)
        return _fd_jacobian(lambda tt, xx: self.gamma_jump(tt, xx, e, i), t, x)

    def _checked(self, what, value, t, x):
        value = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(value)):
            bad = np.argwhere(~np.isfinite(value.reshape(value.shape[0], -1)))[0, 0]
            raise ModelEvaluationError(what, t, np.asarray(x)[bad].tolist())
        return value

    def to_config(self) -> dict:
        return {"preset": self.name, "params": dict(self.params)}


def check_model_assumptions(model: LevyModel, n_samples=256, radius=5.0, seed=0):
    """Sampling certificate for the forward-model growth/Lipschitz bounds.

    Returns a dict with the largest observed ratios
    ``(|∂b| + |∂σ|) / K``, ``|γ(t,0,e)| / (K (1∧|e|))`` and
    ``|∂γ| / (K (1∧|e|))`` together with the violation count.
    """
    rng = qmc.Halton(d=model.dim_x + 1, seed=seed)
    u = rng.random(n_samples)
    t = u[:, 0]
    x = radius * (2 * u[:, 1:] - 1)
    K = model.lipschitz_K
    ratios = {"lipschitz": 0.0, "jump_at_zero": 0.0, "jump_lipschitz": 0.0}
    for tt in np.unique(np.round(t, 2))[:16]:
        jb = np.linalg.norm(model.drift_jacobian(tt, x).reshape(n_samples, -1), axis=1)
        js = np.linalg.norm(model.vol_jacobian(tt, x).reshape(n_samples, -1), axis=1)
        ratios["lipschitz"] = max(ratios["lipschitz"], float(np.max(jb + js)) / K)
        for j, e in enumerate(model.marks.sizes):
            eta = min(1.0, abs(e))
            g0 = np.linalg.norm(model.jump(tt, np.zeros((1, model.dim_x)), j))
            ratios["jump_at_zero"] = max(ratios["jump_at_zero"], float(g0) / (K * eta))
            jg = np.linalg.norm(model.jump_jacobian(tt, x, j).reshape(n_samples, -1), axis=1)
            ratios["jump_lipschitz"] = max(ratios["jump_lipschitz"], float(np.max(jg)) / (K * eta))
    violations = sum(r > 1 + 1e-9 for r in ratios.values())
    return {"ratios": ratios, "violations": violations}


# --------------------------------------------------------------------------
# path simulation


def path_generator(seed: int, stream: str, index: int) -> np.random.Generator:
    """Counter-based generator for one path of one named stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), STREAMS[stream], int(index)])))


def draw_noise(model: LevyModel, grid: TimeGrid, n_paths: int, seed: int, first_path: int = 0,
               stream: str = "paths"):
    """Brownian increments ``(N, n_steps, d)`` and jump counts ``(N, n_steps, M)``.

    Path ``p`` only depends on ``(seed, p)``, so growing ``n_paths`` keeps the
    earlier paths unchanged.
    """
    dt = grid.dt
    d, M = model.dim_w, model.marks.n_marks
    lam = model.marks.rate_array * dt
    dW = np.empty((n_paths, grid.n_steps, d))
    dN = np.zeros((n_paths, grid.n_steps, M), dtype=np.int64)
    for p in range(n_paths):
        g = path_generator(seed, stream, first_path + p)
        dW[p] = g.standard_normal((grid.n_steps, d)) * np.sqrt(dt)
        if M:
            dN[p] = g.poisson(lam, size=(grid.n_steps, M))
    return dW, dN


def euler_step(model: LevyModel, t, x, dt, dW, dN):
    """One compensated Euler step; ``dW (N, d)``, ``dN (N, M)``."""
    x_new = x + model.drift(t, x) * dt + np.einsum("pad,pd->pa", model.vol(t, x), dW)
    if model.marks.n_marks:
        comp = dN - model.marks.rate_array * dt
        x_new = x_new + np.einsum("pam,pm->pa", model.jump_all(t, x), comp)
    return x_new


def propagate(model: LevyModel, grid: TimeGrid, X: np.ndarray, dW, dN, start: int = 0):
    """Fill ``X[:, start+1:]`` by Euler steps from ``X[:, start]`` (in place)."""
    times = grid.times
    for i in range(start, grid.n_steps):
        X[:, i + 1] = euler_step(model, times[i], X[:, i], grid.dt, dW[:, i], dN[:, i])
    return X


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated noise and forward paths; read-only after construction."""

    grid: TimeGrid
    dW: np.ndarray
    dN: np.ndarray
    X: np.ndarray
    seed: int
    x0: np.ndarray
    marks: MarkSpec = NO_MARKS
    inserted: tuple = ()  # (node index, mark index) pairs added by insert_jump

    def __post_init__(self):
        for a in (self.dW, self.dN, self.X, self.x0):
            a.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    def jumps(self, path: int):
        """Per direction, the list of ``(time, mark_index)`` jumps of a path."""
        marks = self.marks
        out = [[] for _ in range(marks.n_directions)]
        times = self.grid.times
        for i, j in zip(*np.nonzero(self.dN[path])):
            for _ in range(int(self.dN[path, i, j])):
                out[marks.directions[j]].append((float(times[i + 1]), int(j)))
        for node, j in self.inserted:
            out[marks.directions[j]].append((float(times[node]), int(j)))
        for lst in out:
            lst.sort()
        return out

    def cumulative_counts(self) -> np.ndarray:
        """``(N, n_steps+1, M)`` jump counts up to each node, inserted jumps included."""
        N, n, M = self.dN.shape
        c = np.zeros((N, n + 1, M), dtype=np.int64)
        c[:, 1:] = np.cumsum(self.dN, axis=1)
        for node, j in self.inserted:
            c[:, node:, j] += 1
        return c


def simulate_paths(model: LevyModel, grid: TimeGrid, x0, n_paths: int, seed: int,
                   stream: str = "paths") -> PathEnsemble:
    """Euler-Maruyama paths of the forward SDE; deterministic given ``seed``."""
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (model.dim_x,):
        raise DomainError(f"x0 must have shape ({model.dim_x},), got {x0.shape}")
    dW, dN = draw_noise(model, grid, n_paths, seed, stream=stream)
    X = np.empty((n_paths, grid.n_steps + 1, model.dim_x))
    X[:, 0] = x0
    propagate(model, grid, X, dW, dN)
    return PathEnsemble(grid, dW, dN, X, int(seed), x0, model.marks)


def insert_jump(paths: PathEnsemble, model: LevyModel, s: float, direction: int, mark_index: int) -> PathEnsemble:
    """Ensemble on ``ω^{s,z}``: one extra jump of mark ``mark_index`` at ``s``.

    ``s`` is snapped to the nearest node ``i``.  The state at node ``i`` is
    taken as the pre-jump value, shifted by ``γ(t_i, X_i, z)``, and the path is
    re-propagated from there with unchanged noise.  Nodes before ``i`` are
    untouched.
    """
    grid = paths.grid
    i = grid.node_index(s)
    if not 0 <= mark_index < model.marks.n_marks:
        raise DomainError(f"no mark with index {mark_index}")
    if model.marks.directions[mark_index] != direction:
        raise DomainError(f"mark {mark_index} belongs to direction {model.marks.directions[mark_index]}, not {direction}")
    X = np.array(paths.X)
    t = grid.times[i]
    X[:, i] = X[:, i] + model.jump(t, X[:, i], mark_index)
    propagate(model, grid, X, paths.dW, paths.dN, start=i)
    return PathEnsemble(grid, paths.dW, paths.dN, X, paths.seed, paths.x0, paths.marks,
                        paths.inserted + ((i, int(mark_index)),))


def compensated_jump_increments(paths: PathEnsemble, model: LevyModel | None = None) -> np.ndarray:
    """``μ̃`` per path, step and mark: count in the step minus ``λ_j dt``."""
    marks = model.marks if model is not None else paths.marks
    return paths.dN - marks.rate_array * paths.grid.dt


def sup_moment(paths: PathEnsemble, p: float) -> float:
    """Empirical ``E[sup_t |X_t|^p]``."""
    return float(np.mean(np.max(np.linalg.norm(paths.X, axis=2), axis=1) ** p))


def export_csv(paths: PathEnsemble, file, model: LevyModel | None = None):
    """One row per (path, node): time, state components, cumulative counts."""
    counts = paths.cumulative_counts()
    n = paths.X.shape[2]
    M = counts.shape[2]
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    fh = open(file, "w", newline="") if own else file
    try:
        w = csv.writer(fh)
        w.writerow(["path", "node", "t"] + [f"x{a}" for a in range(n)] + [f"count{j}" for j in range(M)])
        times = paths.grid.times
        for p in range(paths.n_paths):
            for i in range(paths.grid.n_steps + 1):
                w.writerow([p, i, repr(float(times[i]))] + [repr(float(v)) for v in paths.X[p, i]]
                           + [int(c) for c in counts[p, i]])
    finally:
        if own:
            fh.close()


# --------------------------------------------------------------------------
# presets


def _as_matrix(vol, n, d):
    v = np.asarray(vol, dtype=float)
    if v.ndim == 0:
        return np.full((n, d), float(v)) if n == d == 1 else np.eye(n, d) * float(v)
    return v.reshape(n, d)


def additive_model(drift=0.0, vol=1.0, marks=NO_MARKS, jump_scale=1.0, dim_x=1, dim_w=1, K=None):
    """Constant coefficients; ``γ(t, x, e) = jump_scale * e``.

    The state is an affine function of ``(W, N)``, so lattices recombine.
    """
    marks = marks if isinstance(marks, MarkSpec) else MarkSpec.from_config(marks)
    bvec = np.broadcast_to(np.asarray(drift, dtype=float), (dim_x,)).copy()
    S = _as_matrix(vol, dim_x, dim_w)
    ones = np.ones(dim_x)

    def b(t, x):
        return np.broadcast_to(bvec, x.shape).copy()

    def sigma(t, x):
        return np.broadcast_to(S, (x.shape[0], dim_x, dim_w)).copy()

    def gamma_jump(t, x, e, i):
        return np.broadcast_to(jump_scale * e * ones, x.shape).copy()

    zero_n = lambda t, x: np.zeros((x.shape[0], dim_x, dim_x))
    params = {"drift": np.asarray(drift).tolist(), "vol": np.asarray(vol).tolist(),
              "marks": marks.to_config(), "jump_scale": jump_scale, "dim_x": dim_x, "dim_w": dim_w}
    if K is None:
        K = max(1.0, float(np.abs(bvec).max(initial=0) + np.abs(S).max(initial=0)),
                abs(jump_scale) * max((abs(e) / min(1.0, abs(e)) for e in marks.sizes), default=0.0))
    return LevyModel(dim_x, dim_w, b, sigma, gamma_jump, marks, K, True,
                     db=zero_n,
                     dsigma=lambda t, x: np.zeros((x.shape[0], dim_x, dim_w, dim_x)),
                     dgamma=lambda t, x, e, i: np.zeros((x.shape[0], dim_x, dim_x)),
                     name="additive", params=params)


def linear_model(alpha=0.5, vol=1.0, marks=NO_MARKS, jump="multiplicative", jump_scale=1.0, K=None):
    """Scalar ``dX = α X dt + vol dW + γ dμ̃`` with ``γ = X e`` or ``γ = e``."""
    marks = marks if isinstance(marks, MarkSpec) else MarkSpec.from_config(marks)
    if jump not in ("multiplicative", "additive"):
        raise DomainError(f"unknown jump form {jump!r}")
    mult = jump == "multiplicative"

    def b(t, x):
        return alpha * x

    def sigma(t, x):
        return np.full((x.shape[0], 1, 1), float(vol))

    def gamma_jump(t, x, e, i):
        return jump_scale * e * x if mult else np.full_like(x, jump_scale * e)

    def dgamma(t, x, e, i):
        return np.full((x.shape[0], 1, 1), jump_scale * e if mult else 0.0)

    params = {"alpha": alpha, "vol": vol, "marks": marks.to_config(), "jump": jump, "jump_scale": jump_scale}
    if K is None:
        K = max(1.0, abs(alpha) + abs(vol), abs(jump_scale) * max((abs(e) / min(1.0, abs(e)) for e in marks.sizes), default=0.0))
    return LevyModel(1, 1, b, sigma, gamma_jump, marks, K, False,
                     db=lambda t, x: np.full((x.shape[0], 1, 1), float(alpha)),
                     dsigma=lambda t, x: np.zeros((x.shape[0], 1, 1, 1)),
                     dgamma=dgamma, name="linear", params=params)


def geometric_model(mu=0.05, vol=0.2, marks=NO_MARKS, K=None):
    """Scalar geometric model ``dX = X (μ dt + vol dW + e dμ̃)``."""
    marks = marks if isinstance(marks, MarkSpec) else MarkSpec.from_config(marks)

    def b(t, x):
        return mu * x

    def sigma(t, x):
        return (vol * x)[:, :, None]

    def gamma_jump(t, x, e, i):
        return e * x

    params = {"mu": mu, "vol": vol, "marks": marks.to_config()}
    if K is None:
        K = max(1.0, abs(mu) + abs(vol), max((abs(e) / min(1.0, abs(e)) for e in marks.sizes), default=0.0))
    return LevyModel(1, 1, b, sigma, gamma_jump, marks, K, False,
                     db=lambda t, x: np.full((x.shape[0], 1, 1), float(mu)),
                     dsigma=lambda t, x: np.full((x.shape[0], 1, 1, 1), float(vol)),
                     dgamma=lambda t, x, e, i: np.full((x.shape[0], 1, 1), float(e)),
                     name="geometric", params=params)


MODEL_PRESETS = {
    "additive": additive_model,
    "linear": linear_model,
    "geometric": geometric_model,
}


def model_from_config(cfg: dict, path: str = "model") -> LevyModel:
    """Build a model from ``{"preset": name, "params": {...}}``."""
    if not isinstance(cfg, dict) or "preset" not in cfg:
        raise ConfigError(path, "expected an object with a 'preset' field")
    name = cfg["preset"]
    if name not in MODEL_PRESETS:
        raise ConfigError(f"{path}.preset", f"unknown model preset {name!r}; known: {sorted(MODEL_PRESETS)}")
    params = dict(cfg.get("params", {}))
    if "marks" in params:
        try:
            params["marks"] = MarkSpec.from_config(params["marks"])
        except DomainError as exc:
            raise ConfigError(f"{path}.params.marks", str(exc)) from exc
    try:
        return MODEL_PRESETS[name](**params)
    except TypeError as exc:
        raise ConfigError(f"{path}.params", str(exc)) from exc
