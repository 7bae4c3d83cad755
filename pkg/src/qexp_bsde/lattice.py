"""Finite-state lattice for the driving noise ``(W, μ)``.

Each step branches into Brownian moves of ``±√dt`` per dimension (binomial)
or ``{-√(3dt), 0, +√(3dt)}`` (trinomial), combined with "no jump" or "one
jump of mark j" with probability ``λ_j dt``.  For additive models the state
only depends on the accumulated noise counts, so nodes with equal counts are
merged; other models use a full tree under a node budget.

Conditional expectations on the lattice are exact finite sums, which makes it
the oracle backend for the regression solver.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DomainError
from .levy import LevyModel, TimeGrid, euler_step

DEFAULT_NODE_BUDGET = 1_000_000


def _brownian_branches(scheme: str, d: int, dt: float):
    if scheme == "binomial":
        levels = np.array([-1, 1])
        probs = np.array([0.5, 0.5])
        size = np.sqrt(dt)
    elif scheme == "trinomial":
        levels = np.array([-1, 0, 1])
        probs = np.array([1 / 6, 2 / 3, 1 / 6])
        size = np.sqrt(3 * dt)
    else:
        raise DomainError(f"unknown lattice scheme {scheme!r}")
    codes, p = [], []
    for combo in itertools.product(range(len(levels)), repeat=d):
        codes.append(levels[list(combo)])
        p.append(np.prod(probs[list(combo)]))
    codes = np.array(codes, dtype=np.int64).reshape(-1, d)
    return codes, np.array(p), codes * size


@dataclass
class LatticeModel:
    """Layered transition structure; layer ``i`` holds the nodes at ``t_i``.

    ``children[i][a, b]`` is the node reached from node ``a`` of layer ``i``
    along branch ``b``; the branch carries probability ``branch_prob[b]``,
    Brownian increment ``branch_dW[b]`` and jump counts ``branch_dN[b]``.
    ``parent[i]``/``parent_branch[i]`` name one way to reach each node of
    layer ``i+1``, which is enough to re-propagate path functionals on
    additive (recombining) lattices and exact on trees.
    """

    grid: TimeGrid
    X: list
    children: list
    parent: list
    parent_branch: list
    branch_prob: np.ndarray
    branch_dW: np.ndarray
    branch_dN: np.ndarray
    rates: np.ndarray
    node_prob: list
    recombining: bool
    scheme: str = "binomial"
    inserted: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def n_branches(self) -> int:
        return self.branch_prob.size

    @property
    def n_nodes(self) -> int:
        return sum(x.shape[0] for x in self.X)

    def layer_size(self, i: int) -> int:
        return self.X[i].shape[0]

    def state(self, i: int) -> np.ndarray:
        return self.X[i]

    def weights(self, i: int) -> np.ndarray:
        return self.node_prob[i]

    @property
    def branch_dmu(self) -> np.ndarray:
        """Compensated jump increments per branch, ``(B, M)``."""
        return self.branch_dN - self.rates * self.grid.dt

    def cond_expect(self, i: int, v_next: np.ndarray) -> np.ndarray:
        """``E[v_{i+1} | node at layer i]``; ``v_next`` has leading axis ``N_{i+1}``."""
        v = np.asarray(v_next)[self.children[i]]
        return np.einsum("ab...,b->a...", v, self.branch_prob)

    def project(self, i: int, y_next: np.ndarray):
        """``(E[Y], E[Y ΔW]/dt, E[Y Δμ̃_j]/(λ_j dt))`` at every node of layer ``i``."""
        dt = self.grid.dt
        yc = y_next[self.children[i]] * self.branch_prob
        e = yc.sum(axis=1)
        z = yc @ self.branch_dW / dt
        if self.rates.size:
            psi = (yc @ self.branch_dmu) / (self.rates * dt)
        else:
            psi = np.zeros((e.size, 0))
        return e, z, psi, None

    def jump_arrivals(self, i: int):
        """``(parent, child, mark)`` triples for every jump edge from layer ``i``."""
        par, chi, mk = [], [], []
        N = self.layer_size(i)
        for b in range(self.n_branches):
            js = np.nonzero(self.branch_dN[b])[0]
            for j in js:
                par.append(np.arange(N))
                chi.append(self.children[i][:, b])
                mk.append(np.full(N, j))
        if not par:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty
        return np.concatenate(par), np.concatenate(chi), np.concatenate(mk)

    def step_noise(self, i: int):
        """Parent index and the noise along the recorded parent edge, per node of layer ``i+1``."""
        b = self.parent_branch[i]
        return self.parent[i], self.branch_dW[b], self.branch_dN[b]


def _tree_size(B: int, n: int) -> int:
    return sum(B**i for i in range(n + 1))


def build_lattice(model: LevyModel, grid: TimeGrid, x0, scheme: str = "binomial",
                  node_budget: int = DEFAULT_NODE_BUDGET, recombine: bool | None = None) -> LatticeModel:
    """Enumerate the lattice of ``model`` on ``grid`` started at ``x0``.

    Raises ``CapacityError`` when the total node count would exceed
    ``node_budget`` and ``DomainError`` when ``Σ λ_j dt >= 1``.
    """
    dt = grid.dt
    d, M = model.dim_w, model.marks.n_marks
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (model.dim_x,):
        raise DomainError(f"x0 must have shape ({model.dim_x},), got {x0.shape}")
    rates = model.marks.rate_array
    p_none = 1.0 - rates.sum() * dt
    if p_none <= 0:
        raise DomainError(f"total jump probability per step {rates.sum() * dt} must be < 1; refine dt")

    bcodes, bprob, bdW = _brownian_branches(scheme, d, dt)
    jcodes = np.vstack([np.zeros((1, M), dtype=np.int64), np.eye(M, dtype=np.int64)])
    jprob = np.concatenate([[p_none], rates * dt])
    nb, nj = len(bprob), M + 1
    codes = np.zeros((nb * nj, d + M), dtype=np.int64)
    prob = np.zeros(nb * nj)
    dW = np.zeros((nb * nj, d))
    dN = np.zeros((nb * nj, M), dtype=np.int64)
    for a in range(nb):
        for c in range(nj):
            k = a * nj + c
            codes[k, :d] = bcodes[a]
            codes[k, d:] = jcodes[c]
            prob[k] = bprob[a] * jprob[c]
            dW[k] = bdW[a]
            dN[k] = jcodes[c]
    B = prob.size
    recombining = model.additive if recombine is None else bool(recombine)
    if not recombining and _tree_size(B, grid.n_steps) > node_budget:
        raise CapacityError(f"tree with {B} branches and {grid.n_steps} steps needs "
                            f"{_tree_size(B, grid.n_steps)} nodes, budget {node_budget}")

    times = grid.times
    X = [x0[None, :].copy()]
    P = [np.ones(1)]
    S = np.zeros((1, d + M), dtype=np.int64)
    children, parent, pbranch = [], [], []
    total = 1
    for i in range(grid.n_steps):
        N = X[i].shape[0]
        if recombining:
            cand = (S[:, None, :] + codes[None]).reshape(N * B, -1)
            S, first, inv = np.unique(cand, axis=0, return_index=True, return_inverse=True)
            ch = inv.reshape(N, B)
            par, br = first // B, first % B
        else:
            ch = np.arange(N * B).reshape(N, B)
            par = np.repeat(np.arange(N), B)
            br = np.tile(np.arange(B), N)
        total += par.size
        if total > node_budget:
            raise CapacityError(f"lattice exceeds node budget {node_budget} at step {i}")
        X.append(euler_step(model, times[i], X[i][par], dt, dW[br], dN[br]))
        P.append(np.bincount(ch.ravel(), weights=(P[i][:, None] * prob).ravel(), minlength=par.size))
        children.append(ch)
        parent.append(par)
        pbranch.append(br)
    return LatticeModel(grid, X, children, parent, pbranch, prob, dW, dN, rates, P, recombining, scheme,
                        meta={"model": model.name, "x0": x0.tolist()})


def repropagate(lattice: LatticeModel, model: LevyModel, start: int, x_start: np.ndarray) -> list:
    """State layers from ``start`` on when layer ``start`` is replaced by ``x_start``."""
    X = list(lattice.X)
    X[start] = x_start
    times = lattice.grid.times
    for i in range(start, lattice.n_steps):
        par, dW, dN = lattice.step_noise(i)
        X[i + 1] = euler_step(model, times[i], X[i][par], lattice.grid.dt, dW, dN)
    return X


def lattice_insert_jump(lattice: LatticeModel, model: LevyModel, s: float, mark_index: int) -> LatticeModel:
    """The lattice on ``ω^{s,z}``: every node at the node nearest ``s`` jumps by ``γ(t, X, z)``.

    Only valid when re-propagation along recorded parents is exact, i.e. on
    trees or on recombining lattices of additive models.
    """
    if lattice.recombining and not model.additive:
        raise DomainError("jump insertion on a recombining lattice needs an additive model")
    if not 0 <= mark_index < model.marks.n_marks:
        raise DomainError(f"no mark with index {mark_index}")
    i = lattice.grid.node_index(s)
    x_i = lattice.X[i] + model.jump(lattice.grid.times[i], lattice.X[i], mark_index)
    X = repropagate(lattice, model, i, x_i)
    out = LatticeModel(lattice.grid, X, lattice.children, lattice.parent, lattice.parent_branch,
                       lattice.branch_prob, lattice.branch_dW, lattice.branch_dN, lattice.rates,
                       lattice.node_prob, lattice.recombining, lattice.scheme,
                       lattice.inserted + ((i, int(mark_index)),), dict(lattice.meta))
    return out
