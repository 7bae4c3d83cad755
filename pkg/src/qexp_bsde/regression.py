"""Least-squares Monte-Carlo projector on simulated paths.

At step ``i`` the conditional expectations of ``Y_{i+1}``, ``Y_{i+1} ΔW`` and
``Y_{i+1} Δμ̃_j`` are estimated jointly: ``Y_{i+1}`` is regressed on the
columns ``[φ(X_i), φ(X_i) ΔW_k, φ_j(X_i) Δμ̃_j]``.  Because ``ΔW`` and
``Δμ̃`` have conditional mean zero, the first block estimates ``E_i[Y_{i+1}]``
and the coefficients of the other blocks are ``Z`` and ``ψ`` themselves
(``E_i[Y ΔW] = Z dt``, ``E_i[Y Δμ̃_j] = ψ_j λ_j dt``), with less variance
than three separate regressions.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConditioningError, DomainError
from .levy import PathEnsemble

log = logging.getLogger(__name__)


def n_monomials(q: int, degree: int) -> int:
    """Number of monomials of total degree ``<= degree`` in ``q`` variables."""
    return math.comb(q + degree, degree)


def _exponents(q: int, degree: int) -> np.ndarray:
    rows = []
    for deg in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(q), deg):
            e = np.zeros(q, dtype=np.int64)
            for c in combo:
                e[c] += 1
            rows.append(e)
    out = np.zeros((len(rows), q), dtype=np.int64)
    for r, e in enumerate(rows):
        out[r] = e
    return out


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomials of total degree ``degree`` in the standardized state."""

    degree: int = 2
    include_time: bool = False
    min_jumps_per_column: int = 5

    def __post_init__(self):
        if self.degree < 0:
            raise DomainError(f"degree must be >= 0, got {self.degree}")

    def dimension(self, q: int) -> int:
        return n_monomials(q + int(self.include_time), self.degree)

    def check(self, q: int, n_paths: int):
        """Conditioning guard: basis dimension below ``n_paths / 10``."""
        dim = self.dimension(q)
        if not dim < n_paths / 10:
            raise ConditioningError(-1, f"basis dimension {dim} needs more than {10 * dim} paths, got {n_paths}")
        return dim

    def to_config(self) -> dict:
        return {"degree": self.degree, "include_time": self.include_time}


@dataclass(frozen=True)
class StepFit:
    """Coefficients of one regression step; ``predict`` evaluates at new states."""

    mean: np.ndarray
    scale: np.ndarray
    active: np.ndarray
    exponents: np.ndarray
    coef_e: np.ndarray
    coef_z: np.ndarray
    coef_psi: list  # per mark: coefficient vector over the full basis, the constant only, or None

    def features(self, state: np.ndarray) -> np.ndarray:
        s = (state[:, self.active] - self.mean) / self.scale
        return np.prod(s[:, None, :] ** self.exponents[None], axis=2)

    def predict(self, state: np.ndarray):
        state = np.atleast_2d(state)
        phi = self.features(state)
        e = phi @ self.coef_e
        z = phi @ self.coef_z
        psi = np.zeros((state.shape[0], len(self.coef_psi)))
        for j, c in enumerate(self.coef_psi):
            if c is not None:
                psi[:, j] = phi[:, : c.size] @ c
        return e, z, psi


class RegressionProjector:
    """Projector over a path ensemble, same interface as ``LatticeModel``.

    ``features`` defaults to the forward state; Malliavin solves pass the
    augmented state ``(X, DX)``.  With ``prune=True`` basis functions that are
    linearly dependent on the sample (for example powers of a coordinate
    taking only two values) are dropped by pivoted QR instead of raising.
    """

    def __init__(self, paths: PathEnsemble, basis: RegressionBasis = RegressionBasis(), features=None,
                 prune: bool = False):
        self.paths = paths
        self.grid = paths.grid
        self.basis = basis
        self.dW = paths.dW
        self.dN = paths.dN
        self.rates = paths.marks.rate_array
        self.dmu = paths.dN - self.rates * self.grid.dt
        self.feat = paths.X if features is None else features
        self.prune = prune
        q = self.feat.shape[2] + int(basis.include_time)
        basis.check(q, paths.n_paths)
        self.fits: list = [None] * self.grid.n_steps

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def n_paths(self) -> int:
        return self.paths.n_paths

    def layer_size(self, i: int) -> int:
        return self.n_paths

    def state(self, i: int) -> np.ndarray:
        return self.paths.X[:, i]

    def weights(self, i: int) -> np.ndarray:
        return np.full(self.n_paths, 1.0 / self.n_paths)

    def _feature_state(self, i):
        s = self.feat[:, i]
        if self.basis.include_time:
            s = np.column_stack([s, np.full(s.shape[0], self.grid.times[i])])
        return s

    def _basis(self, i):
        s = self._feature_state(i)
        mean = s.mean(axis=0)
        scale = s.std(axis=0)
        active = scale > 1e-12 * (1 + np.abs(mean))
        exps = _exponents(int(active.sum()), self.basis.degree)
        s_act = (s[:, active] - mean[active]) / scale[active]
        phi = np.prod(s_act[:, None, :] ** exps[None], axis=2)
        if self.prune and phi.shape[1] > 1:
            _, r, piv = scipy.linalg.qr(phi, mode="economic", pivoting=True)
            diag = np.abs(np.diag(r))
            keep = np.sort(piv[: int(np.sum(diag > 1e-9 * diag[0]))])
            if keep.size < phi.shape[1]:
                log.debug("step %d: pruned %d dependent basis functions", i, phi.shape[1] - keep.size)
                phi, exps = phi[:, keep], exps[keep]
        return phi, mean[active], scale[active], active, exps

    def _lstsq(self, i, A, rhs):
        coef, _, rank, sv = np.linalg.lstsq(A, rhs, rcond=None)
        if rank == A.shape[1]:
            return coef
        if not self.prune:
            raise ConditioningError(i, f"design of {A.shape[1]} columns has rank {rank}")
        _, r, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        keep = np.sort(piv[: int(np.sum(diag > 1e-9 * diag[0]))])
        coef = np.zeros((A.shape[1],) + np.shape(rhs)[1:])
        coef[keep] = np.linalg.lstsq(A[:, keep], rhs, rcond=None)[0]
        return coef

    def project(self, i: int, y_next: np.ndarray):
        phi, mean, scale, active, exps = self._basis(i)
        P = phi.shape[1]
        dW = self.dW[:, i]
        cols = [phi] + [phi * dW[:, [k]] for k in range(dW.shape[1])]
        psi_cols = []
        n_min = self.basis.min_jumps_per_column
        for j in range(self.rates.size):
            hits = int(np.count_nonzero(self.dN[:, i, j]))
            if hits >= n_min * P:
                width = P
            elif hits > 0:
                width = 1
            else:
                log.warning("step %d: no sampled jumps of mark %d, psi set to 0", i, j)
                psi_cols.append(0)
                continue
            psi_cols.append(width)
            cols.append(phi[:, :width] * self.dmu[:, i, [j]])
        A = np.hstack(cols)
        coef = self._lstsq(i, A, y_next)
        coef_e = coef[:P]
        d = dW.shape[1]
        coef_z = coef[P:P * (1 + d)].reshape(d, P).T
        pos = P * (1 + d)
        coef_psi = []
        for j, width in enumerate(psi_cols):
            if width == 0:
                coef_psi.append(None)
            else:
                coef_psi.append(coef[pos:pos + width])
                pos += width
        fit = StepFit(mean, scale, active, exps, coef_e, coef_z, coef_psi)
        self.fits[i] = fit
        e = phi @ coef_e
        z = phi @ coef_z
        psi = np.zeros((self.n_paths, self.rates.size))
        for j, c in enumerate(coef_psi):
            if c is not None:
                psi[:, j] = phi[:, : c.size] @ c
        return e, z, psi, fit

    def cond_expect(self, i: int, v_next: np.ndarray) -> np.ndarray:
        """Regression estimate of ``E_i[v_{i+1}]`` on the step-``i`` basis."""
        phi = self._basis(i)[0]
        return phi @ self._lstsq(i, phi, v_next)

    def jump_arrivals(self, i: int):
        p, j = np.nonzero(self.dN[:, i])
        return p, p, j
