"""Ready-made forward/backward problems and a one-call solve helper.

A problem bundles a forward model, a driver, a terminal function of ``X_T``
(with its gradient) and a time grid.  Several presets carry closed-form
value functions ``u(t, x)`` used as oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .drivers import (DriverSpec, cole_hopf_driver, exp_utility_driver, linear_driver,
                      lipschitz_driver, qexp_saturating_driver, zero_driver)
from .errors import ConfigError, DomainError
from .lattice import DEFAULT_NODE_BUDGET, build_lattice
from .levy import LevyModel, MarkSpec, TimeGrid, additive_model, linear_model, simulate_paths
from .regression import RegressionBasis
from .solver import BsdeSolution, PicardOptions, solve_lattice, solve_regression


@dataclass(frozen=True)
class BsdeProblem:
    model: LevyModel
    driver: DriverSpec
    terminal: Callable
    grid: TimeGrid
    x0: np.ndarray
    terminal_grad: Callable | None = None
    xi_bound: float | None = None
    value_function: Callable | None = None  # closed-form u(t, x) when known
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def lattice(self, scheme="binomial", node_budget=DEFAULT_NODE_BUDGET):
        return build_lattice(self.model, self.grid, self.x0, scheme, node_budget)

    def paths(self, n_paths: int, seed: int):
        return simulate_paths(self.model, self.grid, self.x0, n_paths, seed)

    def restart(self, node: int, x0=None) -> "BsdeProblem":
        """The same problem on the tail grid from ``node``, started at ``x0``."""
        x0 = self.x0 if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
        return replace(self, grid=self.grid.tail(node), x0=x0)

    def with_terminal(self, terminal: Callable, name: str | None = None) -> "BsdeProblem":
        return replace(self, terminal=terminal, terminal_grad=None, value_function=None,
                       name=name or self.name)

    def with_driver(self, driver: DriverSpec) -> "BsdeProblem":
        return replace(self, driver=driver, value_function=None)

    def to_config(self) -> dict:
        return {"preset": self.name, "params": dict(self.params)}


def solve_problem(problem: BsdeProblem, backend="lattice", n_paths=10_000, seed=0,
                  basis: RegressionBasis = RegressionBasis(), opts: PicardOptions = PicardOptions(),
                  scheme="binomial", node_budget=DEFAULT_NODE_BUDGET) -> BsdeSolution:
    if backend == "lattice":
        sol = solve_lattice(problem.lattice(scheme, node_budget), problem.driver, problem.terminal, opts)
    elif backend == "regression":
        sol = solve_regression(problem.paths(n_paths, seed), problem.driver, problem.terminal, basis, opts)
    else:
        raise DomainError(f"unknown backend {backend!r}")
    sol.meta["problem"] = problem.name
    return sol


def _marks(marks):
    return marks if isinstance(marks, MarkSpec) else MarkSpec.from_config(marks)


def _ident(X):
    return X[:, 0]


def _ident_grad(X):
    return np.ones_like(X)


# --------------------------------------------------------------------------
# presets


def zero_smoke_problem(c=1.0, T=1.0, n_steps=10, vol=1.0):
    """``f ≡ 0`` and constant ``ξ = c``: ``Y ≡ c``, ``Z ≡ 0``."""
    model = additive_model(vol=vol)
    return BsdeProblem(model, zero_driver(), lambda X: np.full(X.shape[0], float(c)), TimeGrid(0.0, T, n_steps),
                       np.zeros(1), lambda X: np.zeros_like(X), abs(c), lambda t, x: np.full(len(x), float(c)),
                       "zero_smoke", {"c": c, "T": T, "n_steps": n_steps, "vol": vol})


def identity_martingale_problem(T=1.0, n_steps=50, vol=1.0, marks=None, x0=0.0):
    """``X = x0 + vol W + Σ e (N - λ t)``, ``f ≡ 0``, ``ξ = X_T``: ``u(t, x) = x``."""
    marks = _marks(marks if marks is not None else {"sizes": [0.5], "rates": [1.0]})
    model = additive_model(vol=vol, marks=marks)
    return BsdeProblem(model, zero_driver(marks=marks), _ident, TimeGrid(0.0, T, n_steps), np.array([x0]),
                       _ident_grad, None, lambda t, x: np.asarray(x)[:, 0], "identity_martingale",
                       {"T": T, "n_steps": n_steps, "vol": vol, "marks": marks.to_config(), "x0": x0})


def linear_forward_problem(alpha=0.5, vol=1.0, marks=None, T=1.0, n_steps=50, x0=1.0):
    """``dX = α X dt + vol dW + X e dμ̃``, ``f ≡ 0``, ``ξ = X_T``.

    ``u(t, x) = e^{α(T-t)} x`` up to the Euler discretization.
    """
    marks = _marks(marks if marks is not None else {"sizes": [0.5], "rates": [1.0]})
    model = linear_model(alpha=alpha, vol=vol, marks=marks, jump="multiplicative")
    return BsdeProblem(model, zero_driver(marks=marks), _ident, TimeGrid(0.0, T, n_steps), np.array([x0]),
                       _ident_grad, None, lambda t, x: math.exp(alpha * (T - t)) * np.asarray(x)[:, 0],
                       "linear_forward", {"alpha": alpha, "vol": vol, "marks": marks.to_config(), "T": T,
                                          "n_steps": n_steps, "x0": x0})


def cole_hopf_problem(gamma=1.0, T=1.0, n_steps=100, x0=0.0):
    """``X = W``, ``f = (γ/2)|z|^2``, ``ξ = X_T``: ``u(t, x) = x + γ(T-t)/2``."""
    model = additive_model(vol=1.0)
    return BsdeProblem(model, cole_hopf_driver(gamma), _ident, TimeGrid(0.0, T, n_steps), np.array([x0]),
                       _ident_grad, None, lambda t, x: np.asarray(x)[:, 0] + 0.5 * gamma * (T - t),
                       "cole_hopf", {"gamma": gamma, "T": T, "n_steps": n_steps, "x0": x0})


def linear_ode_problem(alpha=1.0, T=1.0, n_steps=100, xi=1.0):
    """``f = α y``, ``ξ = const``, no noise: ``Y_0 = ξ e^{αT}``."""
    model = additive_model(vol=0.0)
    return BsdeProblem(model, linear_driver(alpha=alpha), lambda X: np.full(X.shape[0], float(xi)),
                       TimeGrid(0.0, T, n_steps), np.zeros(1), lambda X: np.zeros_like(X), abs(xi),
                       lambda t, x: np.full(len(x), xi * math.exp(alpha * (T - t))), "linear_ode",
                       {"alpha": alpha, "T": T, "n_steps": n_steps, "xi": xi})


def linear_driver_problem(alpha=0.5, b=0.3, T=1.0, n_steps=10, vol=1.0, x0=0.5, power=2):
    """``f = α y + b z``, ``ξ = X_T^power``, ``X = x0 + vol W`` (no jumps)."""
    model = additive_model(vol=vol)
    return BsdeProblem(model, linear_driver(alpha=alpha, b=b), lambda X: X[:, 0] ** power,
                       TimeGrid(0.0, T, n_steps), np.array([x0]), lambda X: power * X ** (power - 1),
                       None, None, "linear_driver",
                       {"alpha": alpha, "b": b, "T": T, "n_steps": n_steps, "vol": vol, "x0": x0, "power": power})


def saturating_problem(gamma=1.0, T=1.0, n_steps=50, beta=0.0, l=0.0, xi_scale=1.0, marks=None, x0=1.0):
    """Q_exp driver equal to its own upper structure bound; ``ξ = xi_scale · sin(X_T)``."""
    marks = _marks(marks if marks is not None else {"sizes": [-0.5], "rates": [1.0]})
    model = additive_model(vol=1.0, marks=marks)
    drv = replace(qexp_saturating_driver(gamma=gamma, beta=beta, l=l, marks=marks), xi_bound=abs(xi_scale))
    return BsdeProblem(model, drv, lambda X: xi_scale * np.sin(X[:, 0]), TimeGrid(0.0, T, n_steps),
                       np.array([x0]), lambda X: xi_scale * np.cos(X), abs(xi_scale), None, "saturating",
                       {"gamma": gamma, "T": T, "n_steps": n_steps, "beta": beta, "l": l, "xi_scale": xi_scale,
                        "marks": marks.to_config(), "x0": x0})


def exp_utility_problem(gamma=1.0, theta=0.5, T=0.5, n_steps=50, marks=None, x0=0.0, xi_scale=1.0):
    """Exponential-utility driver with ``ξ = xi_scale · cos(X_T)``."""
    marks = _marks(marks if marks is not None else {"sizes": [0.5], "rates": [1.0]})
    model = additive_model(vol=1.0, marks=marks)
    drv = replace(exp_utility_driver(gamma=gamma, theta=theta, marks=marks), xi_bound=abs(xi_scale))
    return BsdeProblem(model, drv, lambda X: xi_scale * np.cos(X[:, 0]), TimeGrid(0.0, T, n_steps),
                       np.array([x0]), lambda X: -xi_scale * np.sin(X), abs(xi_scale), None, "exp_utility",
                       {"gamma": gamma, "theta": theta, "T": T, "n_steps": n_steps, "marks": marks.to_config(),
                        "x0": x0, "xi_scale": xi_scale})


def lipschitz_problem(L=3.0, a=0.5, c=0.5, T=0.5, n_steps=50, marks=None, x0=0.0):
    """Globally Lipschitz driver with ``ξ = sin(X_T)``."""
    marks = _marks(marks if marks is not None else {"sizes": [0.5], "rates": [1.0]})
    model = additive_model(vol=1.0, marks=marks)
    drv = lipschitz_driver(L=L, a=a, c=c, marks=marks)
    return BsdeProblem(model, drv, lambda X: np.sin(X[:, 0]), TimeGrid(0.0, T, n_steps), np.array([x0]),
                       lambda X: np.cos(X), 1.0, None, "lipschitz",
                       {"L": L, "a": a, "c": c, "T": T, "n_steps": n_steps, "marks": marks.to_config(), "x0": x0})


PROBLEM_PRESETS = {
    "zero_smoke": zero_smoke_problem,
    "identity_martingale": identity_martingale_problem,
    "linear_forward": linear_forward_problem,
    "cole_hopf": cole_hopf_problem,
    "linear_ode": linear_ode_problem,
    "linear_driver": linear_driver_problem,
    "saturating": saturating_problem,
    "exp_utility": exp_utility_problem,
    "lipschitz": lipschitz_problem,
}


def problem_from_config(cfg: dict, path: str = "problem") -> BsdeProblem:
    if not isinstance(cfg, dict) or "preset" not in cfg:
        raise ConfigError(path, "expected an object with a 'preset' field")
    name = cfg["preset"]
    if name not in PROBLEM_PRESETS:
        raise ConfigError(f"{path}.preset", f"unknown problem preset {name!r}; known: {sorted(PROBLEM_PRESETS)}")
    params = dict(cfg.get("params", {}))
    try:
        return PROBLEM_PRESETS[name](**params)
    except TypeError as exc:
        raise ConfigError(f"{path}.params", str(exc)) from exc
    except DomainError as exc:
        raise ConfigError(f"{path}.params", str(exc)) from exc
