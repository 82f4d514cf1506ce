"""Benchmark chance-constrained problems and their true-function metrics.

A problem is any object satisfying :class:`ProblemDefinition`: vectorized
objective and constraint callables over ``(x, u)`` batches, box bounds, and a
sampler for the uncertain parameters.  User problems can be loaded by the CLI
with ``--problem package.module:factory`` where ``factory()`` returns one.
"""

from __future__ import annotations

import importlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

REPORTING_SEED = 20240917


@dataclass(frozen=True)
class ProblemDefinition:
    """``min_x E_U f(x, U)`` s.t. ``P_U(g_p(x, U) <= 0 for all p) >= 1 - alpha``.

    ``objective(X, U)`` and each ``constraints[p](X, U)`` take ``(n, d)`` and
    ``(n, m)`` arrays and return ``(n,)`` arrays.  ``u_distribution`` draws
    ``(n, m)`` samples from ``rho_U``; the default is uniform on ``u_bounds``.
    """

    name: str
    objective: Callable[[np.ndarray, np.ndarray], np.ndarray]
    constraints: Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]]
    x_bounds: np.ndarray
    u_bounds: np.ndarray
    alpha: float = 0.05
    u_distribution: Callable[[np.random.Generator, int], np.ndarray] | None = field(
        default=None, repr=False)

    def __post_init__(self):
        for name in ("x_bounds", "u_bounds"):
            b = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if b.shape[1] != 2 or not np.all(np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
                raise ValueError(f"{name} must be finite (dim, 2) boxes")
            object.__setattr__(self, name, b)
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def d(self) -> int:
        return self.x_bounds.shape[0]

    @property
    def m(self) -> int:
        return self.u_bounds.shape[0]

    @property
    def l(self) -> int:
        return len(self.constraints)

    @property
    def joint_bounds(self) -> np.ndarray:
        return np.vstack([self.x_bounds, self.u_bounds])

    def sample_u(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.u_distribution is not None:
            return np.asarray(self.u_distribution(rng, n), dtype=float).reshape(n, self.m)
        lo, hi = self.u_bounds[:, 0], self.u_bounds[:, 1]
        return lo + rng.random((n, self.m)) * (hi - lo)

    def f(self, X, U) -> np.ndarray:
        X, U = self._xu(X, U)
        return np.asarray(self.objective(X, U), dtype=float).reshape(-1)

    def g(self, X, U, p: int | None = None) -> np.ndarray:
        """Constraint values, ``(n, l)`` or ``(n,)`` when ``p`` (0-based) is given."""
        X, U = self._xu(X, U)
        if p is not None:
            return np.asarray(self.constraints[p](X, U), dtype=float).reshape(-1)
        return np.column_stack([np.asarray(c(X, U), dtype=float).reshape(-1)
                                for c in self.constraints])

    def _xu(self, X, U):
        X = np.asarray(X, dtype=float).reshape(-1, self.d)
        U = np.asarray(U, dtype=float).reshape(-1, self.m)
        if X.shape[0] == 1 and U.shape[0] > 1:
            X = np.repeat(X, U.shape[0], axis=0)
        if U.shape[0] == 1 and X.shape[0] > 1:
            U = np.repeat(U, X.shape[0], axis=0)
        return X, U


# ---------------------------------------------------------------------------
# Analytic test cases
# ---------------------------------------------------------------------------


def _f2(X, U):
    return (X[:, 0] - 10.0) ** 3 + (U[:, 0] - 20.0) ** 3


def _g2_1(X, U):
    return -((X[:, 0] - 5.0) ** 2) - (U[:, 0] - 5.0) ** 2 + 500.0


def _g2_2(X, U):
    return (X[:, 0] - 6.0) ** 2 + (U[:, 0] - 5.0) ** 2 - 9000.0


def problem_2d() -> ProblemDefinition:
    """One design variable, one uniform uncertain parameter, two constraints."""
    return ProblemDefinition("analytic-2d", _f2, (_g2_1, _g2_2),
                             x_bounds=[[13.0, 100.0]], u_bounds=[[0.0, 100.0]], alpha=0.05)


def _f4(X, U):
    x1, x2 = X[:, 0], X[:, 1]
    u1, u2 = U[:, 0], U[:, 1]
    return 5 * (x1**2 + x2**2) - (u1**2 + u2**2) + x1 * (u2 - u1 + 5) + x2 * (u1 - u2 + 3)


def _g4_1(X, U):
    return -X[:, 0] ** 2 + 5 * X[:, 1] - U[:, 0] + U[:, 1] ** 2 - 1


def _g4_2(X, U):
    return _g4_1(X, U) * (X[:, 0] + 5) / 5 - U[:, 0] - 1


def problem_4d() -> ProblemDefinition:
    """Two design variables, two uniform uncertain parameters, two linked constraints."""
    return ProblemDefinition("analytic-4d", _f4, (_g4_1, _g4_2),
                             x_bounds=[[-5.0, 5.0]] * 2, u_bounds=[[-5.0, 5.0]] * 2, alpha=0.05)


PROBLEMS = {"analytic-2d": problem_2d, "analytic-4d": problem_4d}


def get_problem(name: str) -> ProblemDefinition:
    """Look up a built-in problem or load ``module:factory``."""
    if name in PROBLEMS:
        return PROBLEMS[name]()
    if ":" in name:
        module, attr = name.split(":", 1)
        obj = getattr(importlib.import_module(module), attr)
        prob = obj() if callable(obj) and not isinstance(obj, ProblemDefinition) else obj
        if not isinstance(prob, ProblemDefinition):
            raise TypeError(f"{name} did not produce a ProblemDefinition")
        return prob
    raise KeyError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)} or module:factory")


# ---------------------------------------------------------------------------
# True metrics
# ---------------------------------------------------------------------------


@dataclass
class TrueMetrics:
    """Fixed-sample Monte Carlo estimates on the true functions."""

    problem: ProblemDefinition
    u_samples: np.ndarray
    reference_x: np.ndarray | None = None
    reference_value: float | None = None

    def mean_objective(self, X, chunk: int = 200) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.problem.d)
        out = np.empty(X.shape[0])
        for i in range(0, X.shape[0], chunk):
            out[i:i + chunk] = self._per_x(X[i:i + chunk], lambda XX, UU: self.problem.f(XX, UU)).mean(axis=1)
        return out

    def pof(self, X, chunk: int = 200) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.problem.d)
        out = np.empty(X.shape[0])
        for i in range(0, X.shape[0], chunk):
            feas = self._per_x(X[i:i + chunk], lambda XX, UU: np.all(self.problem.g(XX, UU) <= 0, axis=1))
            out[i:i + chunk] = feas.mean(axis=1)
        return out

    def is_feasible(self, X) -> np.ndarray:
        return self.pof(X) >= 1.0 - self.problem.alpha

    def _per_x(self, X, fn):
        n, M = X.shape[0], self.u_samples.shape[0]
        XX = np.repeat(X, M, axis=0)
        UU = np.tile(self.u_samples, (n, 1))
        return np.asarray(fn(XX, UU), dtype=float).reshape(n, M)


def true_metrics(problem: ProblemDefinition, n_mc: int = 10_000, rng_seed=REPORTING_SEED,
                 reference: bool = True) -> TrueMetrics:
    """Reporting metrics with a fixed u-sample; attaches the stored reference optimum."""
    if n_mc < 1000:
        raise ValueError("n_mc must be >= 1000")
    rng = np.random.default_rng(rng_seed)
    tm = TrueMetrics(problem, problem.sample_u(rng, n_mc))
    if reference:
        ref = stored_reference(problem.name)
        if ref is not None:
            tm.reference_x = np.asarray(ref["x"], dtype=float)
            tm.reference_value = float(ref["value"])
    return tm


def design_grid(problem: ProblemDefinition, n_per_dim: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, n_per_dim) for lo, hi in problem.x_bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def reference_optimum(problem: ProblemDefinition, n_grid: int, n_mc: int,
                      rng_seed=REPORTING_SEED) -> dict:
    """Exhaustive enumeration of the chance-constrained optimum on a design grid.

    ``n_grid`` is the number of points per design dimension.
    """
    tm = TrueMetrics(problem, problem.sample_u(np.random.default_rng(rng_seed), n_mc))
    X = design_grid(problem, n_grid)
    pof = tm.pof(X, chunk=max(1, 2_000_000 // n_mc))
    z = tm.mean_objective(X, chunk=max(1, 2_000_000 // n_mc))
    feas = pof >= 1.0 - problem.alpha
    if not np.any(feas):
        raise RuntimeError("no feasible grid point")
    idx = np.flatnonzero(feas)[np.argmin(z[feas])]
    step = (problem.x_bounds[:, 1] - problem.x_bounds[:, 0]) / max(n_grid - 1, 1)
    return {"problem": problem.name, "x": X[idx].tolist(), "value": float(z[idx]),
            "pof": float(pof[idx]), "pof_se": float(np.sqrt(pof[idx] * (1 - pof[idx]) / n_mc)),
            "grid_step": step.tolist(), "n_grid": n_grid, "n_mc": n_mc, "seed": rng_seed}


def stored_reference(name: str) -> dict | None:
    text = resources.files("ccbo").joinpath("data/reference_optima.json").read_text()
    return json.loads(text).get(name)
