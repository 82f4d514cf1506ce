"""Measures integrated over the uncertain parameters.

The objective GP ``F(x, u)`` induces the mean process ``Z(x) = E_U F(x, U)``
and the constraint model ``G(x, u, p)`` induces the feasibility margin
``C(x) = 1 - alpha - P_U(G(x, U, p) <= 0 for all p)``.  Integrals over
``rho_U`` are replaced by a weighted node set (:class:`UncertaintyQuadrature`).

Two constraint models are supported behind one interface: ``l`` independent
scalar GPs (:class:`IndependentConstraints`) and one output-as-input GP with
a level index (:class:`MultiOutputConstraints`).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import gp
from .mvn import _phi_ratio, mvn_cdf

# QMC size for the many small CDFs evaluated inside acquisition loops
BATCH_CDF_POINTS = 64
BATCH_CDF_SHIFTS = 2
# relative jitter added to trajectory covariances (escalated per matrix on failure)
BATCH_JITTER = 1e-6


# ---------------------------------------------------------------------------
# Quadrature over the uncertain space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UncertaintyQuadrature:
    """Nodes ``(M, m)`` in ``S_U`` with probability weights summing to one."""

    nodes: np.ndarray
    weights: np.ndarray
    scheme: str = "mc"

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != nodes.shape[0]:
            raise ValueError("one weight per node is required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @classmethod
    def monte_carlo(cls, problem, n_nodes: int, rng_seed) -> UncertaintyQuadrature:
        """``n_nodes`` equally weighted draws from ``rho_U``."""
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        return cls(problem.sample_u(rng, n_nodes), np.full(n_nodes, 1.0 / n_nodes), "mc")

    @classmethod
    def tensor_gauss(cls, u_bounds, n_per_dim: int) -> UncertaintyQuadrature:
        """Tensor Gauss-Legendre rule for a uniform ``rho_U``; intended for m <= 2."""
        b = np.atleast_2d(np.asarray(u_bounds, dtype=float))
        if b.shape[0] > 2:
            raise ValueError("tensor quadrature is limited to m <= 2")
        t, w = leggauss(n_per_dim)
        axes = [0.5 * (lo + hi) + 0.5 * (hi - lo) * t for lo, hi in b]
        mesh = np.meshgrid(*axes, indexing="ij")
        wmesh = np.meshgrid(*([w / 2.0] * b.shape[0]), indexing="ij")
        weights = np.prod([wm.ravel() for wm in wmesh], axis=0)
        return cls(np.column_stack([m.ravel() for m in mesh]), weights / weights.sum(), "tensor")


@dataclass(frozen=True)
class FeasibilityEstimate:
    """PoF from trajectories together with the analytic ``E[C]``."""

    pof: float
    expected_c: float
    n_traj: int
    n_u: int


def joint_points(x, nodes: np.ndarray) -> np.ndarray:
    """Stack ``x`` with every node: ``(M, d + m)``."""
    x = np.asarray(x, dtype=float).ravel()
    return np.column_stack([np.repeat(x[None, :], nodes.shape[0], axis=0), nodes])


def _node_grid(X: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """All ``(x_c, u_j)`` pairs, c-major: ``(c * M, d + m)``."""
    c, M = X.shape[0], nodes.shape[0]
    return np.column_stack([np.repeat(X, M, axis=0), np.tile(nodes, (c, 1))])


# ---------------------------------------------------------------------------
# Constraint models
# ---------------------------------------------------------------------------


def _joint_over_nodes(model: gp.GpModel, X: np.ndarray, nodes: np.ndarray):
    """Posterior of ``G(x_c, u_j, p)`` jointly over nodes and levels, per ``x_c``.

    Returns mean ``(c, M, l)`` and covariance ``(c, M, l, M, l)``.  The prior
    part is identical for every ``x_c`` because only the u-part varies.
    """
    k = model.kernel
    sc = model.scaling
    l = model.n_levels
    T = k.level_matrix()
    c, M = X.shape[0], nodes.shape[0]
    qn = sc.x(_node_grid(X, nodes))
    prior = k.variance * gp.se_factor(qn[:M], qn[:M], k.lengthscales)  # (M, M)
    corr = k.variance * gp.se_factor(model._xn, qn, k.lengthscales)  # (n, c*M)
    mean = np.empty((c, M, l))
    Vs = []
    for p in range(l):
        Kdq = corr * T[model.levels, p][:, None] if model.n_data else corr
        mean[:, :, p] = (sc.y_mean[p] + sc.y_std[p] * (k.prior_mean + Kdq.T @ model.alpha_weights)).reshape(c, M)
        V = gp._solve_lower(model, Kdq)
        Vs.append(np.ascontiguousarray(V.reshape(-1, c, M).transpose(1, 2, 0)))  # (c, M, n)
    cov = np.empty((c, M, l, M, l))
    for p in range(l):
        for q in range(p, l):
            blk = prior * T[p, q] - Vs[p] @ np.swapaxes(Vs[q], 1, 2)
            blk *= sc.y_std[p] * sc.y_std[q]
            cov[:, :, p, :, q] = blk
            if q != p:
                cov[:, :, q, :, p] = np.swapaxes(blk, 1, 2)
    return mean, cov


class IndependentConstraints:
    """``l`` separately trained scalar constraint GPs."""

    def __init__(self, models: Sequence[gp.GpModel]):
        if not models:
            raise ValueError("at least one constraint model is required")
        for m in models:
            if m.is_multi_output:
                raise ValueError("independent constraints must be scalar GPs")
        self.models = list(models)

    @property
    def l(self) -> int:
        return len(self.models)

    def prior_variances(self) -> np.ndarray:
        """Prior variance of each constraint in output units, ``(l,)``."""
        return np.array([m.kernel.variance * m.scaling.y_std[0] ** 2 for m in self.models])

    def joint_over_nodes(self, X, nodes):
        X = np.atleast_2d(X)
        c, M, l = X.shape[0], nodes.shape[0], self.l
        mean = np.empty((c, M, l))
        cov = np.zeros((c, M, l, M, l))
        for p, m in enumerate(self.models):
            mu, K = _joint_over_nodes(m, X, nodes)
            mean[:, :, p] = mu[:, :, 0]
            cov[:, :, p, :, p] = K[:, :, 0, :, 0]
        return mean, cov

    def blocks(self, XU):
        XU = np.atleast_2d(XU)
        mean = np.empty((XU.shape[0], self.l))
        cov = np.zeros((XU.shape[0], self.l, self.l))
        for p, m in enumerate(self.models):
            mu, var = gp.predict(m, XU, full_cov=False)
            mean[:, p] = mu
            cov[:, p, p] = var
        return mean, cov

    def cross_cov(self, A, B):
        """Posterior covariance between all levels at A and at B: ``(a, l, b, l)``."""
        A, B = np.atleast_2d(A), np.atleast_2d(B)
        out = np.zeros((A.shape[0], self.l, B.shape[0], self.l))
        for p, m in enumerate(self.models):
            out[:, p, :, p] = gp.posterior_cov(m, A, B)
        return out


class MultiOutputConstraints:
    """One output-as-input GP over ``(x, u, p)``.

    With a single constraint the level index carries no information and a
    scalar GP is accepted.
    """

    def __init__(self, model: gp.GpModel):
        self.model = model

    @property
    def l(self) -> int:
        return self.model.n_levels

    def prior_variances(self) -> np.ndarray:
        """Prior variance of each constraint in output units, ``(l,)``."""
        k = self.model.kernel
        return k.variance * np.diag(k.level_matrix()) * self.model.scaling.y_std ** 2

    def joint_over_nodes(self, X, nodes):
        return _joint_over_nodes(self.model, np.atleast_2d(X), nodes)

    def blocks(self, XU):
        return gp.predict_blocks(self.model, np.atleast_2d(XU))

    def cross_cov(self, A, B):
        A, B = np.atleast_2d(A), np.atleast_2d(B)
        l = self.l
        la = np.tile(np.arange(l), A.shape[0])
        lb = np.tile(np.arange(l), B.shape[0])
        K = gp.posterior_cov(self.model, np.repeat(A, l, axis=0), np.repeat(B, l, axis=0), la, lb)
        return K.reshape(A.shape[0], l, B.shape[0], l)


# ---------------------------------------------------------------------------
# Mean-objective process Z
# ---------------------------------------------------------------------------


def _z_parts(model: gp.GpModel, quad: UncertaintyQuadrature):
    """Quantities of the separable SE kernel shared by every x query."""
    if model.is_multi_output:
        raise ValueError("the objective model must be a scalar GP")
    k = model.kernel
    m = quad.dim
    d = k.input_dim - m
    sc = model.scaling
    un = (quad.nodes - sc.lower[d:]) / (sc.upper[d:] - sc.lower[d:])
    w = quad.weights
    ku_nodes = gp.se_factor(un, un, k.lengthscales[d:])
    prior = k.variance * float(w @ ku_nodes @ w)
    b = w @ gp.se_factor(un, model._xn[:, d:], k.lengthscales[d:]) if model.n_data else np.zeros(0)
    return d, prior, b


def _z_kbar(model, X, d, b):
    k = model.kernel
    xn = (X - model.scaling.lower[:d]) / (model.scaling.upper[:d] - model.scaling.lower[:d])
    return k.variance * gp.se_factor(xn, model._xn[:, :d], k.lengthscales[:d]) * b  # (q, n)


def z_process(objective_gp: gp.GpModel, quad: UncertaintyQuadrature, x_queries,
              full_cov: bool = True):
    """Mean and covariance of ``Z(x) = sum_j w_j F(x, u_j)`` at ``x_queries``.

    With the product SE kernel the quadrature factorizes as
    ``sum_j w_j k((x,u_j), d_i) = sigma^2 k_x(x, x_i) b_i`` with
    ``b_i = sum_j w_j k_u(u_j, u_i)``, so the cost is independent of the
    number of nodes once ``b`` is known.

    Returns
    -------
    mean : ndarray, shape (q,)
    cov : ndarray, shape (q, q), or the variances ``(q,)`` if not ``full_cov``.
    """
    model = objective_gp
    d, prior, b = _z_parts(model, quad)
    X = np.asarray(x_queries, dtype=float).reshape(-1, d)
    k = model.kernel
    s = model.scaling.y_std[0]
    if model.n_data:
        kbar = _z_kbar(model, X, d, b)
        mean_n = k.prior_mean + kbar @ model.alpha_weights
        V = gp._solve_lower(model, kbar.T)
    else:
        mean_n = np.full(X.shape[0], k.prior_mean)
        V = np.zeros((0, X.shape[0]))
    mean = model.scaling.y_mean[0] + s * mean_n
    xn = (X - model.scaling.lower[:d]) / (model.scaling.upper[:d] - model.scaling.lower[:d])
    if full_cov:
        cov = prior * gp.se_factor(xn, xn, k.lengthscales[:d]) - V.T @ V
        return mean, 0.5 * (cov + cov.T) * s**2
    var = np.maximum(prior - np.sum(V**2, axis=0), 0.0) * s**2
    return mean, var


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------


def pof_normals(n_traj: int, n_nodes: int, n_levels: int, rng_seed) -> np.ndarray:
    """Standard normals for trajectory draws, reused across x (common random numbers)."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.standard_normal((n_traj, n_nodes * n_levels))


def _batched_factor(cov: np.ndarray, jitter: np.ndarray) -> np.ndarray:
    """Cholesky factors of a stack of covariances plus ``diag(jitter)``.

    The jitter depends on the level only, never on the matrix, so each factor
    is independent of the batch it is in and the factor of a leading block is
    the leading block of the factor.  Matrices that still fail are escalated
    one at a time.
    """
    try:
        return np.linalg.cholesky(cov + np.diag(jitter))
    except np.linalg.LinAlgError:
        return np.stack([_escalated_factor(C, jitter) for C in cov])


def _escalated_factor(C: np.ndarray, jitter: np.ndarray) -> np.ndarray:
    factor = 1.0
    while BATCH_JITTER * factor <= gp.JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(C + np.diag(jitter * factor))
        except np.linalg.LinAlgError:
            factor *= 10.0
    raise gp.IllConditionedError(f"Cholesky failed up to relative jitter {gp.JITTER_MAX:g}")


def _trajectories(constraints, X, nodes, normals):
    """Joint draws ``(c, N, M, l)`` of the constraints at ``X`` over ``nodes``.

    Only the leading ``M * l`` columns of ``normals`` are used, so draws over
    the first ``k`` nodes of a set equal the leading part of the draws over
    the whole set.
    """
    M, l = nodes.shape[0], constraints.l
    mean, cov = constraints.joint_over_nodes(X, nodes)
    c = mean.shape[0]
    jitter = BATCH_JITTER * np.tile(constraints.prior_variances(), M)
    Lf = _batched_factor(cov.reshape(c, M * l, M * l), jitter)
    G = mean.reshape(c, 1, M * l) + normals[:, :M * l] @ np.swapaxes(Lf, 1, 2)
    return G.reshape(c, -1, M, l), mean, cov


def _integrated_cdf(mean_nodes, cov_nodes, weights, rng_seed=0,
                    n_points=BATCH_CDF_POINTS, n_shifts=BATCH_CDF_SHIFTS):
    """``sum_j w_j P(G(x, u_j) <= 0)`` per x from node blocks ``(c, M, l)``, ``(c, M, l, l)``."""
    l = mean_nodes.shape[-1]
    if l == 1:
        return mvn_cdf(mean_nodes, cov_nodes, 0.0, check_psd=False) @ weights
    if np.all(cov_nodes[..., ~np.eye(l, dtype=bool)] == 0):
        sd = np.sqrt(np.maximum(np.diagonal(cov_nodes, axis1=-2, axis2=-1), 0.0))
        return np.prod(_phi_ratio(-mean_nodes, sd), axis=-1) @ weights
    p = mvn_cdf(mean_nodes, cov_nodes, 0.0, rng_seed=rng_seed, n_points=n_points, n_shifts=n_shifts)
    return p @ weights


def _node_blocks(cov: np.ndarray) -> np.ndarray:
    """Per-node ``l x l`` blocks ``(c, M, l, l)`` of a joint ``(c, M, l, M, l)`` covariance."""
    M = cov.shape[1]
    idx = np.arange(M)
    return cov[:, idx, :, idx, :].transpose(1, 0, 2, 3)


def pof_batch(constraints, X, quad: UncertaintyQuadrature, alpha: float, normals: np.ndarray,
              chunk: int = 16, cdf_seed=0, with_ec: bool = True):
    """PoF and ``E[C]`` for each row of ``X`` under shared trajectory normals.

    Returns
    -------
    pof : ndarray (n,)
    expected_c : ndarray (n,), NaN unless ``with_ec``
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pof = np.empty(X.shape[0])
    ec = np.full(X.shape[0], np.nan)
    for s in range(0, X.shape[0], chunk):
        G, mean, cov = _trajectories(constraints, X[s:s + chunk], quad.nodes, normals)
        c = mean.shape[0]
        feas = np.all(G <= 0.0, axis=-1)  # (c, N, M)
        ratio = feas @ quad.weights
        pof[s:s + c] = np.mean(ratio >= 1.0 - alpha - 1e-12, axis=1)
        if with_ec:
            ec[s:s + c] = 1.0 - alpha - _integrated_cdf(mean, _node_blocks(cov), quad.weights, cdf_seed)
    return pof, ec


def pof_upper_bound(constraints, X, quad: UncertaintyQuadrature, alpha: float, normals: np.ndarray,
                    n_nodes: int, chunk: int = 64) -> np.ndarray:
    """Upper bound on :func:`pof_batch` from the draws over the first ``n_nodes`` nodes.

    A trajectory whose infeasible weight on the leading nodes already
    exceeds ``alpha`` is infeasible whatever happens on the other nodes.  The
    leading draws equal those of the full computation (same normals, same
    leading factor block); a small tolerance absorbs rounding differences.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = min(int(n_nodes), quad.size)
    rest = 1.0 - quad.weights[:k].sum()
    tol = 1e-9 * np.sqrt(constraints.prior_variances())
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        G, _, _ = _trajectories(constraints, X[s:s + chunk], quad.nodes[:k], normals)
        feas = np.all(G <= tol, axis=-1)
        upper = feas @ quad.weights[:k] + rest
        out[s:s + G.shape[0]] = np.mean(upper >= 1.0 - alpha - 1e-9, axis=1)
    return out


def pof_trajectories(constraints, x, quad: UncertaintyQuadrature, n_traj: int, alpha: float,
                     rng_seed=0, normals: np.ndarray | None = None) -> FeasibilityEstimate:
    """Trajectory estimate of ``P(C(x) <= 0)``.

    ``n_traj`` joint draws of ``G(x, u_j, p)`` over all nodes and levels are
    counted as feasible when the weighted share of nodes with every
    constraint satisfied reaches ``1 - alpha``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if normals is None:
        normals = pof_normals(n_traj, quad.size, constraints.l, rng_seed)
    pof, ec = pof_batch(constraints, np.atleast_2d(x), quad, alpha, normals)
    return FeasibilityEstimate(float(pof[0]), float(ec[0]), normals.shape[0], quad.size)


def integrated_cdf(constraints, X, quad: UncertaintyQuadrature, cdf_seed=0, chunk: int = 64,
                   n_points=BATCH_CDF_POINTS, n_shifts=BATCH_CDF_SHIFTS) -> np.ndarray:
    """``sum_j w_j P(G(x, u_j, p) <= 0 for all p)`` for each row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    M, l = quad.size, constraints.l
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        Xc = X[s:s + chunk]
        mean, cov = constraints.blocks(_node_grid(Xc, quad.nodes))
        c = Xc.shape[0]
        out[s:s + c] = _integrated_cdf(mean.reshape(c, M, l), cov.reshape(c, M, l, l),
                                       quad.weights, cdf_seed, n_points, n_shifts)
    return out


def expected_c(constraints, x, quad: UncertaintyQuadrature, alpha: float, cdf_seed=0,
               n_points: int = 4096, n_shifts: int = 8):
    """``E[C(x)] = 1 - alpha - sum_j w_j Phi_l(0; m_G(x, u_j), K_G(x, u_j))``.

    Accepts one point or a batch of rows.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    val = 1.0 - alpha - integrated_cdf(constraints, X, quad, cdf_seed, n_points=n_points,
                                       n_shifts=n_shifts)
    return float(val[0]) if np.ndim(x) <= 1 else val


@dataclass(frozen=True)
class Incumbent:
    value: float
    x: np.ndarray
    index: int
    fallback: bool


def _node_probabilities(constraints, X, nodes, cdf_seed) -> np.ndarray:
    """``P(G(x_c, u_j, p) <= 0 for all p)`` per candidate and node: ``(c, M)``."""
    c, M, l = X.shape[0], nodes.shape[0], constraints.l
    mean, cov = constraints.blocks(_node_grid(X, nodes))
    mean, cov = mean.reshape(c, M, l), cov.reshape(c, M, l, l)
    if l > 1 and np.all(cov[..., ~np.eye(l, dtype=bool)] == 0):
        sd = np.sqrt(np.maximum(np.diagonal(cov, axis1=-2, axis2=-1), 0.0))
        return np.prod(_phi_ratio(-mean, sd), axis=-1)
    return mvn_cdf(mean, cov, 0.0, rng_seed=cdf_seed, n_points=BATCH_CDF_POINTS,
                   n_shifts=BATCH_CDF_SHIFTS, check_psd=l > 1)


def feasible_mask(constraints, X, quad: UncertaintyQuadrature, alpha: float, cdf_seed=0,
                  node_block: int = 100) -> np.ndarray:
    """``E[C(x)] <= 0`` for each row of ``X`` with early rejection.

    The weighted deficit ``sum_j w_j (1 - P_j)`` only grows as nodes are added,
    so a candidate is rejected as soon as its partial deficit exceeds
    ``alpha``.  The result equals the full test.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    alive = np.arange(X.shape[0])
    deficit = np.zeros(X.shape[0])
    for s in range(0, quad.size, node_block):
        if alive.size == 0:
            break
        sl = slice(s, s + node_block)
        p = _node_probabilities(constraints, X[alive], quad.nodes[sl], cdf_seed)
        deficit[alive] += (1.0 - p) @ quad.weights[sl]
        alive = alive[deficit[alive] <= alpha]
    ok = np.zeros(X.shape[0], dtype=bool)
    ok[alive] = True
    return ok


def incumbent_feasible_min(objective_gp, constraints, candidates, quad: UncertaintyQuadrature,
                           alpha: float, cdf_seed=0, chunk: int = 32) -> Incumbent:
    """Smallest ``m_Z`` over candidates with ``E[C] <= 0``.

    Candidates are visited in increasing ``m_Z`` order so that feasibility is
    only tested until the first feasible one (see :func:`feasible_mask`).  If
    none is feasible the candidate with the largest integrated CDF term is
    returned and ``fallback`` is set.
    """
    X = np.atleast_2d(np.asarray(candidates, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("candidate set is empty")
    mz, _ = z_process(objective_gp, quad, X, full_cov=False)
    order = np.argsort(mz, kind="stable")
    for s in range(0, X.shape[0], chunk):
        idx = order[s:s + chunk]
        ok = np.flatnonzero(feasible_mask(constraints, X[idx], quad, alpha, cdf_seed))
        if ok.size:
            i = int(idx[ok[0]])
            return Incumbent(float(mz[i]), X[i].copy(), i, False)
    cdf = integrated_cdf(constraints, X, quad, cdf_seed, chunk=max(1, 8192 // quad.size))
    i = int(np.argmax(cdf))
    return Incumbent(float(mz[i]), X[i].copy(), i, True)


# ---------------------------------------------------------------------------
# PoF error study
# ---------------------------------------------------------------------------


def true_pof(problem, X, u_samples) -> np.ndarray:
    """Share of u-samples with every true constraint satisfied, per row of X."""
    X = np.atleast_2d(X)
    n, N = X.shape[0], u_samples.shape[0]
    g = problem.g(np.repeat(X, N, axis=0), np.tile(u_samples, (n, 1)))
    return np.all(g <= 0, axis=1).reshape(n, N).mean(axis=1)


def pof_error(problem, constraints, X, u_samples: np.ndarray) -> np.ndarray:
    """``|PoF_model(x) - PoF_true(x)|`` with both averaged over ``u_samples``."""
    n = u_samples.shape[0]
    quad = UncertaintyQuadrature(u_samples, np.full(n, 1.0 / n))
    model = integrated_cdf(constraints, X, quad, chunk=max(1, 8000 // n))
    return np.abs(model - true_pof(problem, X, u_samples))


def pof_error_study(problem, n_train: int = 30, n_test: int = 400, n_mc: int = 1000,
                    n_reps: int = 10, rng_seed=0, n_restarts: int = 20,
                    out_dir: str | Path | None = None):
    """Compare PoF errors of independent and multi-output constraint models.

    Each repetition draws ``n_train`` maximin-LHS joint points for each
    constraint, fits both models on them, and measures
    ``|PoF_GP(x) - PoF_true(x)|`` on ``n_test`` random design points.  The
    model PoF is the u-average of the joint Gaussian CDF,
    ``(1/N) sum_j P(G(x, u_j) <= 0)``, over the same ``n_mc`` u-samples used
    for the true value.

    Returns
    -------
    dict with ``per_point`` rows ``(rep, x..., err_ind, err_mo)`` and
    ``per_rep`` rows ``(rep, mean_err_ind, mean_err_mo)``.
    """
    from .doe import maximin_lhs, scale_unit

    per_point, per_rep = [], []
    jb = problem.joint_bounds
    D, l = jb.shape[0], problem.l
    for rep in range(n_reps):
        rng = np.random.default_rng([int(rng_seed), rep])
        # one design per constraint: with shared inputs a separable multi-output
        # model predicts each constraint from its own data only
        XU = [scale_unit(maximin_lhs(n_train, D, rng), jb) for _ in range(l)]
        G = [problem.g(P[:, :problem.d], P[:, problem.d:], p) for p, P in enumerate(XU)]
        ind = IndependentConstraints([
            gp.fit(gp.default_template(D), XU[p], G[p], bounds=jb, n_restarts=n_restarts,
                   rng_seed=rng) for p in range(l)])
        lv = np.repeat(np.arange(l), n_train)
        mo = MultiOutputConstraints(gp.fit(gp.default_template(D, l), np.vstack(XU), np.concatenate(G),
                                           lv, bounds=jb, n_restarts=n_restarts, rng_seed=rng))
        lo, hi = problem.x_bounds[:, 0], problem.x_bounds[:, 1]
        Xt = lo + rng.random((n_test, problem.d)) * (hi - lo)
        us = problem.sample_u(rng, n_mc)
        err_ind = pof_error(problem, ind, Xt, us)
        err_mo = pof_error(problem, mo, Xt, us)
        for i in range(n_test):
            per_point.append((rep, *Xt[i].tolist(), float(err_ind[i]), float(err_mo[i])))
        per_rep.append((rep, float(err_ind.mean()), float(err_mo.mean())))
    if out_dir is not None:
        write_pof_error_csv(out_dir, problem.d, per_point, per_rep)
    return {"per_point": per_point, "per_rep": per_rep}


def write_pof_error_csv(out_dir, d: int, per_point, per_rep) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "pof_error_points.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# schema", "pof-error-points", 1])
        w.writerow(["rep", *[f"x{i + 1}" for i in range(d)], "error_independent", "error_multioutput"])
        for r in per_point:
            w.writerow([r[0], *[f"{v:.17g}" for v in r[1:]]])
    with open(out / "pof_error_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# schema", "pof-error-summary", 1])
        w.writerow(["rep", "mean_error_independent", "mean_error_multioutput"])
        for r in per_rep:
            w.writerow([r[0], f"{r[1]:.17g}", f"{r[2]:.17g}"])
