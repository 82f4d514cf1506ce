"""Acquisition criteria and their minimizers over candidate sets.

The design point is chosen by the expected feasible improvement (EFI) of the
mean process ``Z``.  The uncertain parameters are then chosen to minimize
one-step-ahead variance proxies at that design point:

* ``S_f(u)``: expected improvement variance after observing ``f(x_targ, u)``;
* ``S_g(u[, p])``: integrated Bernoulli variance ``sum_j w_j p_j (1 - p_j)``
  of the feasibility indicator after observing the constraints (all of them,
  or only level ``p``) at ``(x_targ, u)``;
* ``S(u) = S_f(u) * S_g(u)`` for the variants that share one ``u``.

Every estimator is deterministic given the context seed: trajectory normals
and the ``m_Z`` samples are common random numbers across candidates.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import gp
from .mvn import _phi_ratio, mvn_cdf
from .robust import (BATCH_CDF_POINTS, BATCH_CDF_SHIFTS, UncertaintyQuadrature, integrated_cdf,
                     joint_points, pof_batch, pof_normals, pof_upper_bound, z_process)

log = logging.getLogger(__name__)

_SQRT_2PI = np.sqrt(2.0 * np.pi)
# relative threshold below which a pending point carries no information
_NO_INFO = 1e-8
# leading u-nodes used for the PoF upper bound that prunes the design search
BOUND_NODES = 20


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def expected_improvement(m, sigma, z_min_feas):
    """``E[(z - Y)^+]`` for ``Y ~ N(m, sigma^2)``; broadcasts over arrays."""
    m, sigma = np.asarray(m, dtype=float), np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    diff = z_min_feas - m
    pos = sigma > 0
    s = np.where(pos, sigma, 1.0)
    with np.errstate(over="ignore"):
        t = diff / s
        ei = diff * ndtr(t) + s * np.exp(-0.5 * t**2) / _SQRT_2PI
    out = np.where(pos, np.maximum(ei, 0.0), np.maximum(diff, 0.0))
    return float(out) if out.ndim == 0 else out


def improvement_variance(m, sigma, z_min_feas):
    """``Var[(z - Y)^+]`` for ``Y ~ N(m, sigma^2)``.

    ``EI (z - m - EI) + sigma^2 Phi((z - m) / sigma)``, zero when ``sigma == 0``.
    """
    m, sigma = np.asarray(m, dtype=float), np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    ei = expected_improvement(m, sigma, z_min_feas)
    diff = z_min_feas - m
    pos = sigma > 0
    s = np.where(pos, sigma, 1.0)
    with np.errstate(over="ignore"):
        v = ei * (diff - ei) + s**2 * ndtr(diff / s)
    out = np.where(pos, np.maximum(v, 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Context
# ---------------------------------------------------------------------------


@dataclass
class AcquisitionContext:
    """Everything the criteria of one iteration depend on.

    ``constraints`` is an :class:`~ccbo.robust.IndependentConstraints` or a
    :class:`~ccbo.robust.MultiOutputConstraints`.  ``seed`` drives every
    random number used by the criteria.
    """

    objective_gp: gp.GpModel
    constraints: object
    quad: UncertaintyQuadrature
    alpha: float
    z_min_feas: float
    candidate_x: np.ndarray
    candidate_u: np.ndarray
    n_traj: int = 200
    n_samples: int = 500
    seed: int | list = 0
    cdf_points: int = BATCH_CDF_POINTS
    cdf_shifts: int = BATCH_CDF_SHIFTS
    pof_chunk: int = 16
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not np.isfinite(self.z_min_feas):
            raise ValueError("z_min_feas must be finite")
        self.candidate_x = np.atleast_2d(np.asarray(self.candidate_x, dtype=float))
        self.candidate_u = np.atleast_2d(np.asarray(self.candidate_u, dtype=float))
        if self.candidate_x.shape[0] == 0 or self.candidate_u.shape[0] == 0:
            raise ValueError("candidate sets must be non-empty")

    def _rng(self, stream: int) -> np.random.Generator:
        base = list(np.atleast_1d(self.seed).astype(np.int64))
        return np.random.default_rng(base + [stream])

    @cached_property
    def pof_normals(self) -> np.ndarray:
        return pof_normals(self.n_traj, self.quad.size, self.constraints.l, self._rng(1))

    @cached_property
    def z_normals(self) -> np.ndarray:
        return self._rng(2).standard_normal(self.n_samples)

    @property
    def cdf_seed(self) -> int:
        return int(self._rng(3).integers(2**31))

    def z_marginals(self, X):
        mz, var = z_process(self.objective_gp, self.quad, X, full_cov=False)
        return mz, np.sqrt(var)

    def cdf(self, mean, cov):
        """Batched ``P(Y <= 0)`` for ``Y ~ N(mean, cov)`` with ``(..., l)`` blocks."""
        return node_probability(mean, cov, self.cdf_seed, self.cdf_points, self.cdf_shifts)


def node_probability(mean, cov, cdf_seed=0, n_points=BATCH_CDF_POINTS, n_shifts=BATCH_CDF_SHIFTS):
    l = mean.shape[-1]
    off = cov[..., ~np.eye(l, dtype=bool)]
    if l == 1 or np.all(off == 0):
        sd = np.sqrt(np.maximum(np.diagonal(cov, axis1=-2, axis2=-1), 0.0))
        return np.prod(_phi_ratio(-mean, sd), axis=-1)
    return mvn_cdf(mean, cov, 0.0, rng_seed=cdf_seed, n_points=n_points, n_shifts=n_shifts)


# ---------------------------------------------------------------------------
# Design point
# ---------------------------------------------------------------------------


def efi(ctx: AcquisitionContext, x):
    """Expected feasible improvement ``EI(x) * P(C(x) <= 0)`` at one or more x."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    mz, sz = ctx.z_marginals(X)
    ei = expected_improvement(mz, sz, ctx.z_min_feas)
    pof, _ = pof_batch(ctx.constraints, X, ctx.quad, ctx.alpha, ctx.pof_normals,
                       chunk=ctx.pof_chunk, with_ec=False)
    out = np.atleast_1d(ei) * pof
    return float(out[0]) if np.ndim(x) <= 1 else out


@dataclass(frozen=True)
class TargetSelection:
    index: int
    x: np.ndarray
    efi: float
    ei: float
    pof: float
    n_evaluated: int
    fallback: bool


def select_x_targ(ctx: AcquisitionContext) -> TargetSelection:
    """Maximize EFI over the candidate designs.

    Each candidate has the upper bound ``EI * PoF_ub``, where ``PoF_ub``
    counts the trajectories not yet ruled out on the first ``BOUND_NODES``
    nodes.  Candidates are visited by decreasing bound and the scan stops once
    the next bound is below the best EFI found, so the result equals an
    exhaustive sweep.  Ties go to the lowest candidate index.  When every EFI
    is zero the candidate with the largest PoF is returned (ties broken by the
    integrated CDF term) and ``fallback`` is set.
    """
    X = ctx.candidate_x
    n = X.shape[0]
    mz, sz = ctx.z_marginals(X)
    ei = np.atleast_1d(expected_improvement(mz, sz, ctx.z_min_feas))
    bound = ei.copy()
    live = np.flatnonzero(ei > 0)
    if live.size > ctx.pof_chunk and BOUND_NODES < ctx.quad.size:
        bound[live] *= pof_upper_bound(ctx.constraints, X[live], ctx.quad, ctx.alpha, ctx.pof_normals,
                                       BOUND_NODES)
    order = np.lexsort((np.arange(n), -bound))
    pof = np.full(n, np.nan)
    best_val, best_i = -np.inf, -1
    pos = n_eval = 0
    while pos < n:
        if best_val > 0 and bound[order[pos]] < best_val:
            break
        idx = order[pos:pos + ctx.pof_chunk]
        pos += idx.size
        if best_val > 0:
            idx = idx[bound[idx] >= best_val]
        pof[idx], _ = pof_batch(ctx.constraints, X[idx], ctx.quad, ctx.alpha, ctx.pof_normals,
                                chunk=ctx.pof_chunk, with_ec=False)
        n_eval += idx.size
        for i in idx:
            v = ei[i] * pof[i]
            if v > best_val or (v == best_val and i < best_i):
                best_val, best_i = v, int(i)
    if best_val > 0:
        return TargetSelection(best_i, X[best_i].copy(), float(best_val), float(ei[best_i]),
                               float(pof[best_i]), n_eval, False)
    # every EFI is zero: max PoF, then max integrated CDF term
    top = np.flatnonzero(pof == pof.max())
    cdf = integrated_cdf(ctx.constraints, X[top], ctx.quad, ctx.cdf_seed)
    i = int(top[np.lexsort((top, -cdf))[0]])
    log.info("all EFI values are zero; falling back to the max-PoF candidate %d", i)
    return TargetSelection(i, X[i].copy(), 0.0, float(ei[i]), float(pof[i]), n_eval, True)


# ---------------------------------------------------------------------------
# Uncertain parameters
# ---------------------------------------------------------------------------


def _as_u(ctx, u) -> np.ndarray:
    return np.asarray(u, dtype=float).reshape(-1, ctx.quad.dim)


def _sf_parts(ctx: AcquisitionContext, x_targ, u):
    """Current ``m_Z, sigma_Z`` and, per u, the reduction ``c / sqrt(v)`` and ``v``."""
    model = ctx.objective_gp
    U = _as_u(ctx, u)
    mz, var_z = z_process(model, ctx.quad, np.atleast_2d(x_targ), full_cov=False)
    mz, var_z = float(mz[0]), float(var_z[0])
    P = joint_points(x_targ, U)
    cross = gp.posterior_cov(model, joint_points(x_targ, ctx.quad.nodes), P)  # (M, n_u)
    c = ctx.quad.weights @ cross
    _, v = gp.predict(model, P, full_cov=False)
    floor = _NO_INFO * model.kernel.variance * model.scaling.y_std[0] ** 2
    info = v > floor
    shift = np.where(info, np.abs(c) / np.sqrt(np.where(info, v, 1.0)), 0.0)
    shift = np.minimum(shift, np.sqrt(var_z))
    return mz, var_z, shift


def sf(ctx: AcquisitionContext, x_targ, u_f):
    """Expected improvement variance at ``x_targ`` after observing ``F(x_targ, u_f)``.

    Under the one-step update, ``m_Z`` becomes ``N(m_Z, s^2)`` with
    ``s^2 = (sum_j w_j k(x,u_j; x,u_f))^2 / k(x,u_f; x,u_f)`` and the variance
    of ``Z`` drops deterministically to ``sigma_Z^2 - s^2``.  The returned value
    is the average of ``psi_VI`` over ``n_samples`` draws of the updated mean,
    i.e. the expected variance of the improvement once ``f(x_targ, u_f)`` is
    known.  Vectorized over rows of ``u_f``.
    """
    mz, var_z, shift = _sf_parts(ctx, x_targ, u_f)
    sd_new = np.sqrt(np.maximum(var_z - shift**2, 0.0))
    m_new = mz + shift[:, None] * ctx.z_normals[None, :]
    vals = improvement_variance(m_new, sd_new[:, None], ctx.z_min_feas).mean(axis=1)
    return float(vals[0]) if np.ndim(u_f) <= 1 and _as_u(ctx, u_f).shape[0] == 1 else vals


def improvement_variance_decomposition(ctx: AcquisitionContext, x_targ, u_f):
    """Law-of-total-variance split of the current improvement variance.

    Returns ``(E[psi_VI], Var[psi_EI])`` over the updated-mean samples; the
    two terms add up to the current ``Var(I(x_targ))`` up to sampling error,
    and the first one is :func:`sf`.
    """
    mz, var_z, shift = _sf_parts(ctx, x_targ, u_f)
    sd_new = np.sqrt(np.maximum(var_z - shift**2, 0.0))[:, None]
    m_new = mz + shift[:, None] * ctx.z_normals[None, :]
    e_vi = improvement_variance(m_new, sd_new, ctx.z_min_feas).mean(axis=1)
    v_ei = expected_improvement(m_new, sd_new, ctx.z_min_feas).var(axis=1)
    return e_vi, v_ei


def _sg_state(ctx: AcquisitionContext, x_targ, U):
    cm = ctx.constraints
    Q = joint_points(x_targ, ctx.quad.nodes)
    P = joint_points(x_targ, U)
    mean_q, cov_q = cm.blocks(Q)  # (M, l), (M, l, l)
    cross = cm.cross_cov(Q, P)  # (M, l, n_u, l)
    _, cov_p = cm.blocks(P)  # (n_u, l, l)
    floor = _NO_INFO * max(float(np.max(np.diagonal(cov_q, axis1=-2, axis2=-1))), 1e-300)
    floor = max(floor, _NO_INFO * _prior_scale(cm))
    return mean_q, cov_q, cross, cov_p, floor


def _prior_scale(cm) -> float:
    return float(np.max(cm.prior_variances()))


def _bernoulli_variance(ctx, mean_q, cov):
    p = ctx.cdf(np.broadcast_to(mean_q, cov.shape[:-1]), cov)
    return (p * (1.0 - p)) @ ctx.quad.weights


def sg_levels(ctx: AcquisitionContext, x_targ, u_g):
    """Rank-1 ``S_g`` for every candidate ``u`` and every level: ``(n_u, l)``."""
    U = _as_u(ctx, u_g)
    mean_q, cov_q, cross, cov_p, floor = _sg_state(ctx, x_targ, U)
    l = cov_q.shape[-1]
    out = np.empty((U.shape[0], l))
    for p in range(l):
        v = cov_p[:, p, p]
        info = v > floor
        cvec = np.transpose(cross[:, :, :, p], (2, 0, 1))  # (n_u, M, l)
        scale = np.where(info, 1.0 / np.where(info, v, 1.0), 0.0)
        upd = cov_q[None] - scale[:, None, None, None] * cvec[..., :, None] * cvec[..., None, :]
        out[:, p] = _bernoulli_variance(ctx, mean_q, upd)
    return out


def sg(ctx: AcquisitionContext, x_targ, u_g, p: int | None = None):
    """One-step-ahead integrated Bernoulli variance of the feasibility indicator.

    With ``p`` (0-based) only ``G(x_targ, u_g, p)`` is added (rank-1 update);
    with ``p=None`` all levels at ``(x_targ, u_g)`` are added (rank-l update).
    Vectorized over rows of ``u_g``.
    """
    U = _as_u(ctx, u_g)
    if p is not None:
        vals = sg_levels(ctx, x_targ, U)[:, p]
    else:
        mean_q, cov_q, cross, cov_p, floor = _sg_state(ctx, x_targ, U)
        w, V = np.linalg.eigh(cov_p)
        inv_w = np.where(w > floor, 1.0 / np.where(w > floor, w, 1.0), 0.0)
        pinv = (V * inv_w[:, None, :]) @ np.swapaxes(V, -1, -2)  # (n_u, l, l)
        C = np.transpose(cross, (2, 0, 1, 3))  # (n_u, M, l, l)
        upd = cov_q[None] - C @ pinv[:, None] @ np.swapaxes(C, -1, -2)
        vals = _bernoulli_variance(ctx, mean_q, upd)
    return float(vals[0]) if U.shape[0] == 1 and np.ndim(u_g) <= 1 else vals


def current_bernoulli_variance(ctx: AcquisitionContext, x_targ) -> float:
    """Integrated Bernoulli variance at ``x_targ`` with no update."""
    mean_q, cov_q = ctx.constraints.blocks(joint_points(x_targ, ctx.quad.nodes))
    return float(_bernoulli_variance(ctx, mean_q, cov_q))


def current_improvement_variance(ctx: AcquisitionContext, x_targ) -> float:
    mz, sz = ctx.z_marginals(np.atleast_2d(x_targ))
    return float(improvement_variance(mz[0], sz[0], ctx.z_min_feas))


def proxy_s(ctx: AcquisitionContext, x_targ, u):
    """``S(u) = S_f(u) * S_g(u)`` with the rank-l constraint update."""
    return sf(ctx, x_targ, u) * sg(ctx, x_targ, u)


@dataclass(frozen=True)
class USelection:
    u_f: np.ndarray
    u_g: np.ndarray
    p: int | None
    index_f: int
    index_g: int
    values_f: np.ndarray = field(repr=False)
    values_g: np.ndarray = field(repr=False)


def select_u(ctx: AcquisitionContext, x_targ, mode: str) -> USelection:
    """Choose the uncertain parameters to evaluate next.

    ``mode="common"``: one ``u`` minimizing :func:`proxy_s`, used for ``f``
    and all constraints (``p`` is ``None``).  ``mode="split"``: ``u_f``
    minimizes :func:`sf` and ``(u_g, p)`` jointly minimizes the rank-1
    :func:`sg` over candidates and levels.  Ties go to the lowest index.
    """
    U = ctx.candidate_u
    s_f = np.atleast_1d(sf(ctx, x_targ, U))
    if mode == "common":
        s_g = np.atleast_1d(sg(ctx, x_targ, U))
        s = s_f * s_g
        i = int(np.argmin(s))
        return USelection(U[i].copy(), U[i].copy(), None, i, i, s_f, s_g)
    if mode != "split":
        raise ValueError("mode must be 'common' or 'split'")
    s_gl = sg_levels(ctx, x_targ, U)
    i_f = int(np.argmin(s_f))
    flat = int(np.argmin(s_gl.ravel()))
    i_g, p = divmod(flat, s_gl.shape[1])
    return USelection(U[i_f].copy(), U[i_g].copy(), p, i_f, i_g, s_f, s_gl)


def dump_surface(path, points: np.ndarray, columns: dict) -> None:
    """CSV of candidate coordinates and criterion values for plotting."""
    points = np.atleast_2d(points)
    names = list(columns)
    cols = [np.asarray(columns[k], dtype=float).reshape(points.shape[0], -1) for k in names]
    header = [f"c{i + 1}" for i in range(points.shape[1])]
    for k, c in zip(names, cols):
        header += [k] if c.shape[1] == 1 else [f"{k}_{j + 1}" for j in range(c.shape[1])]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in np.column_stack([points, *cols]):
            w.writerow([f"{v:.17g}" for v in r])
