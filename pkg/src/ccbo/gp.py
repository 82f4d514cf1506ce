"""Gaussian process core: kernels, conditioning, training and sampling.

All models are noise-free (interpolating) GPs over a joint design/uncertainty
space.  A model may carry an extra nominal input ``p`` (0-based) indexing the
output component, in which case the covariance is the product of a continuous
squared-exponential term and an ``l x l`` level matrix parameterised by the
hypersphere decomposition.

Inputs are mapped affinely to ``[0, 1]`` before the kernel is evaluated and
outputs are standardized per level; every public prediction is returned in raw
output units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

JITTER_START = 1e-10
JITTER_MAX = 1e-4

LENGTHSCALE_BOUNDS = (1e-2, 1e1)
VARIANCE_BOUNDS = (1e-6, 1e2)

DUMP_VERSION = 1


class ParameterDomainError(ValueError):
    """A hyperparameter lies outside its admissible domain."""


class IllConditionedError(np.linalg.LinAlgError):
    """Cholesky factorization failed even at the largest jitter."""


class TrainingError(RuntimeError):
    """Every likelihood restart failed."""


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def n_free_angles(n_levels: int) -> int:
    return n_levels * (n_levels - 1) // 2


def angles_from_flat(flat, n_levels: int) -> np.ndarray:
    """Pack ``l(l-1)/2`` free angles row-wise into a strictly lower-triangular array."""
    flat = np.asarray(flat, dtype=float).ravel()
    if flat.size != n_free_angles(n_levels):
        raise ValueError(f"expected {n_free_angles(n_levels)} angles, got {flat.size}")
    theta = np.zeros((n_levels, n_levels))
    theta[np.tril_indices(n_levels, -1)] = flat
    return theta


def hypersphere_matrix(angles, sigma2: float = 1.0) -> np.ndarray:
    """Level covariance matrix from hypersphere angles.

    Level ``i`` is mapped to the point ``sigma_z * L[i]`` on a sphere, with

        L[i, j] = cos(theta[i, j]) * prod_{k<j} sin(theta[i, k])   (j < i)
        L[i, i] = prod_{k<i} sin(theta[i, k])

    and zeros above the diagonal.  The returned matrix is the Gram matrix of
    the mapped points, ``T = L @ L.T``, so ``diag(T) == sigma2``.

    Parameters
    ----------
    angles : array_like, shape (l, l)
        Only the strictly lower triangle is read.
    sigma2 : float
        Level variance ``sigma_z**2``.
    """
    theta = np.atleast_2d(np.asarray(angles, dtype=float))
    n = theta.shape[0]
    if theta.shape != (n, n):
        raise ValueError("angles must be a square array")
    if sigma2 <= 0:
        raise ParameterDomainError("sigma2 must be positive")
    low = theta[np.tril_indices(n, -1)]
    if np.any(np.abs(low) > np.pi + 1e-12):
        raise ParameterDomainError("hypersphere angles must lie in [-pi, pi]")
    L = np.zeros((n, n))
    L[0, 0] = 1.0
    for i in range(1, n):
        s = 1.0
        for j in range(i):
            L[i, j] = np.cos(theta[i, j]) * s
            s *= np.sin(theta[i, j])
        L[i, i] = s
    return sigma2 * (L @ L.T)


@dataclass(frozen=True)
class KernelSpec:
    """Hyperparameters of the product kernel.

    ``discrete_angles`` is ``None`` for a scalar GP; otherwise an ``(l, l)``
    array whose strictly lower triangle holds the hypersphere angles.
    """

    variance: float
    lengthscales: np.ndarray
    discrete_angles: np.ndarray | None = None
    prior_mean: float = 0.0
    discrete_variance: float = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ParameterDomainError("lengthscales must be strictly positive")
        if not self.variance > 0:
            raise ParameterDomainError("variance must be strictly positive")
        if self.discrete_angles is not None:
            theta = np.atleast_2d(np.asarray(self.discrete_angles, dtype=float))
            object.__setattr__(self, "discrete_angles", theta)
            # validates the domain
            hypersphere_matrix(theta, self.discrete_variance)

    @property
    def input_dim(self) -> int:
        return self.lengthscales.size

    @property
    def n_levels(self) -> int:
        return 1 if self.discrete_angles is None else self.discrete_angles.shape[0]

    def level_matrix(self) -> np.ndarray:
        if self.discrete_angles is None:
            return np.ones((1, 1))
        return hypersphere_matrix(self.discrete_angles, self.discrete_variance)


def _as_2d(points, dim: int) -> np.ndarray:
    a = np.asarray(points, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1) if dim > 1 or a.size == 1 else a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[1] != dim:
        raise ValueError(f"expected points with {dim} columns, got shape {np.shape(points)}")
    return a


def _levels(levels, n: int, n_levels: int) -> np.ndarray:
    if levels is None:
        if n_levels != 1:
            raise ValueError("multi-output kernel requires a level index for every point")
        return np.zeros(n, dtype=int)
    lv = np.asarray(levels, dtype=int).ravel()
    if lv.size == 1 and n != 1:
        lv = np.full(n, int(lv[0]))
    if lv.size != n:
        raise ValueError("one level index per point is required")
    if np.any(lv < 0) or np.any(lv >= n_levels):
        raise ValueError(f"level indices must lie in [0, {n_levels - 1}]")
    return lv


def se_factor(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Unit-variance squared-exponential correlation between rows of A and B."""
    As = A / lengthscales
    Bs = B / lengthscales
    d2 = (
        np.sum(As**2, axis=1)[:, None]
        + np.sum(Bs**2, axis=1)[None, :]
        - 2.0 * As @ Bs.T
    )
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-0.5 * d2)


def kernel_matrix(spec: KernelSpec, A, B, levels_a=None, levels_b=None) -> np.ndarray:
    """Covariance matrix ``k(A_i, B_j)`` under ``spec`` (inputs used as given)."""
    A = _as_2d(A, spec.input_dim)
    B = _as_2d(B, spec.input_dim)
    K = spec.variance * se_factor(A, B, spec.lengthscales)
    if spec.discrete_angles is not None:
        T = spec.level_matrix()
        la = _levels(levels_a, A.shape[0], spec.n_levels)
        lb = _levels(levels_b, B.shape[0], spec.n_levels)
        K *= T[np.ix_(la, lb)]
    return K


def kernel_eval(spec: KernelSpec, a, b, p_a=None, p_b=None) -> float:
    """Scalar covariance between two joint points."""
    if (p_a is None) != (spec.discrete_angles is None) or (p_b is None) != (spec.discrete_angles is None):
        raise ValueError("level indices must be given iff the kernel has a discrete part")
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != spec.input_dim or b.size != spec.input_dim:
        raise ValueError("point dimension does not match the kernel")
    return float(kernel_matrix(spec, a[None, :], b[None, :], p_a, p_b)[0, 0])


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scaling:
    """Affine input map to the unit box and per-level output standardization."""

    lower: np.ndarray
    upper: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, inputs, outputs, levels=None, bounds=None, n_levels: int = 1) -> Scaling:
        X = np.asarray(inputs, dtype=float)
        y = np.asarray(outputs, dtype=float).ravel()
        if bounds is None:
            if X.shape[0] == 0:
                raise ValueError("bounds are required with empty data")
            lower, upper = X.min(axis=0), X.max(axis=0)
        else:
            b = np.asarray(bounds, dtype=float)
            lower, upper = b[:, 0], b[:, 1]
        span = upper - lower
        upper = np.where(span > 0, upper, lower + 1.0)
        lv = np.zeros(y.size, dtype=int) if levels is None else np.asarray(levels, dtype=int)
        y_mean = np.zeros(n_levels)
        y_std = np.ones(n_levels)
        for p in range(n_levels):
            yp = y[lv == p]
            if yp.size:
                y_mean[p] = yp.mean()
                s = yp.std()
                if s > 1e-12 * max(1.0, abs(y_mean[p])):
                    y_std[p] = s
        return cls(lower, upper, y_mean, y_std)

    def x(self, X: np.ndarray) -> np.ndarray:
        return (X - self.lower) / (self.upper - self.lower)

    def y(self, y: np.ndarray, levels: np.ndarray) -> np.ndarray:
        return (y - self.y_mean[levels]) / self.y_std[levels]


def robust_cholesky(K: np.ndarray, scale: float = 1.0, start: float = JITTER_START,
                    max_jitter: float = JITTER_MAX) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + jitter*scale*I`` with jitter escalation."""
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    jitter = start
    eye = np.eye(n)
    while jitter <= max_jitter * (1 + 1e-9):
        try:
            L = np.linalg.cholesky(K + jitter * scale * eye)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise IllConditionedError(f"Cholesky failed up to jitter {max_jitter:g}")


@dataclass(frozen=True, eq=False)
class GpModel:
    """A conditioned GP.  Immutable; build it with :func:`condition`."""

    kernel: KernelSpec
    inputs: np.ndarray
    outputs: np.ndarray
    levels: np.ndarray
    scaling: Scaling
    chol: np.ndarray
    alpha_weights: np.ndarray
    jitter: float
    _xn: np.ndarray = field(repr=False)
    _yn: np.ndarray = field(repr=False)

    @property
    def n_levels(self) -> int:
        return self.kernel.n_levels

    @property
    def is_multi_output(self) -> bool:
        return self.kernel.discrete_angles is not None

    @property
    def n_data(self) -> int:
        return self.inputs.shape[0]


def condition(kernel: KernelSpec, inputs, outputs, levels=None, scaling: Scaling | None = None,
              bounds=None) -> GpModel:
    """Condition a GP prior on noise-free observations.

    Parameters
    ----------
    kernel : KernelSpec
        Hyperparameters in normalized units.
    inputs : array_like, shape (n, D)
        Raw joint points.
    outputs : array_like, shape (n,)
        Observed values.
    levels : array_like of int, optional
        Output index of each row (required for a multi-output kernel).
    scaling : Scaling, optional
        Reuse a fixed normalization; by default it is fitted to ``bounds`` (or
        the data range) and the observed outputs.
    """
    D = kernel.input_dim
    X = np.asarray(inputs, dtype=float).reshape(-1, D)
    y = np.asarray(outputs, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ValueError("inputs and outputs differ in length")
    lv = _levels(levels, X.shape[0], kernel.n_levels)
    if X.shape[0] > 1:
        keyed = np.column_stack([X, lv])
        if np.unique(keyed, axis=0).shape[0] != keyed.shape[0]:
            raise ValueError("exact duplicate rows in conditioning data")
    if scaling is None:
        scaling = Scaling.fit(X, y, lv, bounds=bounds, n_levels=kernel.n_levels)
    xn = scaling.x(X)
    yn = scaling.y(y, lv) if y.size else y
    K = kernel_matrix(kernel, xn, xn, lv if kernel.discrete_angles is not None else None,
                      lv if kernel.discrete_angles is not None else None)
    L, jitter = robust_cholesky(K, kernel.variance)
    alpha = sla.cho_solve((L, True), yn - kernel.prior_mean) if y.size else np.zeros(0)
    return GpModel(kernel, X, y, lv, scaling, L, alpha, jitter, xn, yn)


def _lv_arg(model: GpModel, lv):
    return lv if model.is_multi_output else None


def _prep(model: GpModel, Q, levels):
    Qa = _as_2d(Q, model.kernel.input_dim)
    lv = _levels(levels, Qa.shape[0], model.n_levels)
    return model.scaling.x(Qa), lv


def _solve_lower(model: GpModel, Kdq: np.ndarray) -> np.ndarray:
    if model.n_data == 0:
        return np.zeros((0, Kdq.shape[1]))
    return sla.solve_triangular(model.chol, Kdq, lower=True, check_finite=False)


def predict(model: GpModel, queries, levels=None, full_cov: bool = True):
    """Posterior mean and covariance (raw units) at ``queries``.

    Returns ``(mean, cov)`` where ``cov`` is ``(q, q)`` if ``full_cov`` else
    the vector of marginal variances.
    """
    qn, lq = _prep(model, queries, levels)
    k = model.kernel
    Kdq = kernel_matrix(k, model._xn, qn, _lv_arg(model, model.levels), _lv_arg(model, lq))
    mean_n = k.prior_mean + Kdq.T @ model.alpha_weights
    V = _solve_lower(model, Kdq)
    s = model.scaling.y_std[lq]
    mean = model.scaling.y_mean[lq] + s * mean_n
    if full_cov:
        Kqq = kernel_matrix(k, qn, qn, _lv_arg(model, lq), _lv_arg(model, lq))
        cov = (Kqq - V.T @ V) * np.outer(s, s)
        cov = 0.5 * (cov + cov.T)
        return mean, cov
    prior_var = k.variance * k.level_matrix()[lq, lq]
    var = np.maximum(prior_var - np.sum(V**2, axis=0), 0.0) * s**2
    return mean, var


def posterior_cov(model: GpModel, A, B, levels_a=None, levels_b=None) -> np.ndarray:
    """Posterior cross-covariance (raw units) between query sets A and B."""
    an, la = _prep(model, A, levels_a)
    bn, lb = _prep(model, B, levels_b)
    k = model.kernel
    Va = _solve_lower(model, kernel_matrix(k, model._xn, an, _lv_arg(model, model.levels), _lv_arg(model, la)))
    Vb = _solve_lower(model, kernel_matrix(k, model._xn, bn, _lv_arg(model, model.levels), _lv_arg(model, lb)))
    Kab = kernel_matrix(k, an, bn, _lv_arg(model, la), _lv_arg(model, lb))
    sa = model.scaling.y_std[la]
    sb = model.scaling.y_std[lb]
    return (Kab - Va.T @ Vb) * np.outer(sa, sb)


def predict_blocks(model: GpModel, queries, chunk: int = 4096):
    """Mean ``(q, l)`` and per-point output covariance ``(q, l, l)`` in raw units.

    For a scalar model ``l == 1``.
    """
    Q = _as_2d(queries, model.kernel.input_dim)
    l = model.n_levels
    k = model.kernel
    T = k.level_matrix()
    s = model.scaling.y_std
    mean = np.empty((Q.shape[0], l))
    cov = np.empty((Q.shape[0], l, l))
    for start in range(0, Q.shape[0], chunk):
        qn = model.scaling.x(Q[start:start + chunk])
        nq = qn.shape[0]
        corr = se_factor(model._xn, qn, k.lengthscales) * k.variance  # (n, nq)
        Vs = []
        for p in range(l):
            Kdq = corr * T[model.levels, p][:, None]
            mean[start:start + nq, p] = model.scaling.y_mean[p] + s[p] * (
                k.prior_mean + Kdq.T @ model.alpha_weights)
            Vs.append(_solve_lower(model, Kdq))
        for p in range(l):
            for q in range(p, l):
                c = (k.variance * T[p, q] - np.sum(Vs[p] * Vs[q], axis=0)) * s[p] * s[q]
                cov[start:start + nq, p, q] = c
                cov[start:start + nq, q, p] = c
    return mean, cov


def _as_rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def sample_trajectories(model: GpModel, queries, n_traj: int, rng_seed=None, levels=None,
                        normals: np.ndarray | None = None) -> np.ndarray:
    """Joint posterior draws, shape ``(n_traj, q)``.

    ``normals`` may supply the ``(n_traj, q)`` standard normal matrix so that
    callers can share random numbers across query sets.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    mean, cov = predict(model, queries, levels)
    if normals is None:
        normals = _as_rng(rng_seed).standard_normal((n_traj, mean.size))
    return mean + normals @ psd_factor(cov).T


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor of a posterior covariance with jitter scaled to its diagonal."""
    scale = max(float(np.mean(np.diag(cov))), 1e-300) if cov.size else 1.0
    L, _ = robust_cholesky(cov, scale)
    return L


def one_step_update_cov(model: GpModel, pending, queries, pending_levels=None,
                        query_levels=None) -> np.ndarray:
    """Posterior covariance at ``queries`` after also observing ``pending``.

    Under the Kriging Believer assumption the mean is unchanged, so only the
    covariance is returned:  ``K(q,q) - K(q,P) K(P,P)^-1 K(P,q)``.
    """
    P = _as_2d(pending, model.kernel.input_dim)
    if P.shape[0] == 0:
        raise ValueError("pending set must be non-empty")
    _, Kqq = predict(model, queries, query_levels)
    Kqp = posterior_cov(model, queries, P, query_levels, pending_levels)
    _, Kpp = predict(model, P, pending_levels)
    scale = max(float(np.max(np.diag(Kpp))), 1e-300)
    Lp, _ = robust_cholesky(Kpp, scale)
    W = sla.solve_triangular(Lp, Kqp.T, lower=True)
    out = Kqq - W.T @ W
    return 0.5 * (out + out.T)


def log_likelihood(model: GpModel) -> float:
    """Gaussian log marginal likelihood of the standardized outputs."""
    n = model.n_data
    r = model._yn - model.kernel.prior_mean
    return float(-0.5 * r @ model.alpha_weights - np.sum(np.log(np.diag(model.chol)))
                 - 0.5 * n * np.log(2 * np.pi))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class _Concentrated:
    """Profile likelihood over (prior mean, variance) for fixed correlation params."""

    def __init__(self, xn, yn, levels, n_levels):
        self.diff2 = ((xn[:, None, :] - xn[None, :, :]) ** 2).reshape(-1, xn.shape[1])  # (n*n, D)
        self.y = yn
        self.n = yn.size
        self.levels = levels
        self.n_levels = n_levels
        self.D = xn.shape[1]
        self.ones = np.ones(self.n)
        self.rhs = np.column_stack([yn, self.ones])

    def unpack(self, theta):
        ls = 10.0 ** np.asarray(theta[: self.D])
        angles = None
        if self.n_levels > 1:
            angles = angles_from_flat(np.clip(theta[self.D:], -np.pi, np.pi), self.n_levels)
        return ls, angles

    def evaluate(self, theta):
        ls, angles = self.unpack(theta)
        R = np.exp(-0.5 * (self.diff2 @ (1.0 / ls**2))).reshape(self.n, self.n)
        if angles is not None:
            R *= hypersphere_matrix(angles)[np.ix_(self.levels, self.levels)]
        L, _ = robust_cholesky(R)
        sol = sla.cho_solve((L, True), self.rhs, check_finite=False)
        ri_y, ri_1 = sol[:, 0], sol[:, 1]
        beta = float(self.ones @ ri_y / (self.ones @ ri_1))
        r = self.y - beta
        quad = float(r @ (ri_y - beta * ri_1))
        var = float(np.clip(quad / self.n, *VARIANCE_BOUNDS))
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        ll = -0.5 * (quad / var + self.n * np.log(var) + logdet + self.n * np.log(2 * np.pi))
        return ll, beta, var, ls, angles

    def objective(self, theta):
        try:
            return -self.evaluate(theta)[0]
        except np.linalg.LinAlgError:
            return 1e10


def train(template: KernelSpec, inputs, outputs, levels=None, n_restarts: int = 20,
          rng_seed=None, bounds=None, scaling: Scaling | None = None,
          init: KernelSpec | None = None, maxiter: int = 400, tol: float = 1e-3) -> tuple[KernelSpec, float]:
    """Maximum-likelihood hyperparameters by restarted COBYLA.

    The prior mean and process variance are profiled out in closed form, so
    the derivative-free search runs over log10-lengthscales and, for a
    multi-output template, the free hypersphere angles (the level variance is
    fixed to 1 since it is not identifiable from ``variance``).  ``n_restarts``
    random starts are used, plus ``init`` when given.

    Returns
    -------
    (KernelSpec, float)
        Best hyperparameters and the log-likelihood of the standardized data.
    """
    D = template.input_dim
    X = np.asarray(inputs, dtype=float).reshape(-1, D)
    y = np.asarray(outputs, dtype=float).ravel()
    if X.shape[0] < 2:
        raise ValueError("training needs at least two observations")
    if n_restarts < (0 if init is not None else 1):
        raise ValueError("n_restarts must be >= 1, or >= 0 with a warm start")
    n_levels = template.n_levels
    lv = _levels(levels, X.shape[0], n_levels)
    if scaling is None:
        scaling = Scaling.fit(X, y, lv, bounds=bounds, n_levels=n_levels)
    prob = _Concentrated(scaling.x(X), scaling.y(y, lv), lv, n_levels)
    rng = _as_rng(rng_seed)

    lo_ls, hi_ls = np.log10(LENGTHSCALE_BOUNDS[0]), np.log10(LENGTHSCALE_BOUNDS[1])
    n_ang = n_free_angles(n_levels)
    lower = np.concatenate([np.full(D, lo_ls), np.full(n_ang, -np.pi)])
    upper = np.concatenate([np.full(D, hi_ls), np.full(n_ang, np.pi)])
    starts = [lower + rng.random(lower.size) * (upper - lower) for _ in range(n_restarts)]
    if init is not None:
        th = np.log10(np.clip(init.lengthscales, *LENGTHSCALE_BOUNDS))
        if n_ang:
            th = np.concatenate([th, init.discrete_angles[np.tril_indices(n_levels, -1)]])
        starts.insert(0, th)

    best_val, best_theta = np.inf, None
    for x0 in starts:
        res = minimize(prob.objective, x0, method="COBYLA",
                       bounds=list(zip(lower, upper)),
                       options={"maxiter": maxiter, "rhobeg": 0.5, "tol": tol})
        theta = np.clip(res.x, lower, upper)
        val = prob.objective(theta)
        if val < best_val:
            best_val, best_theta = val, theta
    if best_theta is None or best_val >= 1e10:
        raise TrainingError("every likelihood restart failed to factorize")
    ll, beta, var, ls, angles = prob.evaluate(best_theta)
    spec = KernelSpec(variance=var, lengthscales=ls, discrete_angles=angles,
                      prior_mean=beta, discrete_variance=1.0)
    return spec, float(ll)


def fit(template: KernelSpec, inputs, outputs, levels=None, bounds=None, n_restarts: int = 20,
        rng_seed=None, init: KernelSpec | None = None) -> GpModel:
    """Train hyperparameters, then condition on the same data."""
    X = np.asarray(inputs, dtype=float).reshape(-1, template.input_dim)
    lv = None if levels is None else np.asarray(levels, dtype=int)
    scaling = Scaling.fit(X, outputs, lv, bounds=bounds, n_levels=template.n_levels)
    spec, _ = train(template, X, outputs, lv, n_restarts=n_restarts, rng_seed=rng_seed,
                    scaling=scaling, init=init)
    return condition(spec, X, outputs, lv, scaling=scaling)


def default_template(input_dim: int, n_levels: int = 1) -> KernelSpec:
    angles = angles_from_flat(np.full(n_free_angles(n_levels), np.pi / 2), n_levels) if n_levels > 1 else None
    return KernelSpec(1.0, np.full(input_dim, 0.3), angles)


# ---------------------------------------------------------------------------
# Debug dump
# ---------------------------------------------------------------------------


def dumps(model: GpModel) -> str:
    """Versioned JSON text holding hyperparameters, scaling and data."""
    k = model.kernel
    doc = {
        "format": "ccbo-gp",
        "version": DUMP_VERSION,
        "kernel": {
            "variance": k.variance,
            "lengthscales": k.lengthscales.tolist(),
            "discrete_angles": None if k.discrete_angles is None else k.discrete_angles.tolist(),
            "prior_mean": k.prior_mean,
            "discrete_variance": k.discrete_variance,
        },
        "scaling": {name: getattr(model.scaling, name).tolist()
                    for name in ("lower", "upper", "y_mean", "y_std")},
        "inputs": model.inputs.tolist(),
        "levels": model.levels.tolist(),
        "outputs": model.outputs.tolist(),
    }
    return json.dumps(doc, indent=1)


def loads(text: str) -> GpModel:
    doc = json.loads(text)
    if doc.get("format") != "ccbo-gp" or doc.get("version") != DUMP_VERSION:
        raise ValueError("unsupported model dump")
    kd = doc["kernel"]
    spec = KernelSpec(kd["variance"], np.array(kd["lengthscales"]),
                      None if kd["discrete_angles"] is None else np.array(kd["discrete_angles"]),
                      kd["prior_mean"], kd["discrete_variance"])
    sc = Scaling(**{k: np.array(v) for k, v in doc["scaling"].items()})
    levels = np.array(doc["levels"], dtype=int) if spec.discrete_angles is not None else None
    return condition(spec, np.array(doc["inputs"]).reshape(-1, spec.input_dim),
                     np.array(doc["outputs"]), levels, scaling=sc)


def with_kernel(model: GpModel, kernel: KernelSpec) -> GpModel:
    """Re-condition the same data under another kernel, keeping the scaling."""
    return condition(kernel, model.inputs, model.outputs,
                     model.levels if kernel.discrete_angles is not None else None,
                     scaling=model.scaling)


__all__ = [
    "KernelSpec", "GpModel", "Scaling", "ParameterDomainError", "IllConditionedError",
    "TrainingError", "hypersphere_matrix", "angles_from_flat", "kernel_eval", "kernel_matrix",
    "condition", "predict", "posterior_cov", "predict_blocks", "sample_trajectories",
    "one_step_update_cov", "log_likelihood", "train", "fit", "default_template", "dumps",
    "loads", "with_kernel",
]
