"""Multivariate normal orthant probabilities.

Genz's separation-of-variables transform with a randomly shifted rank-1
(Korobov) lattice.  The first variable is integrated exactly, so an
``l``-dimensional probability needs an ``(l-1)``-dimensional QMC rule.  The
bivariate case has an exact closed form through Owen's T function, which is
used by default.  Everything is vectorized over leading batch dimensions.
"""

from __future__ import annotations

import warnings
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri, owens_t


class NonPSDCovarianceWarning(RuntimeWarning):
    """A covariance matrix had to be clipped to the PSD cone."""


def semidefinite_cholesky(cov: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Batched lower factor of PSD matrices, tolerating zero pivots.

    Columns whose pivot falls below ``tol * max(diag)`` are set to zero, so
    singular (e.g. fully observed) components get a degenerate factor instead
    of an exception.
    """
    cov = np.asarray(cov, dtype=float)
    l = cov.shape[-1]
    C = np.zeros_like(cov)
    scale = np.max(np.diagonal(cov, axis1=-2, axis2=-1), axis=-1, keepdims=True)
    scale = np.maximum(scale, 1e-300)
    for j in range(l):
        d = cov[..., j, j] - np.sum(C[..., j, :j] ** 2, axis=-1)
        ok = d > tol * scale[..., 0]
        cjj = np.sqrt(np.where(ok, d, 1.0))
        C[..., j, j] = np.where(ok, cjj, 0.0)
        for i in range(j + 1, l):
            v = (cov[..., i, j] - np.sum(C[..., i, :j] * C[..., j, :j], axis=-1)) / cjj
            C[..., i, j] = np.where(ok, v, 0.0)
    return C


def clip_psd(cov: np.ndarray) -> tuple[np.ndarray, bool]:
    """Project onto the PSD cone by eigenvalue clipping; report if it mattered."""
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    if cov.shape[-1] == 2:
        # closed-form test; eigenvalues are only needed for the offending blocks
        a, c, b = cov[..., 0, 0], cov[..., 1, 1], cov[..., 0, 1]
        need = (a < 0) | (c < 0) | (a * c < b * b)
        if not np.any(need):
            return cov, False
        fixed, bad = _eigen_clip(cov[need])
        cov = cov.copy()
        cov[need] = fixed
        return cov, bad
    return _eigen_clip(cov)


def _eigen_clip(cov):
    w, V = np.linalg.eigh(cov)
    tr = np.maximum(np.sum(np.abs(w), axis=-1, keepdims=True), 1e-300)
    bad = bool(np.any(w < -1e-8 * tr))
    if np.any(w < 0):
        w = np.maximum(w, 0.0)
        cov = (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)
    return cov, bad


@lru_cache(maxsize=64)
def korobov_vector(n_points: int, dim: int) -> tuple:
    """Korobov generating vector ``(1, a, a^2, ...) mod n`` minimizing the P2 criterion."""
    if dim == 1 or n_points < 3:
        return (1,) * dim
    k = np.arange(n_points)
    best, best_a = np.inf, 1
    for a in range(2, n_points - 1):
        g = np.array([pow(a, j, n_points) for j in range(dim)])
        x = np.mod(np.outer(k, g), n_points) / n_points
        p2 = np.mean(np.prod(1.0 + 2.0 * np.pi**2 * (x**2 - x + 1.0 / 6.0), axis=1)) - 1.0
        if p2 < best:
            best, best_a = p2, a
    return tuple(pow(best_a, j, n_points) for j in range(dim))


def lattice(n_points: int, dim: int, shift: np.ndarray) -> np.ndarray:
    """Shifted, tent-transformed rank-1 lattice, shape ``(n_points, dim)``."""
    g = np.array(korobov_vector(n_points, dim))
    k = np.arange(n_points)[:, None]
    w = np.mod(k * g[None, :] / n_points + shift[None, :], 1.0)
    # tent periodization
    return 1.0 - np.abs(2.0 * w - 1.0)


def bvn_cdf(h, k, rho):
    """Standard bivariate normal ``P(X <= h, Y <= k)`` with correlation ``rho``.

    Owen's closed form ``Phi(h)/2 + Phi(k)/2 - T(h, a_h) - T(k, a_k) - beta``.
    Zero thresholds are nudged to a tiny positive value, which selects the
    continuous one-sided limit of the two T terms.
    """
    h, k, rho = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (h, k, rho)))
    rho = np.clip(rho, -1.0, 1.0)
    s = np.sqrt(np.maximum(1.0 - rho * rho, 0.0))
    hh = np.where(h == 0, 1e-200, h)
    kk = np.where(k == 0, 1e-200, k)
    deg = s < 1e-12
    ss = np.where(deg, 1.0, s)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ah = (kk / hh - rho) / ss
        ak = (hh / kk - rho) / ss
    beta = np.where(np.signbit(hh) == np.signbit(kk), 0.0, 0.5)
    val = 0.5 * ndtr(h) + 0.5 * ndtr(k) - owens_t(hh, ah) - owens_t(kk, ak) - beta
    # perfectly (anti)correlated limits
    lim = np.where(rho > 0, ndtr(np.minimum(h, k)), np.maximum(ndtr(h) + ndtr(k) - 1.0, 0.0))
    return np.clip(np.where(deg, lim, val), 0.0, 1.0)


def mvn_cdf(mean, cov, upper, rng_seed=0, n_points: int = 4096, n_shifts: int = 8,
            check_psd: bool = True, method: str = "auto"):
    """``P(Y <= upper)`` for ``Y ~ N(mean, cov)``.

    Parameters
    ----------
    mean, upper : array_like, shape (..., l)
    cov : array_like, shape (..., l, l)
    rng_seed : int or Generator
        Seeds the lattice shifts; results are deterministic for a fixed seed.
    n_points : int
        Total lattice points, split evenly over ``n_shifts`` random shifts.
    method : {"auto", "qmc"}
        ``"auto"`` uses the exact bivariate formula when ``l == 2``.

    Returns
    -------
    float or ndarray with the batch shape.
    """
    mean = np.asarray(mean, dtype=float)
    upper = np.asarray(upper, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.ndim < 2:
        cov = cov.reshape(1, 1)
    l = cov.shape[-1]
    b = np.broadcast_to(upper - mean, cov.shape[:-1])
    if check_psd:
        cov, bad = clip_psd(cov)
        if bad:
            warnings.warn("covariance is not PSD; clipped its eigenvalues", NonPSDCovarianceWarning,
                          stacklevel=2)
    if l == 1:
        sd = np.sqrt(np.maximum(cov[..., 0, 0], 0.0))
        out = _phi_ratio(b[..., 0], sd)
        return float(out) if out.ndim == 0 else out
    if l == 2 and method == "auto":
        sd = np.sqrt(np.maximum(np.diagonal(cov, axis1=-2, axis2=-1), 0.0))
        pos = sd > 0
        both = pos[..., 0] & pos[..., 1]
        sd_safe = np.where(pos, sd, 1.0)
        rho = cov[..., 0, 1] / (sd_safe[..., 0] * sd_safe[..., 1])
        exact = bvn_cdf(b[..., 0] / sd_safe[..., 0], b[..., 1] / sd_safe[..., 1], rho)
        # a zero-variance component is a step factor on the other marginal
        step = _phi_ratio(b[..., 0], sd[..., 0]) * _phi_ratio(b[..., 1], sd[..., 1])
        out = np.where(both, exact, step)
        return float(out) if out.ndim == 0 else out
    if method not in ("auto", "qmc"):
        raise ValueError("method must be 'auto' or 'qmc'")

    C = semidefinite_cholesky(cov)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    per_shift = max(1, n_points // n_shifts)
    batch = b.shape[:-1]
    total = np.zeros(batch)
    for _ in range(n_shifts):
        W = lattice(per_shift, l - 1, rng.random(l - 1))  # (Q, l-1)
        e = _phi_ratio(b[..., 0], C[..., 0, 0])[..., None] * np.ones(per_shift)
        f = e.copy()
        ys = []
        for i in range(1, l):
            w = W[:, i - 1]
            y = ndtri(np.clip(w * e, 1e-16, 1 - 1e-16))
            ys.append(y)
            s = np.zeros_like(y)
            for k in range(i):
                s = s + C[..., i, k][..., None] * ys[k]
            e = _phi_ratio(b[..., i][..., None] - s, C[..., i, i][..., None])
            f = f * e
        total = total + f.mean(axis=-1)
    out = total / n_shifts
    return float(out) if out.ndim == 0 else out


def _phi_ratio(num, den):
    """``Phi(num / den)`` with the degenerate ``den == 0`` limit as a step."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    pos = den > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = ndtr(num / np.where(pos, den, 1.0))
    return np.where(pos, val, (num >= 0).astype(float))
