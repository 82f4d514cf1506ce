"""Space-filling designs: maximin Latin hypercubes and candidate sets."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import qmc


def maximin_lhs(n: int, dim: int, rng, iterations: int = 50) -> np.ndarray:
    """Best of ``iterations`` random LHS draws in ``[0, 1]^dim`` by minimum pairwise distance."""
    if n < 1:
        return np.zeros((0, dim))
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    sampler = qmc.LatinHypercube(d=dim, seed=rng)
    best, best_d = None, -np.inf
    for _ in range(max(1, iterations)):
        S = sampler.random(n)
        dmin = pdist(S).min() if n > 1 else 0.0
        if dmin > best_d:
            best, best_d = S, dmin
    return best


def scale_unit(S: np.ndarray, bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    return b[:, 0] + S * (b[:, 1] - b[:, 0])


def candidate_set(bounds, factor: int, rng) -> np.ndarray:
    """Plain LHS of ``factor * dim`` points inside ``bounds``."""
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    S = qmc.LatinHypercube(d=b.shape[0], seed=rng).random(factor * b.shape[0])
    return scale_unit(S, b)
