import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal, norm

from ccbo.mvn import NonPSDCovarianceWarning, bvn_cdf, mvn_cdf, semidefinite_cholesky


@pytest.mark.parametrize("method", ["auto", "qmc"])
def test_independent_orthant(method):
    assert mvn_cdf([0, 0], np.eye(2), [0, 0], method=method) == pytest.approx(0.25, abs=5e-4)


@pytest.mark.parametrize("method", ["auto", "qmc"])
def test_correlated_orthant_arcsine(method):
    cov = [[1.0, 0.5], [0.5, 1.0]]
    assert mvn_cdf([0, 0], cov, [0, 0], method=method) == pytest.approx(1 / 3, abs=5e-4)


def test_correlated_orthant_tensor_quadrature():
    # dense tensor rule on the bivariate density, independent of the CDF code
    t = np.linspace(-9, 0, 3001)
    h = t[1] - t[0]
    w = np.full(t.size, h)
    w[0] = w[-1] = h / 2
    dens = multivariate_normal([0, 0], [[1, 0.5], [0.5, 1]]).pdf(np.dstack(np.meshgrid(t, t)))
    quad = w @ dens @ w
    assert quad == pytest.approx(1 / 4 + np.arcsin(0.5) / (2 * np.pi), abs=1e-5)
    assert mvn_cdf([0, 0], [[1, 0.5], [0.5, 1]], [0, 0]) == pytest.approx(quad, abs=1e-5)


def test_univariate_quantile():
    assert mvn_cdf([0.0], [[1.0]], [1.6449]) == pytest.approx(0.95, abs=1e-4)
    assert mvn_cdf(0.0, 1.0, 1.6448536269514722) == pytest.approx(0.95, abs=1e-12)


@pytest.mark.parametrize("l", [1, 2, 3, 4, 5])
def test_diagonal_equals_product(l):
    rng = np.random.default_rng(l)
    for _ in range(10):
        var = rng.uniform(0.2, 3, l)
        mean = rng.normal(size=l)
        up = rng.normal(size=l)
        ref = np.prod(norm.cdf((up - mean) / np.sqrt(var)))
        assert mvn_cdf(mean, np.diag(var), up, method="qmc") == pytest.approx(ref, abs=5e-4)


@pytest.mark.parametrize("l", [2, 3, 4])
def test_against_scipy(l):
    rng = np.random.default_rng(10 + l)
    for _ in range(10):
        A = rng.normal(size=(l, l))
        cov = A @ A.T + 0.1 * np.eye(l)
        mean = rng.normal(size=l)
        up = rng.normal(size=l)
        ref = multivariate_normal(mean, cov).cdf(up)
        assert mvn_cdf(mean, cov, up) == pytest.approx(ref, abs=5e-4)


def test_bvn_exact_against_scipy():
    rng = np.random.default_rng(3)
    h, k = rng.normal(size=(2, 200)) * 2
    h[:20] = 0.0
    k[10:30] = 0.0
    rho = rng.uniform(-0.999, 0.999, 200)
    ours = bvn_cdf(h, k, rho)
    for i in range(200):
        ref = multivariate_normal([0, 0], [[1, rho[i]], [rho[i], 1]]).cdf([h[i], k[i]])
        assert ours[i] == pytest.approx(ref, abs=1e-7)


def test_bvn_degenerate_correlation():
    assert bvn_cdf(0.3, -0.2, 1.0) == pytest.approx(norm.cdf(-0.2))
    assert bvn_cdf(0.3, 0.3, -1.0) == pytest.approx(2 * norm.cdf(0.3) - 1)
    assert bvn_cdf(-0.3, 0.2, -1.0) == pytest.approx(0.0)


def test_zero_variance_component_is_a_step():
    cov = np.diag([1.0, 0.0])
    assert mvn_cdf([0, 0], cov, [0, 0]) == pytest.approx(0.5)
    assert mvn_cdf([0, 1], cov, [0, 0]) == pytest.approx(0.0)
    cov3 = np.diag([1.0, 0.0, 1.0])
    assert mvn_cdf([0, -1, 0], cov3, [0, 0, 0]) == pytest.approx(0.25, abs=5e-4)


def test_batched_shapes():
    rng = np.random.default_rng(4)
    mean = rng.normal(size=(3, 4, 2))
    cov = np.broadcast_to(np.array([[1, 0.3], [0.3, 2]]), (3, 4, 2, 2))
    out = mvn_cdf(mean, cov, 0.0)
    assert out.shape == (3, 4)
    assert out[1, 2] == pytest.approx(mvn_cdf(mean[1, 2], cov[1, 2], [0, 0]))


def test_non_psd_is_clipped_with_warning():
    cov = np.array([[1.0, 1.2], [1.2, 1.0]])
    with pytest.warns(NonPSDCovarianceWarning):
        p = mvn_cdf([0, 0], cov, [0, 0])
    assert 0.0 <= p <= 1.0


def test_deterministic_under_seed():
    cov = np.array([[1, 0.2, 0.1], [0.2, 1, 0.4], [0.1, 0.4, 1]])
    a = mvn_cdf([0.1, 0, -0.2], cov, [0, 0, 0], rng_seed=5)
    b = mvn_cdf([0.1, 0, -0.2], cov, [0, 0, 0], rng_seed=5)
    assert a == b


def test_semidefinite_cholesky_handles_singular():
    v = np.array([1.0, 2.0, -1.0])
    cov = np.outer(v, v)
    C = semidefinite_cholesky(cov)
    assert np.allclose(C @ C.T, cov)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), l=st.integers(2, 4), i=st.integers(0, 3),
       step=st.floats(0.01, 2.0))
def test_monotone_in_upper(seed, l, i, step):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(l, l))
    cov = A @ A.T + 0.05 * np.eye(l)
    mean = rng.normal(size=l)
    up = rng.normal(size=l)
    up2 = up.copy()
    up2[i % l] += step
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonPSDCovarianceWarning)
        # shared lattice shifts; later variables are monotone only up to QMC error
        assert mvn_cdf(mean, cov, up2, rng_seed=1) >= mvn_cdf(mean, cov, up, rng_seed=1) - 1e-6
