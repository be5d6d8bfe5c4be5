import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from mxlvb import stats
from mxlvb.exceptions import NumericalError, ValidationError

finite = st.floats(-700, 700, allow_nan=False)


def random_spd(rng, k, scale=1.0):
    A = rng.standard_normal((k, k))
    return scale * (A @ A.T + k * np.eye(k))


# --- streams --------------------------------------------------------------

def test_make_rng_is_reproducible():
    assert np.array_equal(stats.make_rng(3).standard_normal(5), stats.make_rng(3).standard_normal(5))


def test_generator_passes_through():
    g = np.random.default_rng(0)
    assert stats.make_rng(g) is g


def test_split_streams_depend_only_on_index():
    a = [g.standard_normal(3) for g in stats.split_rng(9, 4)]
    b = [g.standard_normal(3) for g in stats.split_rng(9, 2)]
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.array_equal(a[0], a[1])


def test_substreams_differ_by_key():
    assert not np.array_equal(stats.substream(1, 0).random(3), stats.substream(1, 1).random(3))
    assert np.array_equal(stats.substream(1, 2, 3).random(3), stats.substream(1, 2, 3).random(3))


# --- log-sum-exp ----------------------------------------------------------

@given(st.lists(finite, min_size=1, max_size=12))
def test_lse_matches_direct_form(v):
    expected = max(v) + math.log(sum(math.exp(x - max(v)) for x in v))
    assert stats.log_sum_exp(v) == pytest.approx(expected, rel=1e-12, abs=1e-12)


@given(st.lists(finite, min_size=1, max_size=12), finite)
def test_lse_shift_equivariance(v, c):
    shifted = stats.log_sum_exp(np.array(v) + c)
    assert shifted == pytest.approx(stats.log_sum_exp(v) + c, rel=1e-12, abs=1e-9)


def test_lse_single_element_and_overflow():
    assert stats.log_sum_exp([5.0]) == 5.0
    assert stats.log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2))
    assert stats.log_sum_exp([-1000.0, -1000.0]) == pytest.approx(-1000 + math.log(2))


def test_lse_masks_and_errors():
    assert stats.log_sum_exp([0.0, -np.inf]) == 0.0
    with pytest.raises(ValidationError):
        stats.log_sum_exp([])
    with pytest.raises(ValidationError):
        stats.log_sum_exp([-np.inf, -np.inf])


def test_lse_axis():
    v = np.array([[0.0, 0.0], [1.0, -np.inf]])
    np.testing.assert_allclose(stats.log_sum_exp(v, axis=1), [math.log(2), 1.0])


# --- SPD ------------------------------------------------------------------

def test_cholesky_jitter_and_failure():
    # rank-deficient PSD matrix succeeds after jitter
    v = np.array([[1.0], [2.0]])
    L = stats.cholesky(v @ v.T)
    assert np.all(np.isfinite(L))
    with pytest.raises(NumericalError):
        stats.cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_spd_matrix_operations():
    rng = np.random.default_rng(0)
    A = random_spd(rng, 4)
    S = stats.SpdMatrix(A)
    np.testing.assert_allclose(S.inv() @ A, np.eye(4), atol=1e-12)
    b = rng.standard_normal(4)
    np.testing.assert_allclose(A @ S.solve(b), b, atol=1e-12)
    assert S.logdet() == pytest.approx(np.linalg.slogdet(A)[1], rel=1e-12)
    with pytest.raises(ValueError):
        S.values[0, 0] = 1.0
    np.testing.assert_allclose(stats.SpdMatrix.from_factor(S.factor).values, A, rtol=1e-12)


def test_spd_matrix_rejects_asymmetry():
    with pytest.raises(ValidationError):
        stats.SpdMatrix([[1.0, 0.5], [0.0, 1.0]])


def test_stacked_inverse():
    rng = np.random.default_rng(1)
    A = np.stack([random_spd(rng, 3) for _ in range(5)])
    np.testing.assert_allclose(stats.spd_inverse(A) @ A, np.broadcast_to(np.eye(3), A.shape), atol=1e-12)


# --- densities against scipy ------------------------------------------------

def test_logpdfs_match_scipy():
    rng = np.random.default_rng(2)
    cov = random_spd(rng, 3)
    mean = rng.standard_normal(3)
    x = rng.standard_normal((4, 3))
    np.testing.assert_allclose(stats.logpdf_mvn(x, mean, cov), sps.multivariate_normal(mean, cov).logpdf(x))
    assert stats.logpdf_gamma(1.7, 0.5, 2.0) == pytest.approx(sps.gamma(0.5, scale=0.5).logpdf(1.7))
    omega = random_spd(rng, 3)
    scale = random_spd(rng, 3)
    assert stats.logpdf_inverse_wishart(omega, 6.5, scale) == pytest.approx(
        sps.invwishart(df=6.5, scale=scale).logpdf(omega), rel=1e-10)


# --- samplers ---------------------------------------------------------------

def test_sample_mvn_moments():
    rng = np.random.default_rng(3)
    cov = random_spd(rng, 3, 0.3)
    mean = np.array([1.0, -2.0, 0.5])
    x = stats.sample_mvn(mean, cov, rng, size=200_000)
    np.testing.assert_allclose(x.mean(axis=0), mean, atol=4 * np.sqrt(np.diag(cov).max() / 200_000))
    np.testing.assert_allclose(np.cov(x.T), cov, rtol=0.02, atol=0.02)


def test_sample_gamma_rate_convention():
    rng = np.random.default_rng(4)
    a = stats.sample_gamma(3.0, 2.0, rng, size=200_000)
    assert a.mean() == pytest.approx(1.5, rel=0.01)
    assert a.var() == pytest.approx(0.75, rel=0.02)
    with pytest.raises(ValidationError):
        stats.sample_gamma(0.0, 1.0, rng)


def test_inverse_wishart_mean_and_variance():
    rng = np.random.default_rng(5)
    K, dof = 3, 9.0
    psi = random_spd(rng, K)
    n = 100_000
    draws = stats.sample_inverse_wishart(dof, psi, rng, size=n)
    mean = psi / (dof - K - 1)
    d = dof - K
    var = ((d + 1) * psi ** 2 + (d - 1) * np.outer(np.diag(psi), np.diag(psi))) / (d * (d - 1) ** 2 * (d - 3))
    se = np.sqrt(var / n)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se)
    # a single draw is symmetric positive definite
    one = stats.sample_inverse_wishart(dof, psi, rng)
    assert one.shape == (K, K)
    np.linalg.cholesky(one)


def test_inverse_wishart_matches_scipy_distribution():
    rng = np.random.default_rng(6)
    draws = stats.sample_inverse_wishart(5.0, np.array([[2.0]]), rng, size=50_000)[:, 0, 0]
    # K = 1: inverse-gamma(dof / 2, scale / 2)
    assert sps.kstest(draws, sps.invgamma(2.5, scale=1.0).cdf).pvalue > 1e-3


def test_inverse_wishart_dof_check():
    with pytest.raises(ValidationError):
        stats.sample_inverse_wishart(1.0, np.eye(3), np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_inverse_wishart_draws_are_spd(k, seed):
    rng = np.random.default_rng(seed)
    draw = stats.sample_inverse_wishart(k + 1.0, random_spd(rng, k), rng)
    np.testing.assert_allclose(draw, draw.T, atol=1e-12 * np.abs(draw).max())
    assert np.all(np.linalg.eigvalsh(draw) > 0)
