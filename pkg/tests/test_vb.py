import numpy as np
import pytest

import oracles
from mxlvb import stats
from mxlvb.exceptions import ValidationError
from mxlvb.model import ChoiceDataset, DgpConfig, Hyperparameters, simulate_dataset
from mxlvb.vb import (
    ConvergenceMonitor, VbConfig, convergence_delta, delta_objective, expected_lse, initial_posterior,
    ncvmp_beta_update, ncvmp_gradients, pooled_mnl_estimate, relative_change, run_vb,
    sweep_global_updates, theta_vector,
)


def random_instance(rng):
    K = int(rng.integers(1, 5))
    J = int(rng.integers(2, 6))
    X = rng.standard_normal((J, K))
    A = rng.standard_normal((K, K))
    Sigma = 0.3 * (A @ A.T) / K + 0.05 * np.eye(K)
    B = rng.standard_normal((K, K))
    prec = B @ B.T + np.eye(K)
    return X, int(rng.integers(J)), rng.standard_normal(K), Sigma, rng.standard_normal(K), prec


def fd_gradients(X, y, mu, Sigma, m0, prec, h=1e-5):
    f = lambda m, S: float(delta_objective(X, np.array(y), m, S, m0, prec))  # noqa: E731
    K = mu.size
    g_mu = np.empty(K)
    g_S = np.empty((K, K))
    for k in range(K):
        e = np.zeros(K)
        e[k] = h
        g_mu[k] = (f(mu + e, Sigma) - f(mu - e, Sigma)) / (2 * h)
        for l in range(K):
            E = np.zeros((K, K))
            E[k, l] = h
            g_S[k, l] = (f(mu, Sigma + E) - f(mu, Sigma - E)) / (2 * h)
    return g_mu, g_S


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


# --- expected log-sum-exp -----------------------------------------------------

def test_expected_lse_exact_at_zero_covariance():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((4, 3))
    mu = rng.standard_normal(3)
    value, lin = expected_lse(X, mu, np.zeros((3, 3)))
    assert value == pytest.approx(stats.log_sum_exp(X @ mu), abs=1e-12)
    assert lin.p0.sum() == pytest.approx(1.0)


def test_expected_lse_exact_for_single_alternative():
    X = np.array([[0.3, -1.2]])
    mu = np.array([1.0, 2.0])
    value, lin = expected_lse(X, mu, np.eye(2))
    assert value == pytest.approx(float(X[0] @ mu), abs=1e-12)
    np.testing.assert_allclose(lin.curvature, 0.0, atol=1e-15)


def test_expected_lse_matches_scalar_oracle():
    x = [0.4, -0.3, 1.1]
    value, _ = expected_lse(np.array(x)[:, None], [0.8], [[0.2]])
    assert value == pytest.approx(oracles.expected_lse_delta(x, 0.8, 0.2), abs=1e-13)


def test_expected_lse_close_to_monte_carlo_small_variance():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((5, 3))
    mu = rng.standard_normal(3)
    Sigma = 0.01 * np.eye(3)
    b = stats.sample_mvn(mu, Sigma, rng, size=200_000)
    mc = stats.log_sum_exp(b @ X.T, axis=1).mean()
    assert expected_lse(X, mu, Sigma)[0] == pytest.approx(mc, abs=1e-3)


# --- NCVMP ------------------------------------------------------------------

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(20):
        X, y, mu, Sigma, m0, prec = random_instance(rng)
        g_mu, g_S, _ = ncvmp_gradients(X, np.array(y), mu, Sigma, m0, prec)
        fd_mu, fd_S = fd_gradients(X, y, mu, Sigma, m0, prec)
        assert rel_err(g_mu, fd_mu) < 1e-6
        assert rel_err(g_S, fd_S) < 1e-6


def test_gradients_broadcast_over_rows():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((4, 3, 2))
    y = np.array([0, 2, 1, 1])
    mu = rng.standard_normal((4, 2))
    S = np.broadcast_to(0.1 * np.eye(2), (4, 2, 2))
    m0 = rng.standard_normal((4, 2))
    batch = ncvmp_gradients(X, y, mu, S, m0, np.eye(2))[0]
    for m in range(4):
        np.testing.assert_allclose(batch[m], ncvmp_gradients(X[m], y[m], mu[m], S[m], m0[m], np.eye(2))[0],
                                   rtol=1e-13)


def test_ncvmp_scalar_update_matches_oracle():
    rng = np.random.default_rng(4)
    data = ChoiceDataset(X=rng.standard_normal((2, 3, 1)), y=[1, 2], person=[0, 0])
    vp = initial_posterior(data, Hyperparameters.default(1), init="zero")
    vp.mu_beta[:] = [[0.3], [-0.2]]
    vp.Sigma_beta[:] = [[[0.4]], [[0.2]]]
    vp.mu_mu[:] = 0.1
    m, s = ncvmp_beta_update(0, 1, vp, data)
    exp_m, exp_s = oracles.ncvmp_row(list(data.X[1, :, 0]), 2, -0.2, 0.2, 0.1, vp.w_W / vp.Theta_W[0, 0])
    assert m[0] == pytest.approx(exp_m, abs=1e-12)
    assert s[0, 0] == pytest.approx(exp_s, abs=1e-12)
    with pytest.raises(ValidationError):
        ncvmp_beta_update(0, 2, vp, data)


def scalar_vp(vp):
    return {
        "c_B": vp.c_B, "c_W": vp.c_W, "w_B": vp.w_B, "w_W": vp.w_W,
        "d_B": vp.d_B[0], "d_W": vp.d_W[0], "Theta_B": vp.Theta_B[0, 0], "Theta_W": vp.Theta_W[0, 0],
        "mu_zeta": vp.mu_zeta[0], "Sigma_zeta": vp.Sigma_zeta[0, 0],
        "mu_mu": list(vp.mu_mu[:, 0]), "Sigma_mu": list(vp.Sigma_mu[:, 0, 0]),
        "mu_beta": list(vp.mu_beta[:, 0]), "Sigma_beta": list(vp.Sigma_beta[:, 0, 0]),
    }


def test_sweep_matches_scalar_oracle():
    rng = np.random.default_rng(5)
    data = ChoiceDataset(X=rng.standard_normal((7, 3, 1)), y=rng.integers(0, 3, 7), person=[0, 0, 0, 1, 1, 2, 2])
    h = Hyperparameters(xi0=[0.3], Xi0=[[2.0]], nu_B=3.0, nu_W=2.0, A_B=0.8, A_W=1.2)
    vp = initial_posterior(data, h)
    vp.mu_beta += rng.normal(0, 0.3, vp.mu_beta.shape)
    vp.d_B[:] = 1.7
    hyp = {"xi0": 0.3, "Xi0": 2.0, "nu_B": 3.0, "nu_W": 2.0, "A_B": 0.8, "A_W": 1.2}
    expected = oracles.vb_sweep([list(x[:, 0]) for x in data.X], list(data.y), list(data.person),
                                list(data.T), scalar_vp(vp), hyp)
    got = scalar_vp(sweep_global_updates(vp, data, h)[0])
    for key, value in expected.items():
        np.testing.assert_allclose(got[key], value, rtol=0, atol=1e-10, err_msg=key)


def test_constants_of_the_family():
    data, _ = simulate_dataset(DgpConfig(N=7, T=3, K=2, J=3))
    h = Hyperparameters.default(2)
    vp = initial_posterior(data, h)
    assert vp.c_B == pytest.approx((h.nu_B + 2) / 2)
    assert vp.w_B == h.nu_B + 7 + 1
    assert vp.w_W == h.nu_W + 21 + 1


def test_pooled_estimate_is_stationary():
    data, _ = simulate_dataset(DgpConfig(N=40, T=5, K=2, J=3, seed=3))
    h = Hyperparameters.default(2)
    b = pooled_mnl_estimate(data, h)
    eps = 1e-6

    def logpost(v):
        u = data.X @ v
        ll = u[np.arange(data.M), data.y] - stats.log_sum_exp(u, axis=1)
        return ll.sum() - 0.5 * (v @ np.linalg.solve(h.Xi0, v))

    grad = [(logpost(b + eps * e) - logpost(b - eps * e)) / (2 * eps) for e in np.eye(2)]
    np.testing.assert_allclose(grad, 0.0, atol=1e-5)


# --- stopping rule ------------------------------------------------------------

def test_relative_change_guard():
    d, skipped = relative_change(np.array([1.0, 0.0, 2.0]), np.array([1.1, 5.0, 2.0]))
    assert d == pytest.approx(0.1)
    np.testing.assert_array_equal(skipped, [False, True, False])


def test_convergence_needs_window_plus_one_iterates():
    mon = ConvergenceMonitor(tol=0.005, window=5)
    for i in range(5):
        mon.record(np.array([1.0 + i]))
        assert convergence_delta(mon) == (float("inf"), False)
    mon.record(np.array([6.0]))
    delta, done = convergence_delta(mon)
    # mean(2..6) vs mean(1..5)
    assert delta == pytest.approx(1.0 / 3.0)
    assert not done


def test_convergence_is_strict():
    mon = ConvergenceMonitor(tol=0.5, window=1)
    mon.record(np.array([2.0]))
    mon.record(np.array([3.0]))
    assert convergence_delta(mon) == (0.5, False)


def test_theta_vector_layout():
    data, _ = simulate_dataset(DgpConfig(N=5, T=2, K=3, J=3))
    vp = initial_posterior(data, Hyperparameters.default(3))
    assert theta_vector(vp).shape == (15,)


# --- driver -------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_fit():
    data, truth = simulate_dataset(DgpConfig(N=60, T=6, K=2, J=4, seed=7))
    h = Hyperparameters.default(2)
    return data, truth, h, run_vb(data, h)


def test_run_vb_converges_and_is_deterministic(small_fit):
    data, _, h, res = small_fit
    assert res.converged and res.n_iter <= 500
    assert res.deltas[-1] < 0.005
    again = run_vb(data, h)
    for k, v in res.posterior.arrays().items():
        assert np.array_equal(v, again.posterior.arrays()[k]), k
    res.posterior.check()


def test_iteration_cap_returns_unconverged(small_fit):
    data, _, h, _ = small_fit
    res = run_vb(data, h, VbConfig(max_iter=3))
    assert res.n_iter == 3 and not res.converged


def test_vb_rejects_dimension_mismatch(small_fit):
    data = small_fit[0]
    with pytest.raises(ValidationError):
        run_vb(data, Hyperparameters.default(3))
    with pytest.raises(ValidationError):
        VbConfig(init="random")
