"""Mean-field variational Bayes by coordinate ascent.

Variational family::

    q(a_B,k) = Gamma(c_B, d_B,k)       q(a_W,k) = Gamma(c_W, d_W,k)
    q(Sigma_B) = IW(w_B, Theta_B)      q(Sigma_W) = IW(w_W, Theta_W)
    q(zeta) = N(mu_zeta, Sigma_zeta)   q(mu_n) = N(mu_mu[n], Sigma_mu[n])
    q(beta_nt) = N(mu_beta[m], Sigma_beta[m])

All factors except ``q(beta_nt)`` have closed-form optimal updates. The
``beta`` factors are updated by nonconjugate variational message passing,
with the expected log-sum-exp replaced by its second-order delta-method
expansion around ``mu_beta``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import stats
from .exceptions import NumericalError, ValidationError
from .model import ChoiceDataset, Hyperparameters, utilities

MAX_STEP_NORM = 10.0


# ---------------------------------------------------------------------------
# Delta-method expected log-sum-exp
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LogitLinearization:
    """Choice probabilities at the expansion point and the LSE Hessian there."""

    g: float
    p0: np.ndarray
    curvature: np.ndarray


def _lse_expansion(X, avail, mu):
    """Batched ``g(mu)``, ``p0`` and ``X^T (diag p0 - p0 p0^T) X``."""
    u = utilities(X, mu, avail)
    g = stats.log_sum_exp(u, axis=-1)
    p = np.exp(u - g[..., None])
    Xp = np.einsum("...jk,...j->...k", X, p)
    H = np.einsum("...jk,...j,...jl->...kl", X, p, X) - Xp[..., :, None] * Xp[..., None, :]
    return g, p, Xp, stats.symmetrize(H)


def expected_lse(X, mu, Sigma, avail=None) -> tuple[float, LogitLinearization]:
    """Delta-method approximation of ``E log sum_j exp(X_j beta)``, ``beta ~ N(mu, Sigma)``.

    Returns ``g(mu) + tr(H Sigma) / 2`` where ``g`` is the log-sum-exp at the
    mean and ``H = X^T (diag p0 - p0 p0^T) X`` its Hessian.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    Sigma = np.asarray(Sigma, dtype=float).reshape(mu.shape[0], mu.shape[0])
    g, p, _, H = _lse_expansion(X, avail, mu)
    value = float(g) + 0.5 * float(np.sum(H * Sigma))
    return value, LogitLinearization(float(g), p, H)


# ---------------------------------------------------------------------------
# NCVMP for q(beta_nt)
# ---------------------------------------------------------------------------

def delta_objective(X, y, mu_beta, Sigma_beta, prior_mean, prior_prec, avail=None):
    """Terms of ``E_q log p(y, theta)`` that depend on ``q(beta_nt)``.

    ``prior_prec`` is ``E[Sigma_W^-1] = w_W Theta_W^-1`` and ``prior_mean``
    is ``E[mu_n]``. Broadcasts over leading row dimensions.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    g, _, _, H = _lse_expansion(X, avail, mu_beta)
    d = mu_beta - prior_mean
    quad = np.einsum("...k,kl,...l->...", d, prior_prec, d)
    tr_prior = np.einsum("...kl,lk->...", Sigma_beta, prior_prec)
    Xy = np.take_along_axis(X, y[..., None, None], axis=-2)[..., 0, :]
    e_lse = g + 0.5 * np.einsum("...kl,...lk->...", H, Sigma_beta)
    return -0.5 * quad - 0.5 * tr_prior + np.einsum("...k,...k->...", Xy, mu_beta) - e_lse


def ncvmp_gradients(X, y, mu_beta, Sigma_beta, prior_mean, prior_prec, avail=None):
    """Gradients of :func:`delta_objective` w.r.t. ``mu_beta`` and ``Sigma_beta``.

    The mean gradient carries the correction from differentiating the
    curvature term: ``X^T W (X Sigma X^T p0 - diag(X Sigma X^T) / 2)`` with
    ``W = diag p0 - p0 p0^T``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    _, p, Xp, H = _lse_expansion(X, avail, mu_beta)
    XS = X @ Sigma_beta
    S = XS @ np.swapaxes(X, -1, -2)
    diag_S = np.einsum("...jk,...jk->...j", XS, X)
    v = np.einsum("...ij,...j->...i", S, p) - 0.5 * diag_S
    Wv = p * v - p * np.sum(p * v, axis=-1, keepdims=True)
    correction = np.einsum("...jk,...j->...k", X, Wv)
    Xy = np.take_along_axis(X, y[..., None, None], axis=-2)[..., 0, :]
    grad_mu = -(mu_beta - prior_mean) @ prior_prec + Xy - Xp + correction
    grad_Sigma = -0.5 * (prior_prec + H)
    return grad_mu, grad_Sigma, H


def _ncvmp_rows(X, y, avail, mu_beta, Sigma_beta, prior_mean, prior_prec):
    """One fixed-point update for a stack of beta factors.

    Gradients are taken at the current ``(mu_beta, Sigma_beta)``; the new
    covariance is ``(-2 dE/dSigma)^-1`` and the mean moves by
    ``Sigma_new dE/dmu``. A step longer than MAX_STEP_NORM is halved once;
    rows that stay invalid keep their previous values and are flagged.
    """
    grad_mu, _, H = ncvmp_gradients(X, y, mu_beta, Sigma_beta, prior_mean, prior_prec, avail)
    prec = stats.symmetrize(prior_prec + H)
    M, K = mu_beta.shape
    ok = np.ones(M, dtype=bool)
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        L = np.empty_like(prec)
        for m in range(M):
            try:
                L[m] = stats.cholesky(prec[m])
            except NumericalError:
                L[m] = np.eye(K)
                ok[m] = False
    Linv = np.linalg.solve(L, np.broadcast_to(np.eye(K), L.shape))
    Sigma_new = stats.symmetrize(np.swapaxes(Linv, -1, -2) @ Linv)
    step = np.einsum("mkl,ml->mk", Sigma_new, grad_mu)
    norm = np.linalg.norm(step, axis=1)
    long = norm > MAX_STEP_NORM
    step[long] *= 0.5
    ok &= np.linalg.norm(step, axis=1) <= MAX_STEP_NORM
    mu_new = np.where(ok[:, None], mu_beta + step, mu_beta)
    Sigma_new = np.where(ok[:, None, None], Sigma_new, Sigma_beta)
    return mu_new, Sigma_new, ~ok


# ---------------------------------------------------------------------------
# Variational posterior
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class VariationalPosterior:
    c_B: float
    c_W: float
    d_B: np.ndarray
    d_W: np.ndarray
    w_B: float
    w_W: float
    Theta_B: np.ndarray
    Theta_W: np.ndarray
    mu_zeta: np.ndarray
    Sigma_zeta: np.ndarray
    mu_mu: np.ndarray
    Sigma_mu: np.ndarray
    mu_beta: np.ndarray
    Sigma_beta: np.ndarray

    @property
    def K(self) -> int:
        return self.mu_zeta.shape[0]

    @property
    def N(self) -> int:
        return self.mu_mu.shape[0]

    def copy(self) -> "VariationalPosterior":
        return VariationalPosterior(**{f.name: np.copy(getattr(self, f.name))
                                       if isinstance(getattr(self, f.name), np.ndarray)
                                       else getattr(self, f.name) for f in fields(self)})

    def arrays(self) -> dict:
        return {f.name: np.asarray(getattr(self, f.name)) for f in fields(self)}

    def prec_B(self) -> np.ndarray:
        """``E[Sigma_B^-1] = w_B Theta_B^-1``."""
        return self.w_B * stats.spd_inverse(self.Theta_B)

    def prec_W(self) -> np.ndarray:
        return self.w_W * stats.spd_inverse(self.Theta_W)

    def check(self) -> None:
        """Raise NumericalError if any covariance or scale matrix is not SPD."""
        for name in ("Theta_B", "Theta_W", "Sigma_zeta", "Sigma_mu", "Sigma_beta"):
            try:
                np.linalg.cholesky(getattr(self, name))
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"{name} is not positive definite") from exc
        if np.any(self.d_B <= 0) or np.any(self.d_W <= 0):
            raise NumericalError("Gamma rates d_B, d_W must stay positive")


def _theta_B(vp, hyper, N):
    r = vp.mu_mu - vp.mu_zeta
    return stats.symmetrize(2.0 * hyper.nu_B * np.diag(vp.c_B / vp.d_B) + N * vp.Sigma_zeta
                            + vp.Sigma_mu.sum(axis=0) + r.T @ r)


def _theta_W(vp, hyper, data):
    r = vp.mu_beta - vp.mu_mu[data.person]
    return stats.symmetrize(2.0 * hyper.nu_W * np.diag(vp.c_W / vp.d_W)
                            + np.einsum("n,nkl->kl", data.T.astype(float), vp.Sigma_mu)
                            + vp.Sigma_beta.sum(axis=0) + r.T @ r)


def pooled_mnl_estimate(data: ChoiceDataset, hyper: Hyperparameters, n_newton: int = 25,
                        tol: float = 1e-10) -> np.ndarray:
    """MAP estimate of a homogeneous logit (one beta for everyone) under the
    ``N(xi0, Xi0)`` prior, by Newton's method."""
    b = hyper.xi0.copy()
    P_0 = stats.spd_inverse(hyper.Xi0)
    Xy = data.X[np.arange(data.M), data.y]
    for _ in range(n_newton):
        _, _, Xp, H = _lse_expansion(data.X, data.avail, np.broadcast_to(b, (data.M, data.K)))
        grad = (Xy - Xp).sum(axis=0) - P_0 @ (b - hyper.xi0)
        step = np.linalg.solve(H.sum(axis=0) + P_0, grad)
        b = b + step
        if np.max(np.abs(step)) < tol:
            break
    return b


def initial_posterior(data: ChoiceDataset, hyper: Hyperparameters, init: str = "pooled") -> VariationalPosterior:
    """Starting values plus the constants ``c``, ``w`` and initial ``Theta``.

    Covariances start at the identity and ``d`` at one. With
    ``init="pooled"`` every mean factor starts at the pooled-logit estimate;
    ``init="zero"`` starts them at zero. From zero, ``Sigma_B`` collapses in
    the first sweeps and the tightly coupled means then crawl towards the
    fixed point, so the stopping rule fires long before they get there.
    """
    if init not in ("pooled", "zero"):
        raise ValidationError(f"unknown VB initialization {init!r}")
    K, N, M = data.K, data.N, data.M
    vp = VariationalPosterior(
        c_B=0.5 * (hyper.nu_B + K),
        c_W=0.5 * (hyper.nu_W + K),
        d_B=np.ones(K),
        d_W=np.ones(K),
        w_B=hyper.nu_B + N + K - 1,
        w_W=hyper.nu_W + float(data.T.sum()) + K - 1,
        Theta_B=np.eye(K),
        Theta_W=np.eye(K),
        mu_zeta=np.zeros(K),
        Sigma_zeta=np.eye(K),
        mu_mu=np.zeros((N, K)),
        Sigma_mu=np.broadcast_to(np.eye(K), (N, K, K)).copy(),
        mu_beta=np.zeros((M, K)),
        Sigma_beta=np.broadcast_to(np.eye(K), (M, K, K)).copy(),
    )
    if init == "pooled":
        b = pooled_mnl_estimate(data, hyper)
        vp.mu_zeta[:] = b
        vp.mu_mu[:] = b
        vp.mu_beta[:] = b
    vp.Theta_B = _theta_B(vp, hyper, N)
    vp.Theta_W = _theta_W(vp, hyper, data)
    return vp


def ncvmp_beta_update(n: int, t: int, vp: VariationalPosterior, data: ChoiceDataset):
    """Updated ``(mu_beta, Sigma_beta)`` of occasion ``t`` of person ``n``."""
    m = int(data.offsets[n]) + t
    if not 0 <= t < data.T[n]:
        raise ValidationError(f"person {n} has no occasion {t}")
    sl = slice(m, m + 1)
    mu_new, Sigma_new, bad = _ncvmp_rows(data.X[sl], data.y[sl], data.avail[sl], vp.mu_beta[sl],
                                         vp.Sigma_beta[sl], vp.mu_mu[n], vp.prec_W())
    return mu_new[0], Sigma_new[0]


def sweep_global_updates(vp: VariationalPosterior, data: ChoiceDataset,
                         hyper: Hyperparameters) -> tuple[VariationalPosterior, int]:
    """One coordinate-ascent pass; returns the new posterior and the number of
    beta factors whose NCVMP update was rejected."""
    new = vp.copy()
    N = data.N

    P_W = new.prec_W()
    new.mu_beta, new.Sigma_beta, bad = _ncvmp_rows(
        data.X, data.y, data.avail, new.mu_beta, new.Sigma_beta, new.mu_mu[data.person], P_W)

    P_B = new.prec_B()
    T = data.T.astype(float)
    new.Sigma_mu = stats.spd_inverse(P_B[None] + T[:, None, None] * P_W[None])
    beta_sums = np.add.reduceat(new.mu_beta, data.offsets[:-1], axis=0)
    rhs = (P_B @ new.mu_zeta)[None] + beta_sums @ P_W
    new.mu_mu = np.einsum("nkl,nl->nk", new.Sigma_mu, rhs)

    P_0 = stats.spd_inverse(hyper.Xi0)
    new.Sigma_zeta = stats.spd_inverse(P_0 + N * P_B)
    new.mu_zeta = new.Sigma_zeta @ (P_0 @ hyper.xi0 + P_B @ new.mu_mu.sum(axis=0))

    new.Theta_B = _theta_B(new, hyper, N)
    new.Theta_W = _theta_W(new, hyper, data)

    new.d_B = hyper.A_B ** -2 + new.w_B * hyper.nu_B * np.diag(stats.spd_inverse(new.Theta_B))
    new.d_W = hyper.A_W ** -2 + new.w_W * hyper.nu_W * np.diag(stats.spd_inverse(new.Theta_W))
    return new, int(np.count_nonzero(bad))


# ---------------------------------------------------------------------------
# Stopping rule
# ---------------------------------------------------------------------------

def theta_vector(vp: VariationalPosterior) -> np.ndarray:
    """Monitored quantities: mu_zeta, diag Theta_B, diag Theta_W, d_B, d_W."""
    return np.concatenate([vp.mu_zeta, np.diag(vp.Theta_B), np.diag(vp.Theta_W), vp.d_B, vp.d_W])


@dataclass
class ConvergenceMonitor:
    tol: float = 0.005
    window: int = 5
    max_iter: int = 500
    history: list = field(default_factory=list)
    deltas: list = field(default_factory=list)
    skipped: np.ndarray | None = None

    @property
    def delta(self) -> float:
        return self.deltas[-1] if self.deltas else float("inf")

    def record(self, theta: np.ndarray) -> None:
        self.history.append(np.asarray(theta, dtype=float).copy())


def relative_change(prev: np.ndarray, curr: np.ndarray, guard: float = 1e-12):
    """``max_i |curr_i - prev_i| / |prev_i|`` over components with ``|prev_i| >= guard``.

    Returns the value and a mask of skipped components.
    """
    prev = np.asarray(prev, dtype=float)
    curr = np.asarray(curr, dtype=float)
    skipped = np.abs(prev) < guard
    if np.all(skipped):
        return 0.0, skipped
    rel = np.abs(curr - prev)[~skipped] / np.abs(prev[~skipped])
    return float(np.max(rel)), skipped


def convergence_delta(monitor: ConvergenceMonitor, vp: VariationalPosterior | None = None):
    """Record ``vp`` (if given) and evaluate the stopping rule.

    The monitored vector is averaged over the last ``window`` iterates and
    compared with the average one iteration earlier, so at least
    ``window + 1`` iterates are needed; before that ``(inf, False)`` is
    returned. Converged means strictly ``delta < tol``.
    """
    if vp is not None:
        monitor.record(theta_vector(vp))
    w = monitor.window
    if len(monitor.history) < w + 1:
        return float("inf"), False
    hist = np.asarray(monitor.history[-(w + 1):])
    prev = hist[:-1].mean(axis=0)
    curr = hist[1:].mean(axis=0)
    delta, skipped = relative_change(prev, curr)
    monitor.skipped = skipped
    monitor.deltas.append(delta)
    return delta, bool(delta < monitor.tol)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

@dataclass
class VbConfig:
    tol: float = 0.005
    max_iter: int = 500
    init: str = "pooled"

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValidationError("tol must be positive and max_iter >= 1")
        if self.init not in ("pooled", "zero"):
            raise ValidationError(f"unknown VB initialization {self.init!r}")


@dataclass(eq=False)
class VbResult:
    posterior: VariationalPosterior
    n_iter: int
    converged: bool
    seconds: float
    deltas: np.ndarray
    n_rejected: int = 0
    config: dict = field(default_factory=dict)


def run_vb(data: ChoiceDataset, hyper: Hyperparameters, cfg: VbConfig | None = None) -> VbResult:
    """Coordinate ascent until the averaged relative change drops below ``tol``.

    Deterministic: identical inputs give bit-identical output. Hitting
    ``max_iter`` returns the current posterior with ``converged=False``.
    """
    cfg = cfg or VbConfig()
    if hyper.K != data.K:
        raise ValidationError("hyperparameter dimension does not match the data")
    start = time.perf_counter()
    vp = initial_posterior(data, hyper, cfg.init)
    monitor = ConvergenceMonitor(tol=cfg.tol, max_iter=cfg.max_iter)
    monitor.record(theta_vector(vp))
    converged = False
    n_rejected = 0
    it = 0
    while it < cfg.max_iter:
        it += 1
        vp, bad = sweep_global_updates(vp, data, hyper)
        n_rejected += bad
        _, converged = convergence_delta(monitor, vp)
        if converged:
            break
    vp.check()
    return VbResult(vp, it, converged, time.perf_counter() - start, np.asarray(monitor.deltas),
                    n_rejected, {"tol": cfg.tol, "max_iter": cfg.max_iter, "init": cfg.init})
