"""Metropolis-within-Gibbs sampler for the mixed logit hierarchy.

One sweep updates, in order: ``a_B``, ``Sigma_B``, ``a_W``, ``Sigma_W``,
``zeta``, every ``mu_n`` (all exact conjugate draws), then every
``beta_nt`` by a random-walk Metropolis step with proposal
``beta + sqrt(rho) chol(Sigma_W) eta``.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import stats
from .exceptions import ValidationError
from .model import ChoiceDataset, Hyperparameters, ParameterState, choice_log_likelihood

ADAPT_BATCH = 100


@dataclass
class McmcConfig:
    n_chains: int = 2
    n_iter: int = 200_000
    n_burn: int = 100_000
    thin: int = 10
    rho: float = 0.1
    adapt_target: float = 0.30
    adapt: bool = True
    seed: int = 0
    # persons whose mu_n draws are retained; None keeps everyone
    keep_mu_for: list | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_chains < 1 or self.n_iter < 1:
            raise ValidationError("n_chains and n_iter must be positive")
        if not 0 <= self.n_burn < self.n_iter:
            raise ValidationError("n_burn must lie in [0, n_iter)")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if self.rho <= 0:
            raise ValidationError("rho must be positive")

    @property
    def n_retained(self) -> int:
        return (self.n_iter - self.n_burn) // self.thin

    def retained_iterations(self) -> np.ndarray:
        """1-based sweep numbers that are stored: n_burn + thin, n_burn + 2 thin, ..."""
        return self.n_burn + self.thin * np.arange(1, self.n_retained + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["keep_mu_for"] is not None:
            d["keep_mu_for"] = [int(i) for i in d["keep_mu_for"]]
        return d


@dataclass(eq=False)
class McmcDraws:
    """Retained draws, shaped ``(chain, draw, ...)``."""

    zeta: np.ndarray
    Sigma_B: np.ndarray
    Sigma_W: np.ndarray
    mu: np.ndarray
    mu_persons: np.ndarray
    acceptance: np.ndarray
    rho: np.ndarray
    iterations: np.ndarray
    seconds: float
    config: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.zeta.shape[0]

    @property
    def n_draws(self) -> int:
        return self.zeta.shape[0] * self.zeta.shape[1]

    @property
    def K(self) -> int:
        return self.zeta.shape[2]

    def flat(self, name: str) -> np.ndarray:
        """Draws of ``name`` with the chain axis merged into the draw axis."""
        a = getattr(self, name)
        return a.reshape((-1,) + a.shape[2:])

    def rhat(self) -> np.ndarray:
        """Split-R-hat of each zeta component."""
        return split_rhat(self.zeta)

    def person_mu(self, person: int) -> np.ndarray:
        idx = np.flatnonzero(self.mu_persons == person)
        if idx.size == 0:
            raise ValidationError(f"no retained mu draws for person {person}")
        return self.mu[:, :, idx[0], :].reshape(-1, self.K)


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-R-hat over axis 1 of a ``(chain, draw, ...)`` array."""
    chains = np.asarray(chains, dtype=float)
    n = chains.shape[1] // 2
    if n < 2:
        raise ValidationError("need at least 4 draws per chain for split-R-hat")
    halves = np.concatenate([chains[:, :n], chains[:, n : 2 * n]], axis=0)
    means = halves.mean(axis=1)
    B = n * means.var(axis=0, ddof=1)
    W = halves.var(axis=1, ddof=1).mean(axis=0)
    var_plus = (n - 1) / n * W + B / n
    return np.sqrt(var_plus / W)


# ---------------------------------------------------------------------------
# Full conditionals
# ---------------------------------------------------------------------------

def conditional_a(Sigma: np.ndarray, nu: float, A: np.ndarray) -> tuple[float, np.ndarray]:
    """Gamma (shape, rate vector) of the auxiliary scales given their covariance."""
    K = Sigma.shape[0]
    prec_diag = np.diag(stats.spd_inverse(Sigma))
    return 0.5 * (nu + K), A ** -2 + nu * prec_diag


def conditional_Sigma(resid: np.ndarray, a: np.ndarray, nu: float) -> tuple[float, np.ndarray]:
    """IW (dof, scale) of a covariance given its residual rows and scales."""
    K = a.shape[0]
    return nu + resid.shape[0] + K - 1, 2.0 * nu * np.diag(a) + resid.T @ resid


def conditional_zeta(mu: np.ndarray, Sigma_B: np.ndarray, hyper: Hyperparameters):
    """Normal (mean, cov) of zeta given the person means."""
    P_B = stats.spd_inverse(Sigma_B)
    P_0 = stats.spd_inverse(hyper.Xi0)
    cov = stats.spd_inverse(P_0 + mu.shape[0] * P_B)
    mean = cov @ (P_0 @ hyper.xi0 + P_B @ mu.sum(axis=0))
    return mean, cov


def conditional_mu(beta_sums: np.ndarray, T: np.ndarray, zeta: np.ndarray,
                   Sigma_B: np.ndarray, Sigma_W: np.ndarray):
    """Normal means ``(N, K)`` and covariances ``(N, K, K)`` of every ``mu_n``."""
    P_B = stats.spd_inverse(Sigma_B)
    P_W = stats.spd_inverse(Sigma_W)
    covs = stats.spd_inverse(P_B[None] + T[:, None, None] * P_W[None])
    rhs = (P_B @ zeta)[None] + beta_sums @ P_W
    means = np.einsum("nkl,nl->nk", covs, rhs)
    return means, covs


def _draw_mu(beta_sums, T, zeta, Sigma_B, Sigma_W, rng) -> np.ndarray:
    # persons sharing T_n share the conditional covariance
    P_B = stats.spd_inverse(Sigma_B)
    P_W = stats.spd_inverse(Sigma_W)
    rhs = (P_B @ zeta)[None] + beta_sums @ P_W
    z = rng.standard_normal(rhs.shape)
    out = np.empty_like(rhs)
    for t_val in np.unique(T):
        rows = np.flatnonzero(T == t_val)
        cov = stats.spd_inverse(P_B + t_val * P_W)
        L = stats.cholesky(cov)
        out[rows] = rhs[rows] @ cov + z[rows] @ L.T
    return out


def person_sums(data: ChoiceDataset, rows: np.ndarray) -> np.ndarray:
    return np.add.reduceat(rows, data.offsets[:-1], axis=0)


def gibbs_conjugate_step(state: ParameterState, data: ChoiceDataset,
                         hyper: Hyperparameters, rng) -> ParameterState:
    """Exact draws of ``a_B, Sigma_B, a_W, Sigma_W, zeta, mu_1:N`` in sweep order."""
    s = state.copy()
    shape, rate = conditional_a(s.Sigma_B, hyper.nu_B, hyper.A_B)
    s.a_B = stats.sample_gamma(shape, rate, rng)
    dof, scale = conditional_Sigma(s.mu - s.zeta, s.a_B, hyper.nu_B)
    s.Sigma_B = stats.symmetrize(stats.sample_inverse_wishart(dof, scale, rng))

    shape, rate = conditional_a(s.Sigma_W, hyper.nu_W, hyper.A_W)
    s.a_W = stats.sample_gamma(shape, rate, rng)
    dof, scale = conditional_Sigma(s.beta - s.mu[data.person], s.a_W, hyper.nu_W)
    s.Sigma_W = stats.symmetrize(stats.sample_inverse_wishart(dof, scale, rng))

    mean, cov = conditional_zeta(s.mu, s.Sigma_B, hyper)
    s.zeta = stats.sample_mvn(mean, cov, rng)

    s.mu = _draw_mu(person_sums(data, s.beta), data.T, s.zeta, s.Sigma_B, s.Sigma_W, rng)
    return s


def mh_log_ratio(data: ChoiceDataset, proposal: np.ndarray, current: np.ndarray,
                 mu_rows: np.ndarray, Sigma_W: np.ndarray) -> np.ndarray:
    """Per-row log of [P(y|X,b~) phi(b~|mu,Sigma_W)] / [P(y|X,b) phi(b|mu,Sigma_W)]."""
    L = stats.cholesky(Sigma_W)
    z_new = solve_triangular(L, (proposal - mu_rows).T, lower=True)
    z_old = solve_triangular(L, (current - mu_rows).T, lower=True)
    log_prior = -0.5 * (np.sum(z_new * z_new, axis=0) - np.sum(z_old * z_old, axis=0))
    return choice_log_likelihood(data, proposal) - choice_log_likelihood(data, current) + log_prior


def mh_beta_step(state: ParameterState, data: ChoiceDataset, hyper: Hyperparameters | None,
                 rho: float, rng, eta: np.ndarray | None = None) -> tuple[ParameterState, int]:
    """Random-walk Metropolis update of every ``beta_nt``; returns the number accepted.

    A proposal is accepted when ``u <= min(1, r)`` with ``u ~ U(0, 1)``.
    ``eta`` overrides the standard-normal innovations (testing hook).
    """
    s = state.copy()
    L = stats.cholesky(s.Sigma_W)
    if eta is None:
        eta = rng.standard_normal(s.beta.shape)
    proposal = s.beta + np.sqrt(rho) * (eta @ L.T)
    log_r = mh_log_ratio(data, proposal, s.beta, s.mu[data.person], s.Sigma_W)
    u = rng.uniform(size=log_r.shape)
    accept = np.log(u) <= np.minimum(0.0, log_r)
    s.beta[accept] = proposal[accept]
    return s, int(np.count_nonzero(accept))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def initial_state(data: ChoiceDataset, rng) -> ParameterState:
    """Chain start: ``zeta = 0``, identity covariances, unit scales, and
    ``mu_n``, ``beta_nt`` drawn from the hierarchy at those values.

    Starting ``mu`` and ``beta`` exactly at zero makes the first covariance
    draws collapse towards zero, and the chain then stays stuck there.
    """
    state = ParameterState.initial(data)
    state.mu = rng.standard_normal(state.mu.shape)
    state.beta = state.mu[data.person] + rng.standard_normal(state.beta.shape)
    return state


def _run_chain(data: ChoiceDataset, hyper: Hyperparameters, cfg: McmcConfig, chain: int, keep: np.ndarray):
    rng = stats.substream(cfg.seed, chain)
    state = initial_state(data, rng)
    K = data.K
    D = cfg.n_retained
    out = {
        "zeta": np.empty((D, K)),
        "Sigma_B": np.empty((D, K, K)),
        "Sigma_W": np.empty((D, K, K)),
        "mu": np.empty((D, keep.size, K)),
    }
    rho = cfg.rho
    batch_acc = 0
    trace = []
    d = 0
    for it in range(1, cfg.n_iter + 1):
        state = gibbs_conjugate_step(state, data, hyper, rng)
        state, n_acc = mh_beta_step(state, data, hyper, rho, rng)
        batch_acc += n_acc
        if it % ADAPT_BATCH == 0:
            rate = batch_acc / (ADAPT_BATCH * data.M)
            trace.append(rate)
            batch_acc = 0
            if cfg.adapt and it <= cfg.n_burn:
                rho *= 1.01 if rate > cfg.adapt_target else 0.99
        if it > cfg.n_burn and (it - cfg.n_burn) % cfg.thin == 0:
            out["zeta"][d] = state.zeta
            out["Sigma_B"][d] = state.Sigma_B
            out["Sigma_W"][d] = state.Sigma_W
            out["mu"][d] = state.mu[keep]
            d += 1
    return out, np.asarray(trace), rho


def run_mcmc(data: ChoiceDataset, hyper: Hyperparameters, cfg: McmcConfig | None = None) -> McmcDraws:
    """Run ``cfg.n_chains`` independent chains and collect thinned post-burn-in draws.

    Chain ``c`` draws from its own stream ``substream(cfg.seed, c)``, so
    results do not depend on ``n_jobs``.
    """
    cfg = cfg or McmcConfig()
    if hyper.K != data.K:
        raise ValidationError("hyperparameter dimension does not match the data")
    keep = np.arange(data.N) if cfg.keep_mu_for is None else np.asarray(cfg.keep_mu_for, dtype=np.int64)
    if keep.size and (keep.min() < 0 or keep.max() >= data.N):
        raise ValidationError("keep_mu_for references persons outside the dataset")
    start = time.perf_counter()
    args = [(data, hyper, cfg, c, keep) for c in range(cfg.n_chains)]
    if cfg.n_jobs > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.n_jobs, cfg.n_chains)) as ex:
            results = list(ex.map(_run_chain, *zip(*args)))
    else:
        results = [_run_chain(*a) for a in args]
    seconds = time.perf_counter() - start
    stack = lambda key: np.stack([r[0][key] for r in results])  # noqa: E731
    n_batches = min(len(r[1]) for r in results)
    return McmcDraws(
        zeta=stack("zeta"),
        Sigma_B=stack("Sigma_B"),
        Sigma_W=stack("Sigma_W"),
        mu=stack("mu"),
        mu_persons=keep,
        acceptance=np.stack([r[1][:n_batches] for r in results]),
        rho=np.array([r[2] for r in results]),
        iterations=cfg.retained_iterations(),
        seconds=seconds,
        config=cfg.to_dict(),
    )
