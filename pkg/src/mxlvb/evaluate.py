"""Out-of-sample predictive accuracy by total variation distance.

Between-person prediction integrates the choice kernel over
``beta ~ N(mu, Sigma_W)`` and ``mu ~ N(zeta, Sigma_B)``; within-person
prediction integrates over ``beta ~ N(mu_n, Sigma_W)`` for a known person.
Estimated distributions additionally average over posterior draws of the
population parameters (or of ``mu_n`` and ``Sigma_W``).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import stats
from .exceptions import ValidationError
from .mcmc import McmcDraws
from .model import ChoiceDataset, ParameterState, Scenario, make_validation_scenarios, mnl_choice_prob
from .vb import VariationalPosterior, VbResult

SIMPLEX_TOL = 1e-9

# counter keys for evaluation sub-streams; the leading EVAL_KEY keeps them
# apart from the per-chain sampler streams derived from the same seed
EVAL_KEY = 7919
_STREAM_SCENARIOS, _STREAM_TRUE_B, _STREAM_HAT_B, _STREAM_TRUE_W, _STREAM_HAT_W = range(5)


def _stream(seed: int, key: int):
    return stats.substream(seed, EVAL_KEY, key)


def tvd(p, q) -> float:
    """Total variation distance ``sum |p - q| / 2`` between two choice distributions.

    Clamped to 1: for nearly disjoint supports rounding can push the sum
    a few ulps past the maximum.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValidationError(f"distributions have different lengths: {p.shape} vs {q.shape}")
    for v in (p, q):
        if abs(v.sum() - 1.0) > SIMPLEX_TOL or np.any(v < -SIMPLEX_TOL):
            raise ValidationError("argument is not a probability vector")
    return min(1.0, 0.5 * float(np.sum(np.abs(p - q))))


@dataclass(eq=False)
class TruthFit:
    """A 'posterior' concentrated on the data-generating parameters."""

    truth: ParameterState


def _factors(covs: np.ndarray) -> np.ndarray:
    """Cholesky factors of a stack; all-zero matrices map to zero factors."""
    covs = np.asarray(covs, dtype=float)
    zero = ~np.any(covs, axis=(-2, -1))
    out = np.zeros_like(covs)
    if np.any(~zero):
        out[~zero] = stats.cholesky(covs[~zero])
    return out


def _mixed_probs(X, mean_draws, L_B, L_W, n_inner, rng) -> np.ndarray:
    """Average MNL probabilities over ``mu = mean + L_B z1`` and ``beta = mu + L_W z2``.

    ``mean_draws`` is ``(D, K)`` and the factors ``(D, K, K)``; each outer draw
    gets ``n_inner`` inner draws. ``L_B=None`` skips the ``mu`` layer.
    """
    D, K = mean_draws.shape
    mu = np.broadcast_to(mean_draws[:, None, :], (D, n_inner, K))
    if L_B is not None:
        mu = mu + np.einsum("dkl,dil->dik", L_B, rng.standard_normal((D, n_inner, K)))
    beta = mu + np.einsum("dkl,dil->dik", L_W, rng.standard_normal((D, n_inner, K)))
    return mnl_choice_prob(X, beta.reshape(-1, K)).mean(axis=0)


def true_predictive_between(scenario: Scenario, truth: ParameterState, n_mc: int, rng) -> np.ndarray:
    """``(S, J)`` true predictive distributions for new persons, by Monte Carlo."""
    rng = stats.make_rng(rng)
    L_B = _factors(truth.Sigma_B)[None]
    L_W = _factors(truth.Sigma_W)[None]
    return np.stack([_mixed_probs(X, truth.zeta[None], L_B, L_W, n_mc, rng) for X in scenario.X])


def true_predictive_within(scenario: Scenario, truth: ParameterState, n_mc: int, rng) -> np.ndarray:
    """``(S, J)`` true predictive distributions for the scenario's known persons."""
    rng = stats.make_rng(rng)
    L_W = _factors(truth.Sigma_W)[None]
    return np.stack([_mixed_probs(X, mu[None], None, L_W, n_mc, rng)
                     for X, mu in zip(scenario.X, scenario.mu)])


# ---------------------------------------------------------------------------
# Posterior draws
# ---------------------------------------------------------------------------

def _thin_index(n_avail: int, n_outer: int) -> np.ndarray:
    if n_avail <= n_outer:
        return np.arange(n_avail)
    return np.round(np.linspace(0, n_avail - 1, n_outer)).astype(int)


def _as_posterior(fitted):
    return fitted.posterior if isinstance(fitted, VbResult) else fitted


def global_draws(fitted, n_outer: int, rng):
    """Posterior draws of ``(zeta, Sigma_B, Sigma_W)``, each with leading axis D."""
    fitted = _as_posterior(fitted)
    if isinstance(fitted, McmcDraws):
        if fitted.n_draws == 0:
            raise ValidationError("MCMC fit holds no retained draws")
        idx = _thin_index(fitted.n_draws, n_outer)
        return fitted.flat("zeta")[idx], fitted.flat("Sigma_B")[idx], fitted.flat("Sigma_W")[idx]
    if isinstance(fitted, VariationalPosterior):
        zeta = stats.sample_mvn(fitted.mu_zeta, fitted.Sigma_zeta, rng, size=n_outer)
        SB = stats.sample_inverse_wishart(fitted.w_B, fitted.Theta_B, rng, size=n_outer)
        SW = stats.sample_inverse_wishart(fitted.w_W, fitted.Theta_W, rng, size=n_outer)
        return zeta, SB, SW
    if isinstance(fitted, TruthFit):
        t = fitted.truth
        rep = lambda a: np.broadcast_to(a, (n_outer,) + a.shape).copy()  # noqa: E731
        return rep(t.zeta), rep(t.Sigma_B), rep(t.Sigma_W)
    raise ValidationError(f"cannot draw from a {type(fitted).__name__}")


def person_draws(fitted, person: int, n_outer: int, rng):
    """Posterior draws of ``(mu_n, Sigma_W)`` for a training person."""
    fitted = _as_posterior(fitted)
    if isinstance(fitted, McmcDraws):
        mu = fitted.person_mu(person)
        idx = _thin_index(mu.shape[0], n_outer)
        return mu[idx], fitted.flat("Sigma_W")[idx]
    if isinstance(fitted, VariationalPosterior):
        if not 0 <= person < fitted.N:
            raise ValidationError(f"variational posterior has no factor for person {person}")
        mu = stats.sample_mvn(fitted.mu_mu[person], fitted.Sigma_mu[person], rng, size=n_outer)
        SW = stats.sample_inverse_wishart(fitted.w_W, fitted.Theta_W, rng, size=n_outer)
        return mu, SW
    if isinstance(fitted, TruthFit):
        t = fitted.truth
        return (np.broadcast_to(t.mu[person], (n_outer, t.mu.shape[1])).copy(),
                np.broadcast_to(t.Sigma_W, (n_outer,) + t.Sigma_W.shape).copy())
    raise ValidationError(f"cannot draw from a {type(fitted).__name__}")


def estimated_predictive_between(scenario: Scenario, fitted, n_outer: int, n_inner: int, rng) -> np.ndarray:
    """``(S, J)`` posterior predictive distributions for new persons."""
    rng = stats.make_rng(rng)
    out = []
    for X in scenario.X:
        zeta, SB, SW = global_draws(fitted, n_outer, rng)
        out.append(_mixed_probs(X, zeta, _factors(SB), _factors(SW), n_inner, rng))
    return np.stack(out)


def predictive_within(scenario: Scenario, source, n_outer: int, n_inner: int, rng) -> np.ndarray:
    """``(S, J)`` within-person predictive distributions.

    ``source`` is either the true :class:`ParameterState` (integrates over
    ``beta ~ N(mu_n, Sigma_W)`` with ``n_outer * n_inner`` draws) or a fitted
    posterior (integrates over posterior draws of ``mu_n`` and ``Sigma_W``).
    """
    if scenario.persons is None:
        raise ValidationError("within prediction needs a scenario of training persons")
    rng = stats.make_rng(rng)
    if isinstance(source, ParameterState):
        return true_predictive_within(scenario, source, n_outer * n_inner, rng)
    out = []
    for X, person in zip(scenario.X, scenario.persons):
        mu, SW = person_draws(source, int(person), n_outer, rng)
        out.append(_mixed_probs(X, mu, None, _factors(SW), n_inner, rng))
    return np.stack(out)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class EvalConfig:
    n_outer: int = 500
    n_inner: int = 200
    seed: int = 0
    n_persons: int = 25


@dataclass(eq=False)
class PredictiveReport:
    method: str
    tvd_between: np.ndarray
    tvd_within: np.ndarray
    n_mc_outer: int
    n_mc_inner: int
    fit_seconds: float = float("nan")
    eval_seconds: float = float("nan")
    p_true_between: np.ndarray | None = None
    p_hat_between: np.ndarray | None = None
    p_true_within: np.ndarray | None = None
    p_hat_within: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def mean_tvd_between(self) -> float:
        return float(np.mean(self.tvd_between))

    @property
    def mean_tvd_within(self) -> float:
        return float(np.mean(self.tvd_within))

    def to_dict(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a).tolist()  # noqa: E731
        return {
            "method": self.method,
            "tvd_between": {"mean": self.mean_tvd_between, "values": arr(self.tvd_between)},
            "tvd_within": {"mean": self.mean_tvd_within, "values": arr(self.tvd_within)},
            "n_mc_outer": self.n_mc_outer,
            "n_mc_inner": self.n_mc_inner,
            "fit_seconds": self.fit_seconds,
            "eval_seconds": self.eval_seconds,
            "p_true_between": arr(self.p_true_between),
            "p_hat_between": arr(self.p_hat_between),
            "p_true_within": arr(self.p_true_within),
            "p_hat_within": arr(self.p_hat_within),
            **self.extra,
        }


def method_of(fitted) -> str:
    fitted = _as_posterior(fitted)
    if isinstance(fitted, McmcDraws):
        return "MCMC"
    if isinstance(fitted, VariationalPosterior):
        return "VB"
    if isinstance(fitted, TruthFit):
        return "truth-check"
    raise ValidationError(f"unsupported fit type {type(fitted).__name__}")


def fit_seconds_of(fitted) -> float:
    if isinstance(fitted, (McmcDraws, VbResult)):
        return float(fitted.seconds)
    return float("nan")


def validation_scenarios(truth: ParameterState, J: int, cfg: EvalConfig) -> tuple[Scenario, Scenario]:
    """The (between, within) scenarios :func:`evaluate` draws for ``cfg.seed``."""
    return make_validation_scenarios(truth, J, _stream(cfg.seed, _STREAM_SCENARIOS), cfg.n_persons)


def evaluate(data: ChoiceDataset, truth: ParameterState, fitted, cfg: EvalConfig | None = None,
             scenarios: tuple[Scenario, Scenario] | None = None) -> PredictiveReport:
    """Between and within TVDs of ``fitted`` against the data-generating truth.

    Scenarios are drawn from ``truth`` on a dedicated stream when not given.
    Each scenario kind uses its own evaluation stream, so the estimation
    streams are never touched.
    """
    cfg = cfg or EvalConfig()
    start = time.perf_counter()
    if scenarios is None:
        scenarios = validation_scenarios(truth, data.J_max, cfg)
    between, within = scenarios
    if within.persons is not None and np.any(within.persons >= data.N):
        raise ValidationError("within scenario references persons outside the training data")
    n_mc = cfg.n_outer * cfg.n_inner
    p_true_b = true_predictive_between(between, truth, n_mc, _stream(cfg.seed, _STREAM_TRUE_B))
    p_hat_b = estimated_predictive_between(between, fitted, cfg.n_outer, cfg.n_inner,
                                           _stream(cfg.seed, _STREAM_HAT_B))
    p_true_w = predictive_within(within, truth, cfg.n_outer, cfg.n_inner, _stream(cfg.seed, _STREAM_TRUE_W))
    p_hat_w = predictive_within(within, fitted, cfg.n_outer, cfg.n_inner, _stream(cfg.seed, _STREAM_HAT_W))
    return PredictiveReport(
        method=method_of(fitted),
        tvd_between=np.array([tvd(p, q) for p, q in zip(p_true_b, p_hat_b)]),
        tvd_within=np.array([tvd(p, q) for p, q in zip(p_true_w, p_hat_w)]),
        n_mc_outer=cfg.n_outer,
        n_mc_inner=cfg.n_inner,
        fit_seconds=fit_seconds_of(fitted),
        eval_seconds=time.perf_counter() - start,
        p_true_between=p_true_b,
        p_hat_between=p_hat_b,
        p_true_within=p_true_w,
        p_hat_within=p_hat_w,
    )
