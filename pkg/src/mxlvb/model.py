"""Mixed logit with inter- and intra-individual taste heterogeneity.

Hierarchy (``k = 1..K``, ``n = 1..N``, ``t = 1..T_n``)::

    a_B,k ~ Gamma(1/2, A_B,k^-2)          a_W,k ~ Gamma(1/2, A_W,k^-2)
    Sigma_B ~ IW(nu_B + K - 1, 2 nu_B diag(a_B))
    Sigma_W ~ IW(nu_W + K - 1, 2 nu_W diag(a_W))
    zeta ~ N(xi0, Xi0)
    mu_n ~ N(zeta, Sigma_B)
    beta_nt ~ N(mu_n, Sigma_W)
    y_nt ~ MNL(X_nt beta_nt)

Observations are stored flat: row ``m`` is one choice occasion, rows are
grouped by person, and choice sets of different sizes are padded with an
availability mask.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import stats
from .exceptions import ValidationError

N_VALIDATION_PERSONS = 25


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChoiceDataset:
    """Panel of choice occasions.

    Attributes:
        X: ``(M, J_max, K)`` attributes; padded rows are zero.
        y: ``(M,)`` chosen alternative index in ``0..J_m - 1``.
        person: ``(M,)`` person index in ``0..N-1``, non-decreasing.
        avail: ``(M, J_max)`` mask of alternatives present in each choice set.
    """

    X: np.ndarray
    y: np.ndarray
    person: np.ndarray
    avail: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        person = np.asarray(self.person, dtype=np.int64)
        if X.ndim != 3:
            raise ValidationError(f"X must be (M, J, K), got shape {X.shape}")
        M, J, _ = X.shape
        avail = np.ones((M, J), dtype=bool) if self.avail is None else np.asarray(self.avail, dtype=bool)
        if y.shape != (M,) or person.shape != (M,) or avail.shape != (M, J):
            raise ValidationError("y, person and avail must align with the rows of X")
        if M == 0:
            raise ValidationError("dataset has no observations")
        if not np.all(np.isfinite(X)):
            raise ValidationError("X contains non-finite entries")
        if np.any(np.diff(person) < 0):
            raise ValidationError("observations must be grouped by person (person index non-decreasing)")
        if person[0] != 0 or np.any(np.diff(person) > 1):
            raise ValidationError("person indices must be contiguous starting at 0")
        n_alt = avail.sum(axis=1)
        if np.any(n_alt < 1):
            raise ValidationError("every choice set needs at least one alternative")
        if np.any(y < 0) or np.any(y >= J) or not np.all(avail[np.arange(M), y]):
            raise ValidationError("chosen alternative outside its choice set")
        X = np.where(avail[..., None], X, 0.0)
        for name, arr in (("X", X), ("y", y), ("person", person), ("avail", avail)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        T = np.bincount(person)
        T.setflags(write=False)
        object.__setattr__(self, "T", T)
        offsets = np.concatenate([[0], np.cumsum(T)])
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_ragged(cls, X_nested, y_nested) -> "ChoiceDataset":
        """Build from ``X_nested[n][t]`` (``J_nt x K`` arrays) and ``y_nested[n][t]``."""
        rows, ys, persons, sizes = [], [], [], []
        for n, (Xn, yn) in enumerate(zip(X_nested, y_nested)):
            if len(Xn) == 0:
                raise ValidationError(f"person {n} has no occasions")
            for Xnt, ynt in zip(Xn, yn):
                Xnt = np.atleast_2d(np.asarray(Xnt, dtype=float))
                rows.append(Xnt)
                ys.append(int(ynt))
                persons.append(n)
                sizes.append(Xnt.shape[0])
        K = rows[0].shape[1]
        J = max(sizes)
        X = np.zeros((len(rows), J, K))
        avail = np.zeros((len(rows), J), dtype=bool)
        for m, Xnt in enumerate(rows):
            if Xnt.shape[1] != K:
                raise ValidationError("all design matrices need the same number of columns")
            X[m, : Xnt.shape[0]] = Xnt
            avail[m, : Xnt.shape[0]] = True
        return cls(X=X, y=np.array(ys), person=np.array(persons), avail=avail)

    @property
    def N(self) -> int:
        return int(self.T.shape[0])

    @property
    def K(self) -> int:
        return int(self.X.shape[2])

    @property
    def M(self) -> int:
        return int(self.X.shape[0])

    @property
    def J_max(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_alternatives(self) -> np.ndarray:
        return self.avail.sum(axis=1)

    def occasions(self, n: int) -> slice:
        return slice(int(self.offsets[n]), int(self.offsets[n + 1]))

    def design(self, m: int) -> np.ndarray:
        """Unpadded ``J_m x K`` design matrix of row ``m``."""
        return self.X[m][self.avail[m]]

    def same_as(self, other: "ChoiceDataset") -> bool:
        return (
            self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.person, other.person)
            and np.array_equal(self.avail, other.avail)
        )


# ---------------------------------------------------------------------------
# Priors and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Hyperparameters:
    xi0: np.ndarray
    Xi0: np.ndarray
    nu_B: float
    nu_W: float
    A_B: np.ndarray
    A_W: np.ndarray

    def __post_init__(self):
        xi0 = np.atleast_1d(np.asarray(self.xi0, dtype=float))
        K = xi0.shape[0]
        Xi0 = np.asarray(self.Xi0, dtype=float).reshape(K, K)
        stats.SpdMatrix(Xi0)
        A_B = np.broadcast_to(np.asarray(self.A_B, dtype=float), (K,)).copy()
        A_W = np.broadcast_to(np.asarray(self.A_W, dtype=float), (K,)).copy()
        if self.nu_B <= 0 or self.nu_W <= 0:
            raise ValidationError("nu_B and nu_W must be positive")
        if np.any(A_B <= 0) or np.any(A_W <= 0):
            raise ValidationError("half-t scales A_B, A_W must be positive")
        object.__setattr__(self, "xi0", xi0)
        object.__setattr__(self, "Xi0", Xi0)
        object.__setattr__(self, "A_B", A_B)
        object.__setattr__(self, "A_W", A_W)
        object.__setattr__(self, "nu_B", float(self.nu_B))
        object.__setattr__(self, "nu_W", float(self.nu_W))

    @classmethod
    def default(cls, K: int) -> "Hyperparameters":
        """Weakly informative defaults: xi0 = 0, Xi0 = 10 I, nu = 2, A = 1.04."""
        return cls(np.zeros(K), 10.0 * np.eye(K), 2.0, 2.0, np.full(K, 1.04), np.full(K, 1.04))

    @property
    def K(self) -> int:
        return self.xi0.shape[0]

    s = 0.5

    @property
    def r_B(self) -> np.ndarray:
        return self.A_B ** -2

    @property
    def r_W(self) -> np.ndarray:
        return self.A_W ** -2

    @property
    def omega_B(self) -> float:
        return self.nu_B + self.K - 1

    @property
    def omega_W(self) -> float:
        return self.nu_W + self.K - 1

    def B_B(self, a_B) -> np.ndarray:
        return 2.0 * self.nu_B * np.diag(a_B)

    def B_W(self, a_W) -> np.ndarray:
        return 2.0 * self.nu_W * np.diag(a_W)

    def to_dict(self) -> dict:
        return {
            "xi0": self.xi0.tolist(), "Xi0": self.Xi0.tolist(),
            "nu_B": self.nu_B, "nu_W": self.nu_W,
            "A_B": self.A_B.tolist(), "A_W": self.A_W.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, K: int | None = None) -> "Hyperparameters":
        if K is None:
            K = len(d["xi0"])
        base = cls.default(K)
        Xi0 = d.get("Xi0", base.Xi0)
        if np.ndim(Xi0) == 0:
            Xi0 = float(Xi0) * np.eye(K)
        return cls(
            xi0=np.broadcast_to(np.asarray(d.get("xi0", base.xi0), dtype=float), (K,)),
            Xi0=Xi0,
            nu_B=d.get("nu_B", base.nu_B),
            nu_W=d.get("nu_W", base.nu_W),
            A_B=d.get("A_B", base.A_B),
            A_W=d.get("A_W", base.A_W),
        )


@dataclass(eq=False)
class ParameterState:
    """One full parameter configuration; ``beta`` rows align with dataset rows.

    ``a_B`` and ``a_W`` may be ``None`` for states that come from the
    simulation design, which fixes the covariances directly.
    """

    zeta: np.ndarray
    Sigma_B: np.ndarray
    Sigma_W: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    a_B: np.ndarray | None = None
    a_W: np.ndarray | None = None

    def copy(self) -> "ParameterState":
        cp = lambda a: None if a is None else np.array(a, copy=True)  # noqa: E731
        return ParameterState(cp(self.zeta), cp(self.Sigma_B), cp(self.Sigma_W),
                              cp(self.mu), cp(self.beta), cp(self.a_B), cp(self.a_W))

    def check(self, data: ChoiceDataset | None = None) -> None:
        K = self.zeta.shape[0]
        if self.Sigma_B.shape != (K, K) or self.Sigma_W.shape != (K, K):
            raise ValidationError("covariance shapes do not match zeta")
        if self.mu.ndim != 2 or self.mu.shape[1] != K or self.beta.ndim != 2 or self.beta.shape[1] != K:
            raise ValidationError("mu and beta must be (rows, K)")
        if data is not None:
            if data.K != K or self.mu.shape[0] != data.N or self.beta.shape[0] != data.M:
                raise ValidationError("parameter state dimensions do not match the dataset")

    @classmethod
    def initial(cls, data: ChoiceDataset) -> "ParameterState":
        """Neutral start: zero means, identity covariances, unit auxiliary scales."""
        K = data.K
        return cls(np.zeros(K), np.eye(K), np.eye(K), np.zeros((data.N, K)),
                   np.zeros((data.M, K)), np.ones(K), np.ones(K))


# ---------------------------------------------------------------------------
# Choice kernel
# ---------------------------------------------------------------------------

def utilities(X, beta, avail=None) -> np.ndarray:
    """Linear utilities ``X beta`` with unavailable alternatives at ``-inf``."""
    u = np.einsum("...jk,...k->...j", np.asarray(X, dtype=float), np.asarray(beta, dtype=float))
    if avail is not None:
        u = np.where(avail, u, -np.inf)
    return u


def mnl_choice_prob(X, beta, avail=None) -> np.ndarray:
    """Multinomial logit probabilities ``softmax(X beta)`` over the choice set.

    Broadcasts over leading dimensions of ``X`` (``..., J, K``) and ``beta``
    (``..., K``).
    """
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.shape[-1] != beta.shape[-1]:
        raise ValidationError(f"X has {X.shape[-1]} columns but beta has length {beta.shape[-1]}")
    u = utilities(X, beta, avail)
    return np.exp(u - stats.log_sum_exp(u, axis=-1)[..., None])


def choice_log_likelihood(data: ChoiceDataset, beta: np.ndarray) -> np.ndarray:
    """Per-row ``log P(y_m | X_m, beta_m)``."""
    u = utilities(data.X, beta, data.avail)
    return u[np.arange(data.M), data.y] - stats.log_sum_exp(u, axis=-1)


def sample_choices(X, beta, rng, avail=None) -> np.ndarray:
    """Utility-maximizing choices under i.i.d. Gumbel(0, 1) disturbances."""
    u = utilities(X, beta, avail)
    return np.argmax(u + rng.gumbel(size=u.shape), axis=-1)


# ---------------------------------------------------------------------------
# Joint density
# ---------------------------------------------------------------------------

def log_density_terms(data: ChoiceDataset, theta: ParameterState, hyper: Hyperparameters) -> dict:
    """Every additive term of the joint log density, each fully normalized."""
    theta.check(data)
    if theta.a_B is None or theta.a_W is None:
        raise ValidationError("joint density needs the auxiliary scales a_B and a_W")
    SB = stats.SpdMatrix(theta.Sigma_B)
    SW = stats.SpdMatrix(theta.Sigma_W)
    mu_rows = theta.mu[data.person]
    return {
        "choices": float(np.sum(choice_log_likelihood(data, theta.beta))),
        "beta": float(np.sum(stats.logpdf_mvn(theta.beta - mu_rows, np.zeros(data.K), SW))),
        "mu": float(np.sum(stats.logpdf_mvn(theta.mu - theta.zeta, np.zeros(data.K), SB))),
        "zeta": stats.logpdf_mvn(theta.zeta, hyper.xi0, hyper.Xi0),
        "Sigma_B": stats.logpdf_inverse_wishart(SB, hyper.omega_B, hyper.B_B(theta.a_B)),
        "Sigma_W": stats.logpdf_inverse_wishart(SW, hyper.omega_W, hyper.B_W(theta.a_W)),
        "a_B": float(np.sum(stats.logpdf_gamma(theta.a_B, hyper.s, hyper.r_B))),
        "a_W": float(np.sum(stats.logpdf_gamma(theta.a_W, hyper.s, hyper.r_W))),
    }


def joint_log_density(data: ChoiceDataset, theta: ParameterState, hyper: Hyperparameters) -> float:
    return float(sum(log_density_terms(data, theta, hyper).values()))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

ZETA_TRUE = np.array([-1.4, 0.8, 1.0, 1.5])


def equicorrelated(K: int, off_diag: float = 0.8) -> np.ndarray:
    return np.full((K, K), off_diag) + (1.0 - off_diag) * np.eye(K)


@dataclass
class DgpConfig:
    """Simulation design. Unset truths default to the benchmark design:
    zeta = (-1.4, 0.8, 1.0, 1.5)[:K], Sigma_B = 1.5 S, Sigma_W = 0.5 S with
    S having unit diagonal and 0.8 off the diagonal."""

    N: int = 1000
    T: int = 20
    K: int = 4
    J: int = 5
    zeta_true: np.ndarray | None = None
    Sigma_B_true: np.ndarray | None = None
    Sigma_W_true: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.N, self.T, self.K, self.J) < 1:
            raise ValidationError("N, T, K and J must be positive")
        if self.zeta_true is None:
            if self.K > ZETA_TRUE.shape[0]:
                raise ValidationError("zeta_true must be given explicitly for K > 4")
            self.zeta_true = ZETA_TRUE[: self.K].copy()
        if self.Sigma_B_true is None:
            self.Sigma_B_true = 1.5 * equicorrelated(self.K)
        if self.Sigma_W_true is None:
            self.Sigma_W_true = 0.5 * equicorrelated(self.K)
        self.zeta_true = np.asarray(self.zeta_true, dtype=float).reshape(self.K)
        self.Sigma_B_true = np.asarray(self.Sigma_B_true, dtype=float).reshape(self.K, self.K)
        self.Sigma_W_true = np.asarray(self.Sigma_W_true, dtype=float).reshape(self.K, self.K)

    def to_dict(self) -> dict:
        return {
            "N": self.N, "T": self.T, "K": self.K, "J": self.J,
            "zeta_true": self.zeta_true.tolist(),
            "Sigma_B_true": self.Sigma_B_true.tolist(),
            "Sigma_W_true": self.Sigma_W_true.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        return cls(**{k: d[k] for k in ("N", "T", "K", "J", "zeta_true", "Sigma_B_true",
                                        "Sigma_W_true", "seed") if k in d})


def _draw_mvn_rows(mean_rows, cov, rng) -> np.ndarray:
    """Rows ``mean_rows[i] + L z_i``; a zero covariance returns the means."""
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.array(mean_rows, dtype=float, copy=True)
    L = stats.cholesky(cov)
    return mean_rows + rng.standard_normal(mean_rows.shape) @ L.T


def simulate_dataset(cfg: DgpConfig) -> tuple[ChoiceDataset, ParameterState]:
    """Draw a balanced synthetic panel and the latent truth that generated it.

    Attributes are U(0, 1); ``mu_n ~ N(zeta, Sigma_B)``;
    ``beta_nt ~ N(mu_n, Sigma_W)``; choices maximize utility plus Gumbel noise.
    A zero ``Sigma_W_true`` gives ``beta_nt = mu_n``.
    """
    rng = stats.make_rng(cfg.seed)
    N, T, K, J = cfg.N, cfg.T, cfg.K, cfg.J
    mu = _draw_mvn_rows(np.broadcast_to(cfg.zeta_true, (N, K)), cfg.Sigma_B_true, rng)
    person = np.repeat(np.arange(N), T)
    beta = _draw_mvn_rows(mu[person], cfg.Sigma_W_true, rng)
    X = rng.uniform(size=(N * T, J, K))
    y = sample_choices(X, beta, rng)
    data = ChoiceDataset(X=X, y=y, person=person)
    truth = ParameterState(cfg.zeta_true.copy(), cfg.Sigma_B_true.copy(), cfg.Sigma_W_true.copy(), mu, beta)
    return data, truth


def error_rate(data: ChoiceDataset, beta: np.ndarray) -> float:
    """Share of choices that differ from the deterministic-utility argmax."""
    best = np.argmax(utilities(data.X, beta, data.avail), axis=-1)
    return float(np.mean(best != data.y))


@dataclass(eq=False)
class Scenario:
    """Hold-out choice sets for predictive evaluation.

    ``persons`` lists the training persons re-used by a within scenario and
    is ``None`` for a between scenario of new persons.
    """

    kind: str
    X: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    persons: np.ndarray | None = None

    def __len__(self) -> int:
        return self.X.shape[0]


def make_validation_scenarios(truth: ParameterState, J: int, rng,
                              n_persons: int = N_VALIDATION_PERSONS) -> tuple[Scenario, Scenario]:
    """Between (new persons, one occasion each) and within (one extra occasion
    for existing persons, reusing their true ``mu_n``) validation samples."""
    rng = stats.make_rng(rng)
    K = truth.zeta.shape[0]
    N = truth.mu.shape[0]
    if N < n_persons:
        raise ValidationError(f"within scenario needs {n_persons} training persons, data has {N}")

    mu_b = _draw_mvn_rows(np.broadcast_to(truth.zeta, (n_persons, K)), truth.Sigma_B, rng)
    beta_b = _draw_mvn_rows(mu_b, truth.Sigma_W, rng)
    X_b = rng.uniform(size=(n_persons, J, K))
    between = Scenario("between", X_b, sample_choices(X_b, beta_b, rng), mu_b, beta_b)

    persons = np.sort(rng.choice(N, size=n_persons, replace=False))
    mu_w = truth.mu[persons].copy()
    beta_w = _draw_mvn_rows(mu_w, truth.Sigma_W, rng)
    X_w = rng.uniform(size=(n_persons, J, K))
    within = Scenario("within", X_w, sample_choices(X_w, beta_w, rng), mu_w, beta_w, persons)
    return between, within
