"""Seedable sampling and numerically stable density / linear-algebra primitives.

Conventions
-----------
Gamma(shape, rate) has density proportional to ``a**(shape - 1) * exp(-rate * a)``.
numpy parameterizes by scale, so draws use ``scale = 1 / rate``.

IW(dof, scale) has density proportional to
``|scale|**(dof/2) |Omega|**(-(dof + K + 1)/2) exp(-tr(scale Omega^-1) / 2)``,
i.e. ``Omega^-1 ~ Wishart(dof, scale^-1)`` and ``E[Omega] = scale / (dof - K - 1)``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, multigammaln

from .exceptions import NumericalError, ValidationError

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def make_rng(seed=None) -> np.random.Generator:
    """Return a PCG64 generator; a Generator passes through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def split_rng(seed, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child streams deterministically from ``seed``.

    Child ``i`` depends only on ``(seed, i)``, so streams can be handed to
    concurrent tasks without affecting each other's draws.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(child)) for child in ss.spawn(n)]


def substream(seed: int, *key: int) -> np.random.Generator:
    """Stream addressed by a counter key, e.g. ``substream(seed, chain)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


# ---------------------------------------------------------------------------
# Log-sum-exp
# ---------------------------------------------------------------------------

def log_sum_exp(v, axis=None):
    """``log(sum(exp(v)))`` along ``axis`` using the max-shift form.

    ``-inf`` entries are allowed (masked alternatives) as long as every slice
    holds at least one finite value.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValidationError("log_sum_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValidationError("log_sum_exp needs at least one finite entry per slice")
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=float)
    m = np.max(v, axis=axis, keepdims=True)
    e = np.exp(v - m)
    return e / np.sum(e, axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# SPD matrices
# ---------------------------------------------------------------------------

def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with a single jittered retry.

    On failure the diagonal is inflated by ``1e-10 * trace / K`` and the
    factorization retried once; a second failure raises NumericalError.
    Works on stacks of matrices (``(..., K, K)``).
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    k = a.shape[-1]
    tr = np.trace(a, axis1=-2, axis2=-1)[..., None, None]
    jittered = a + (1e-10 * np.abs(tr) / k + 1e-300) * np.eye(k)
    try:
        return np.linalg.cholesky(jittered)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("matrix is not positive definite (after jitter retry)") from exc


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def spd_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix (or stack) through its Cholesky factor."""
    L = cholesky(a)
    k = L.shape[-1]
    if L.ndim == 2:
        Linv = solve_triangular(L, np.eye(k), lower=True)
    else:
        Linv = np.linalg.solve(L, np.broadcast_to(np.eye(k), L.shape))
    return np.swapaxes(Linv, -1, -2) @ Linv


class SpdMatrix:
    """Immutable symmetric positive-definite matrix with a cached Cholesky factor."""

    __slots__ = ("_values", "_factor")

    def __init__(self, values, factor=None):
        values = np.array(values, dtype=float, copy=True)
        if values.ndim == 0:
            values = values.reshape(1, 1)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValidationError(f"SpdMatrix needs a square matrix, got shape {values.shape}")
        scale = max(np.max(np.abs(values)), 1e-300)
        if np.max(np.abs(values - values.T)) > 1e-12 * scale:
            raise ValidationError("SpdMatrix values are not symmetric")
        values = symmetrize(values)
        if factor is None:
            factor = cholesky(values)
        values.setflags(write=False)
        factor = np.array(factor, dtype=float)
        factor.setflags(write=False)
        self._values = values
        self._factor = factor

    @classmethod
    def from_factor(cls, factor) -> "SpdMatrix":
        factor = np.asarray(factor, dtype=float)
        return cls(factor @ factor.T, factor=factor)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def factor(self) -> np.ndarray:
        return self._factor

    @property
    def dim(self) -> int:
        return self._values.shape[0]

    def inv(self) -> np.ndarray:
        Linv = solve_triangular(self._factor, np.eye(self.dim), lower=True)
        return Linv.T @ Linv

    def solve(self, b) -> np.ndarray:
        z = solve_triangular(self._factor, b, lower=True)
        return solve_triangular(self._factor.T, z, lower=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._factor))))

    def __array__(self, dtype=None, copy=None):
        return self._values.astype(dtype) if dtype is not None else self._values.copy()

    def __repr__(self) -> str:
        return f"SpdMatrix({self._values.tolist()})"


def _factor_of(cov) -> np.ndarray:
    if isinstance(cov, SpdMatrix):
        return cov.factor
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov.reshape(1, 1)
    return cholesky(cov)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def sample_mvn(mean, cov, rng, size=None) -> np.ndarray:
    """Draw ``mean + L z`` with ``L`` the lower Cholesky factor of ``cov``.

    ``size`` adds leading draw dimensions; the trailing axis has length K.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = _factor_of(cov)
    if L.shape[0] != mean.shape[-1]:
        raise ValidationError(f"mean has length {mean.shape[-1]} but cov is {L.shape}")
    shape = (L.shape[0],) if size is None else tuple(np.atleast_1d(size)) + (L.shape[0],)
    z = rng.standard_normal(shape)
    return mean + z @ L.T


def sample_gamma(shape, rate, rng, size=None):
    """Gamma draw in the (shape, rate) parameterization; ``E = shape / rate``."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise ValidationError("gamma shape and rate must be positive")
    out = rng.gamma(shape, 1.0 / rate, size=size)
    return float(out) if np.ndim(out) == 0 else out


def _bartlett_factor(dof: float, k: int, rng, size=None) -> np.ndarray:
    """Lower-triangular A with ``A A^T ~ Wishart(dof, I_k)``."""
    lead = () if size is None else (int(size),)
    A = np.zeros(lead + (k, k))
    diag_dof = dof - np.arange(k)
    A[..., np.arange(k), np.arange(k)] = np.sqrt(rng.chisquare(diag_dof, size=lead + (k,)))
    rows, cols = np.tril_indices(k, -1)
    if rows.size:
        A[..., rows, cols] = rng.standard_normal(lead + (rows.size,))
    return A


def sample_inverse_wishart(dof: float, scale, rng, size=None):
    """Inverse-Wishart draw via the Bartlett decomposition.

    With ``scale = Ls Ls^T`` and ``A A^T ~ Wishart(dof, I)``, the draw is
    ``(Ls A^-T)(Ls A^-T)^T``, which is the inverse of a
    ``Wishart(dof, scale^-1)`` draw. Returns an ndarray (stacked when
    ``size`` is given).
    """
    Ls = _factor_of(scale)
    k = Ls.shape[0]
    if not dof > k - 1:
        raise ValidationError(f"inverse-Wishart dof must exceed K - 1 = {k - 1}, got {dof}")
    A = _bartlett_factor(dof, k, rng, size)
    if size is None:
        Ainv = solve_triangular(A, np.eye(k), lower=True)
    else:
        Ainv = np.linalg.inv(A)
    T = Ls @ np.swapaxes(Ainv, -1, -2)
    return T @ np.swapaxes(T, -1, -2)


# ---------------------------------------------------------------------------
# Log densities (fully normalized)
# ---------------------------------------------------------------------------

def logpdf_mvn(x, mean, cov) -> float | np.ndarray:
    """Normal log density via a triangular solve; ``x`` may be a stack of points."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    L = _factor_of(cov)
    k = L.shape[0]
    diff = np.atleast_2d(x - mean)
    if diff.shape[-1] != k:
        raise ValidationError(f"point has length {diff.shape[-1]} but cov is {L.shape}")
    z = solve_triangular(L, diff.T, lower=True)
    quad = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    out = -0.5 * (k * LOG_2PI + logdet + quad)
    return float(out[0]) if x.ndim <= 1 else out


def logpdf_gamma(a, shape, rate):
    a = np.asarray(a, dtype=float)
    out = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(a) - rate * a
    return float(out) if np.ndim(out) == 0 else out


def logpdf_inverse_wishart(omega, dof: float, scale) -> float:
    omega_f = _factor_of(omega)
    scale_f = _factor_of(scale)
    k = omega_f.shape[0]
    logdet_omega = 2.0 * np.sum(np.log(np.diag(omega_f)))
    logdet_scale = 2.0 * np.sum(np.log(np.diag(scale_f)))
    # tr(scale Omega^-1) = ||Lo^-1 Ls||_F^2
    M = solve_triangular(omega_f, scale_f, lower=True)
    tr = float(np.sum(M * M))
    return float(
        0.5 * dof * logdet_scale
        - 0.5 * dof * k * math.log(2.0)
        - multigammaln(0.5 * dof, k)
        - 0.5 * (dof + k + 1) * logdet_omega
        - 0.5 * tr
    )
