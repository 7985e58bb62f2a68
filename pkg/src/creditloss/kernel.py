"""Probability and linear-algebra primitives shared by the models.

Everything here is a pure function of its arguments. Randomness enters only
through :class:`RngStream`, which maps ``(master_seed, stream_index, path)``
to an independent counter-based Philox generator, so parallel workers can
reproduce each other's draws exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import (
    DegenerateDataError,
    DomainError,
    InsufficientDataError,
    NumericalError,
)

LGD_CLAMP = 1e-4
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Address of an independent random stream.

    Streams with the same ``(master_seed, stream_index, path)`` produce the
    same draws; any difference in the address gives a statistically
    independent stream (``numpy.random.SeedSequence`` spawn keys).
    """

    master_seed: int
    stream_index: int = 0
    path: tuple = ()

    def __post_init__(self):
        if self.stream_index < 0:
            raise DomainError("stream_index must be non-negative")

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_index, self.path + tuple(keys))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            self.master_seed & _MASK64, spawn_key=(self.stream_index,) + self.path
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator or an int seed."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngStream(0 if rng is None else int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


# ---------------------------------------------------------------------------
# normal distribution
# ---------------------------------------------------------------------------

def std_normal_cdf(x):
    """Standard normal CDF, accurate to ~1e-16 absolute (erfc based)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("std_normal_cdf requires finite input")
    out = special.ndtr(x)
    return float(out) if out.ndim == 0 else out


def std_normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0.0) | ~(p < 1.0)):
        raise DomainError("std_normal_quantile requires 0 < p < 1")
    out = special.ndtri(p)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# beta distribution
# ---------------------------------------------------------------------------

def _check_beta_params(mu, nu):
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(~(mu > 0)) or np.any(~(nu > 0)) or not (
        np.all(np.isfinite(mu)) and np.all(np.isfinite(nu))
    ):
        raise DomainError("beta parameters must be positive and finite")
    return mu, nu


def beta_sample(mu, nu, rng, size=None):
    """Draw from Beta(mu, nu).

    ``rng`` may be an :class:`RngStream` (a fresh generator is built from
    it, so repeated calls with the same stream repeat the same draws) or a
    live ``numpy.random.Generator``.
    """
    mu, nu = _check_beta_params(mu, nu)
    out = as_generator(rng).beta(mu, nu, size=size)
    return float(out) if np.ndim(out) == 0 else out


def beta_cdf(x, mu, nu):
    """Regularized incomplete beta function I_x(mu, nu)."""
    mu, nu = _check_beta_params(mu, nu)
    x = np.asarray(x, dtype=float)
    if np.any(~(x >= 0.0)) or np.any(~(x <= 1.0)):
        raise DomainError("beta_cdf requires x in [0, 1]")
    out = special.betainc(mu, nu, x)
    return float(out) if np.ndim(out) == 0 else out


def beta_inverse_cdf(u, mu, nu):
    mu, nu = _check_beta_params(mu, nu)
    u = np.asarray(u, dtype=float)
    if np.any(~(u >= 0.0)) or np.any(~(u <= 1.0)):
        raise DomainError("beta_inverse_cdf requires u in [0, 1]")
    out = special.betaincinv(mu, nu, u)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# covariance matrices
# ---------------------------------------------------------------------------

def _as_symmetric(cov, rtol=1e-12):
    cov = np.array(cov, dtype=float, copy=True)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise DomainError("covariance matrix contains non-finite entries")
    scale = max(np.max(np.abs(cov), initial=0.0), 1.0)
    if np.max(np.abs(cov - cov.T), initial=0.0) > rtol * scale:
        raise DomainError("covariance matrix is not symmetric")
    return 0.5 * (cov + cov.T)


def repair_psd(cov):
    """Clip negative eigenvalues to zero, then restore unit diagonal entries.

    Only rows whose input diagonal equals 1 are rescaled; other variances
    keep their clipped values.
    """
    cov = _as_symmetric(cov)
    if cov.size == 0:
        return cov
    unit = np.isclose(np.diag(cov), 1.0, rtol=0.0, atol=1e-12)
    w, v = np.linalg.eigh(cov)
    if w[0] >= 0.0:
        return cov
    fixed = (v * np.clip(w, 0.0, None)) @ v.T
    fixed = 0.5 * (fixed + fixed.T)
    d = np.diag(fixed).copy()
    scale = np.ones_like(d)
    ok = unit & (d > 0)
    scale[ok] = 1.0 / np.sqrt(d[ok])
    fixed = fixed * np.outer(scale, scale)
    np.fill_diagonal(fixed, np.where(ok, 1.0, np.diag(fixed)))
    return fixed


def cholesky_psd(cov, jitter=1e-12):
    """Lower-triangular factor of ``cov``, repairing it first if needed.

    Positive-definite input is factored as is. Otherwise the matrix goes
    through :func:`repair_psd` and is factored with a diagonal jitter that
    starts at ``jitter`` and grows tenfold until the factorization succeeds.
    """
    cov = _as_symmetric(cov)
    n = cov.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    fixed = repair_psd(cov)
    eps = jitter
    eye = np.eye(n)
    for _ in range(12):
        try:
            return np.linalg.cholesky(fixed + eps * eye)
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NumericalError("Cholesky factorization failed after PSD repair")


def sample_correlated_gaussians(factor, rng, size=None):
    """Return ``factor @ z`` for i.i.d. standard normal ``z``.

    With ``size=None`` a single vector is returned; otherwise an array of
    shape ``(size, d)`` with one draw per row.
    """
    factor = np.asarray(factor, dtype=float)
    d = factor.shape[0] if factor.ndim == 2 else 0
    n = 1 if size is None else int(size)
    if d == 0:
        out = np.zeros((n, 0))
    else:
        z = as_generator(rng).standard_normal((n, d))
        out = z @ factor.T
    return out[0] if size is None else out


def sample_cov(series_a, series_b) -> float:
    """Unbiased sample covariance after pairwise deletion of NaNs."""
    a = np.asarray(series_a, dtype=float)
    b = np.asarray(series_b, dtype=float)
    if a.shape != b.shape:
        raise DomainError("series must have equal length")
    keep = np.isfinite(a) & np.isfinite(b)
    a, b = a[keep], b[keep]
    n = a.size
    if n < 2:
        raise InsufficientDataError(f"need at least 2 paired observations, got {n}")
    return float(np.dot(a - a.mean(), b - b.mean()) / (n - 1))


# ---------------------------------------------------------------------------
# beta maximum likelihood with a fixed mean
# ---------------------------------------------------------------------------

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f, lo, hi, tol=1e-8, max_iter=500):
    """Maximize a unimodal function on [lo, hi]; return the argmax."""
    a, b = float(lo), float(hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def beta_loglik_fixed_mean(mu, n, sum_log_x, sum_log_1mx, m):
    """Beta(mu, mu(1-m)/m) log-likelihood from sufficient statistics."""
    nu = mu * (1.0 - m) / m
    return (
        n * (special.gammaln(mu + nu) - special.gammaln(mu) - special.gammaln(nu))
        + (mu - 1.0) * sum_log_x
        + (nu - 1.0) * sum_log_1mx
    )


def fit_beta_mu_mle(observations, m, *, clamp=LGD_CLAMP, min_obs=5,
                    log_bounds=(-8.0, 8.0), tol=1e-8) -> float:
    """Maximum-likelihood shape ``mu`` of Beta(mu, mu(1-m)/m).

    Observations are clamped to ``[clamp, 1 - clamp]`` so that exact 0 and 1
    losses do not send the likelihood to minus infinity. The search runs over
    ``log mu`` inside ``log_bounds``.
    """
    if not 0.0 < m < 1.0:
        raise DomainError("mean m must lie in (0, 1)")
    x = np.asarray(observations, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size < min_obs:
        raise InsufficientDataError(
            f"need at least {min_obs} observations, got {x.size}"
        )
    x = np.clip(x, clamp, 1.0 - clamp)
    if np.ptp(x) == 0.0:
        raise DegenerateDataError("all observations are equal")
    n = x.size
    slx = float(np.log(x).sum())
    sl1x = float(np.log1p(-x).sum())

    def objective(log_mu):
        return beta_loglik_fixed_mean(math.exp(log_mu), n, slx, sl1x, m)

    return math.exp(golden_section_max(objective, *log_bounds, tol=tol))
