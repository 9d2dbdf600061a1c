"""Seeded random streams, distributions and the Metropolis kernel."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, multigammaln

__all__ = [
    "make_rng",
    "chain_rngs",
    "run_chains",
    "sample_mvn",
    "sample_inverse_gamma",
    "sample_inverse_wishart",
    "inverse_gamma_posterior",
    "inverse_wishart_posterior",
    "distance_matrix",
    "exp_corr",
    "mh_step",
    "logpdf_normal",
    "logpdf_mvn",
    "logpdf_lognormal",
    "logpdf_gamma_meanvar",
    "logpdf_inverse_gamma",
    "logpdf_inverse_wishart",
    "Bounded",
    "AdaptiveScale",
]

_LOG_2PI = math.log(2.0 * math.pi)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for (seed, stream); same pair, same draws."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def chain_rngs(seed: int, n_chains: int) -> list:
    return [make_rng(seed, c) for c in range(n_chains)]


def _call_with_stream(fn, seed, stream):
    return fn(make_rng(seed, stream))


def run_chains(fn, seed: int, n_chains: int, threads: int = 1) -> list:
    """Run ``fn(rng)`` once per chain, chain c drawing from stream (seed, c).

    With ``threads > 1`` chains run in worker processes (``fn`` must then be
    picklable).  Each chain owns its generator, so the per-chain results do
    not depend on scheduling.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    if threads <= 1 or n_chains == 1:
        return [_call_with_stream(fn, seed, c) for c in range(n_chains)]
    with ProcessPoolExecutor(max_workers=min(threads, n_chains)) as pool:
        futures = [pool.submit(_call_with_stream, fn, seed, c) for c in range(n_chains)]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# sampling


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance matrix is not positive definite") from exc


def sample_mvn(rng: np.random.Generator, mean, cov, size=None) -> np.ndarray:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mean.size, mean.size):
        raise ValueError(f"cov shape {cov.shape} does not match mean of length {mean.size}")
    shape = (mean.size,) if size is None else (*np.atleast_1d(size), mean.size)
    if not np.any(cov):
        return np.broadcast_to(mean, shape).copy()
    L = _cholesky(cov)
    z = rng.standard_normal(shape)
    return mean + z @ L.T


def sample_inverse_gamma(rng: np.random.Generator, a, b, size=None):
    """IG(a, b) with density proportional to x^{-a-1} exp(-b/x)."""
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise ValueError("inverse-gamma shape and rate must be positive")
    return b / rng.gamma(a, 1.0, size=size)


def sample_inverse_wishart(rng: np.random.Generator, r: float, S) -> np.ndarray:
    """IW(r, S) draw via the Bartlett factor of Wishart(r, S^{-1}).

    Mean S / (r - m - 1) for r > m + 1.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    m = S.shape[0]
    if not r > m - 1:
        raise ValueError(f"degrees of freedom {r} must exceed dimension - 1 = {m - 1}")
    L = _cholesky(np.linalg.inv(S))
    A = np.zeros((m, m))
    A[np.diag_indices(m)] = np.sqrt(rng.chisquare(r - np.arange(m)))
    if m > 1:
        A[np.tril_indices(m, -1)] = rng.standard_normal(m * (m - 1) // 2)
    LA = L @ A
    W = LA @ LA.T
    out = np.linalg.inv(W)
    return 0.5 * (out + out.T)


def inverse_gamma_posterior(a: float, b: float, residuals) -> tuple:
    """(a + n/2, b + sum(residuals^2)/2) for Gaussian residuals with IG prior."""
    residuals = np.asarray(residuals, dtype=float)
    return a + residuals.size / 2.0, b + 0.5 * float(np.sum(residuals**2))


def inverse_wishart_posterior(r: float, S, residuals) -> tuple:
    """(r + n, S + sum_i e_i e_i^T) for (n, m) Gaussian residual rows."""
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    return r + residuals.shape[0], np.asarray(S, dtype=float) + residuals.T @ residuals


# ---------------------------------------------------------------------------
# spatial correlation


def distance_matrix(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.sum(diff**2, axis=-1))


def exp_corr(phi: float, distances) -> np.ndarray:
    """Exponential correlation exp(-phi d_ij)."""
    d = np.asarray(distances, dtype=float)
    if not phi > 0:
        raise ValueError(f"phi must be > 0, got {phi}")
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    if math.isinf(phi):
        return (d == 0).astype(float)
    return np.exp(-phi * d)


# ---------------------------------------------------------------------------
# log densities


def logpdf_normal(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def logpdf_mvn(x, mean, cov) -> np.ndarray:
    """Row-wise N(mean, cov) log density; x and mean broadcast to (..., m)."""
    cov = np.atleast_2d(cov)
    m = cov.shape[0]
    L = _cholesky(cov)
    resid = np.asarray(x, dtype=float) - mean
    z = np.linalg.solve(L, np.moveaxis(np.atleast_1d(resid), -1, 0).reshape(m, -1))
    quad = np.sum(z**2, axis=0).reshape(np.shape(resid)[:-1])
    return -0.5 * (m * _LOG_2PI + 2.0 * np.sum(np.log(np.diag(L))) + quad)


def logpdf_lognormal(x, mu_log, var):
    """Log density of x > 0 with log x ~ N(mu_log, var); -inf elsewhere."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log(x)
        out = logpdf_normal(lx, mu_log, var) - lx
    return np.where(x > 0, out, -np.inf)


def logpdf_gamma_meanvar(x, mean, var):
    """Gamma log density parameterized by mean and variance (shape mean^2/var)."""
    x = np.asarray(x, dtype=float)
    k = mean**2 / var
    rate = mean / var
    with np.errstate(divide="ignore", invalid="ignore"):
        out = k * np.log(rate) - gammaln(k) + (k - 1.0) * np.log(x) - rate * x
    return np.where((x > 0) & (mean > 0), out, -np.inf)


def logpdf_inverse_gamma(x, a, b):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x
    return np.where(x > 0, out, -np.inf)


def logpdf_inverse_wishart(X, r, S) -> float:
    X = np.atleast_2d(X)
    S = np.atleast_2d(S)
    m = X.shape[0]
    sign, logdet_x = np.linalg.slogdet(X)
    if sign <= 0:
        return -np.inf
    _, logdet_s = np.linalg.slogdet(S)
    tr = np.trace(np.linalg.solve(X, S))
    return (
        0.5 * r * logdet_s
        - 0.5 * r * m * math.log(2.0)
        - multigammaln(0.5 * r, m)
        - 0.5 * (r + m + 1) * logdet_x
        - 0.5 * tr
    )


# ---------------------------------------------------------------------------
# Metropolis


def mh_step(rng: np.random.Generator, current, log_target, proposal_sd, current_logp=None):
    """Gaussian random-walk Metropolis update.

    Returns ``(value, accepted, logp)`` where ``logp`` is the log target at the
    returned value, so callers can carry it into the next step.
    """
    if current_logp is None:
        current_logp = log_target(current)
    if np.isnan(current_logp):
        raise ValueError("log target is NaN at the current state")
    proposal = current + proposal_sd * rng.standard_normal(np.shape(current))
    prop_logp = log_target(proposal)
    log_u = math.log(rng.random())
    if not np.isnan(prop_logp) and log_u < prop_logp - current_logp:
        return proposal, True, prop_logp
    return current, False, current_logp


@dataclass(frozen=True)
class Bounded:
    """Uniform(lower, upper) support mapped to the real line by a logit."""

    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"bounds must satisfy lower < upper, got ({self.lower}, {self.upper})")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def to_free(self, x):
        u = (np.asarray(x, dtype=float) - self.lower) / self.width
        with np.errstate(divide="ignore"):
            return np.log(u) - np.log1p(-u)

    def from_free(self, z):
        return self.lower + self.width / (1.0 + np.exp(-np.asarray(z, dtype=float)))

    def log_jacobian(self, z):
        # log dx/dz = log(width) + log s(z) + log(1 - s(z))
        z = np.asarray(z, dtype=float)
        return math.log(self.width) - np.logaddexp(0.0, -z) - np.logaddexp(0.0, z)

    def contains(self, x) -> bool:
        return bool(self.lower < x < self.upper)

    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


class AdaptiveScale:
    """Per-site random-walk scales tuned in batches during burn-in.

    Every ``batch`` proposals the log scale moves up when the batch acceptance
    exceeds ``high`` and down when it falls below ``low``.  ``freeze()`` stops
    adaptation so the post burn-in kernel is a fixed Metropolis kernel.
    """

    def __init__(self, initial, batch: int = 50, low: float = 0.30, high: float = 0.45):
        self.scale = np.array(initial, dtype=float)
        self.batch = batch
        self.low = low
        self.high = high
        self.frozen = False
        self._accepts = np.zeros_like(self.scale)
        self._tries = 0
        self._n_batches = 0
        self.total_accepts = np.zeros_like(self.scale)
        self.total_tries = 0

    def record(self, accepted) -> None:
        accepted = np.asarray(accepted, dtype=float)
        self.total_accepts += accepted
        self.total_tries += 1
        if self.frozen:
            return
        self._accepts += accepted
        self._tries += 1
        if self._tries >= self.batch:
            self._n_batches += 1
            rate = self._accepts / self._tries
            step = min(0.5, 2.0 / math.sqrt(self._n_batches))
            self.scale = np.where(rate > self.high, self.scale * math.exp(step), self.scale)
            self.scale = np.where(rate < self.low, self.scale * math.exp(-step), self.scale)
            self._accepts[...] = 0.0
            self._tries = 0

    def freeze(self) -> None:
        self.frozen = True
        self.total_accepts = np.zeros_like(self.scale)
        self.total_tries = 0

    @property
    def acceptance(self):
        if self.total_tries == 0:
            return np.full_like(self.scale, np.nan)
        return self.total_accepts / self.total_tries
