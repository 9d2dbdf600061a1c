"""Posterior predictive replication, D = G + P, state MSE and chain summaries.

All scores are on the natural concentration scale: replicates from the
log-scale engine are exponentiated before scoring.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .statespace import MeasurementSeries, PosteriorSamples
from .stochastics import distance_matrix, exp_corr, make_rng

__all__ = [
    "replicate",
    "dgp_score",
    "state_mse",
    "effective_sample_size",
    "ParamSummary",
    "AssessmentReport",
    "summarize",
    "assess",
]


def _std_normal(rng, shape):
    return rng.standard_normal(shape)


def _chol_batch(covs):
    # per-draw Cholesky factors of (k, p, p) covariances
    return np.linalg.cholesky(covs)


def replicate(samples: PosteriorSamples, data: MeasurementSeries | None = None, rng=None) -> np.ndarray:
    """One replicate observation per retained draw and datapoint.

    Returns an array of shape (draws, n, p): draws over all chains, n
    timepoints, p measurement components.
    """
    rng = make_rng(0) if rng is None else rng
    if samples.n_draws == 0:
        raise ValueError("no retained draws")
    key = samples.trajectory_key()
    X = samples.flat(key)
    k, n, p = X.shape
    if data is not None and data.values.shape != (n, p):
        raise ValueError(f"samples are for a {n}x{p} series, data is {data.values.shape}")
    engine = samples.engine

    if engine in ("gaussian", "bnlr"):
        B = np.asarray(samples.options.get("B", np.eye(p)), dtype=float)
        mean = X @ B.T
        if "Sigma_nu" in samples.draws:
            L = _chol_batch(samples.flat("Sigma_nu"))
            noise = np.einsum("kpq,knq->knp", L, _std_normal(rng, (k, n, p)))
        else:
            sd = np.sqrt(samples.flat("sigma2"))
            noise = sd[:, None, None] * _std_normal(rng, (k, n, p))
        return mean + noise

    if engine != "nongaussian":
        raise ValueError(f"unknown engine {engine!r}")
    logX = np.log(X)
    spatial = samples.options.get("spatial", "none")
    if samples.kind == "eddy":
        noise = np.sqrt(samples.flat("nugget"))[:, None, None] * _std_normal(rng, (k, n, p))
        if spatial == "exponential":
            d = distance_matrix(samples.coords)
            phis = samples.flat("phi")
            s2 = samples.flat("sigma2")
            covs = s2[:, None, None] * np.stack([exp_corr(ph, d) for ph in phis])
            L = _chol_batch(covs)
            noise += np.einsum("kpq,knq->knp", L, _std_normal(rng, (k, n, p)))
        elif spatial == "unstructured":
            L = _chol_batch(samples.flat("Sigma_nu"))
            noise += np.einsum("kpq,knq->knp", L, _std_normal(rng, (k, n, p)))
    elif "Sigma_nu" in samples.draws:
        L = _chol_batch(samples.flat("Sigma_nu"))
        noise = np.einsum("kpq,knq->knp", L, _std_normal(rng, (k, n, p)))
    else:
        noise = np.sqrt(samples.flat("sigma2"))[:, None, None] * _std_normal(rng, (k, n, p))
    return np.exp(logX + noise)


def dgp_score(replicates, data) -> tuple:
    """Posterior predictive loss (D, G, P).

    G sums squared distances between observations and replicate means; P sums
    the traces of the replicate covariances (n - 1 denominator).
    """
    reps = np.asarray(replicates, dtype=float)
    if reps.ndim == 2:
        reps = reps[..., None]
    if reps.shape[0] == 0:
        raise ValueError("no replicates")
    y = data.values if isinstance(data, MeasurementSeries) else np.asarray(data, dtype=float)
    y = y.reshape(reps.shape[1:])
    G = float(np.sum((y - reps.mean(axis=0)) ** 2))
    P = float(np.sum(reps.var(axis=0, ddof=1))) if reps.shape[0] > 1 else 0.0
    return G + P, G, P


def state_mse(samples: PosteriorSamples, truth) -> float:
    """Mean squared error of the posterior-mean trajectory against ``truth``."""
    est = samples.posterior_mean_trajectory()
    truth = np.asarray(truth, dtype=float)
    if truth.size != est.size:
        raise ValueError(f"truth has {truth.size} entries, fitted grid has {est.size}")
    return float(np.mean((est - truth.reshape(est.shape)) ** 2))


def _autocov(x):
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def effective_sample_size(chains) -> float:
    """Initial-positive-sequence ESS summed over chains.

    ``chains`` is (chains, draws) or a single 1-d chain.  A constant chain
    reports the number of draws.
    """
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    total = 0.0
    for row in x:
        n = row.size
        gamma = _autocov(row)
        if n < 4 or not gamma[0] > 1e-300 * max(1.0, float(np.mean(row**2))):
            total += n
            continue
        rho = gamma / gamma[0]
        tau = -1.0
        for k in range(0, n - 1, 2):
            pair = rho[k] + rho[k + 1]
            if pair <= 0:
                break
            tau += 2.0 * pair
        total += min(n, n / tau) if tau > 0 else n
    return float(total)


@dataclass
class ParamSummary:
    median: float
    q025: float
    q975: float
    covered: bool | None = None


@dataclass
class AssessmentReport:
    params: dict
    acceptance: dict = field(default_factory=dict)
    ess: dict = field(default_factory=dict)
    D: float | None = None
    G: float | None = None
    P: float | None = None
    MSE: float | None = None

    def to_dict(self) -> dict:
        out = {"D": self.D, "G": self.G, "P": self.P, "MSE": self.MSE}
        out["params"] = {
            k: {"median": v.median, "q025": v.q025, "q975": v.q975, "covered": v.covered}
            for k, v in self.params.items()
        }
        out["diagnostics"] = {"acceptance": dict(self.acceptance), "ess": dict(self.ess)}
        return out


def _scalar_series(samples: PosteriorSamples) -> dict:
    """Scalar parameter draws, matrices split into their upper-triangle entries."""
    out = {}
    for name, arr in samples.draws.items():
        if name in ("state", "mean"):
            continue
        if arr.ndim == 2:
            out[name] = arr
        elif arr.ndim == 4:
            p = arr.shape[2]
            for i in range(p):
                for j in range(i, p):
                    out[f"{name}[{i},{j}]"] = arr[:, :, i, j]
    return out


def summarize(samples: PosteriorSamples, true_values: dict | None = None) -> AssessmentReport:
    """Medians, central 95% intervals, coverage flags and ESS per parameter."""
    if samples.n_draws == 0:
        raise ValueError("no retained draws")
    true_values = true_values or {}
    params, ess = {}, {}
    for name, arr in _scalar_series(samples).items():
        flat = arr.ravel()
        q025, med, q975 = np.quantile(flat, [0.025, 0.5, 0.975])
        covered = None
        if name in true_values:
            covered = bool(q025 <= true_values[name] <= q975)
        params[name] = ParamSummary(float(med), float(q025), float(q975), covered)
        ess[name] = effective_sample_size(arr)
    return AssessmentReport(params=params, acceptance=dict(samples.acceptance), ess=ess)


def assess(samples: PosteriorSamples, data: MeasurementSeries, truth=None, true_values=None, rng=None) -> AssessmentReport:
    """Full report: summary, D = G + P on the data and MSE.

    MSE uses ``truth`` (defaulting to ``data.truth``) and falls back to the
    measurements when no truth is available.
    """
    report = summarize(samples, true_values)
    reps = replicate(samples, data, rng)
    report.D, report.G, report.P = dgp_score(reps, data)
    if truth is None:
        truth = data.truth if data.truth is not None else data.values
    report.MSE = state_mse(samples, truth)
    return report
