"""Linear-Gaussian state-space engine.

Measurement Y_i = B C_i + nu_i, nu ~ N(0, Sigma_nu); transition
C_i = F_i C_{i-1} + h_i + omega_i, omega ~ N(0, Sigma_omega); the first state has
prior N(m0, Sigma0).  Scalar-variance models (one-zone, eddy, random walk) use
Sigma_nu = sigma2 I and Sigma_omega = tau2 I with inverse-gamma priors; the
two-zone model uses inverse-Wishart priors on full 2x2 matrices.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _recursions as rec
from .statespace import (
    Affine,
    MeasurementSeries,
    ModelSetup,
    NumericalError,
    PosteriorSamples,
    PriorSpec,
    transition,
)
from .stochastics import (
    AdaptiveScale,
    inverse_gamma_posterior,
    inverse_wishart_posterior,
    logpdf_mvn,
    logpdf_normal,
    make_rng,
    sample_inverse_gamma,
    sample_inverse_wishart,
)

__all__ = [
    "GaussianSSMSpec",
    "FilterResult",
    "SmootherResult",
    "kalman_filter",
    "kalman_filter_affine",
    "kalman_smoother",
    "gibbs_fit_gaussian",
]


@dataclass
class GaussianSSMSpec:
    """Model, priors and sampler options for the Gaussian engine.

    ``state_sampler="conditional"`` draws states forward from
    N(M_i m_i, M_i) with the one-step predictive covariance; ``"ffbs"`` draws
    the whole trajectory jointly by forward filtering, backward sampling.
    ``fixed`` holds parameters that are not updated (names as in the draws).
    """

    setup: ModelSetup
    priors: PriorSpec = None
    B: np.ndarray | None = None
    m0: np.ndarray | None = None
    Sigma0: np.ndarray | None = None
    state_sampler: str = "conditional"
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.priors is None:
            self.priors = PriorSpec.defaults(self.setup.kind)
        if self.state_sampler not in ("conditional", "ffbs"):
            raise ValueError(f"unknown state sampler {self.state_sampler!r}")
        if self.B is not None:
            B = np.atleast_2d(np.asarray(self.B, dtype=float))
            if B.shape[0] != B.shape[1]:
                raise ValueError("B must be square")
            self.B = B
        if self.Sigma0 is not None:
            S0 = np.atleast_2d(np.asarray(self.Sigma0, dtype=float))
            try:
                np.linalg.cholesky(S0)
            except np.linalg.LinAlgError as exc:
                raise ValueError("Sigma0 must be positive definite") from exc
            self.Sigma0 = S0

    @property
    def scalar_noise(self) -> bool:
        return self.setup.kind != "two-zone"

    def design(self, p: int) -> np.ndarray:
        return np.eye(p) if self.B is None else self.B

    def initial_prior(self, data: MeasurementSeries):
        p = data.dim
        if self.m0 is None:
            y0 = data.values[0]
            m0 = np.where(np.isfinite(y0), y0, 0.0)
            m0 = np.linalg.solve(self.design(p), m0)
        else:
            m0 = np.broadcast_to(np.asarray(self.m0, dtype=float), (p,)).copy()
        S0 = 10.0 * np.eye(p) if self.Sigma0 is None else self.Sigma0
        return m0, S0


@dataclass(frozen=True)
class FilterResult:
    pred_mean: np.ndarray
    pred_cov: np.ndarray
    filt_mean: np.ndarray
    filt_cov: np.ndarray
    loglik: float
    F: np.ndarray
    h: np.ndarray


@dataclass(frozen=True)
class SmootherResult:
    mean: np.ndarray
    cov: np.ndarray


def _as_cov(x, p: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return float(x) * np.eye(p)
    x = np.atleast_2d(x)
    if x.shape != (p, p):
        raise ValueError(f"covariance must be scalar or {p}x{p}, got shape {x.shape}")
    return x


def kalman_filter_affine(F, h, B, R, W, m0, P0, y) -> FilterResult:
    """Kalman filter for arbitrary affine transitions.

    ``F`` (n-1, p, p), ``h`` (n-1, p), observations ``y`` (n, p); the first
    state has prior N(m0, P0).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[0] == 1 and y.shape[1] != np.shape(m0)[0]:
        y = y.T
    n, p = y.shape
    F = np.ascontiguousarray(np.asarray(F, dtype=float).reshape(n - 1, p, p))
    h = np.ascontiguousarray(np.asarray(h, dtype=float).reshape(n - 1, p))
    args = [
        np.ascontiguousarray(np.atleast_2d(np.asarray(a, dtype=float)))
        for a in (B, R, W, P0)
    ]
    m0 = np.ascontiguousarray(np.atleast_1d(np.asarray(m0, dtype=float)))
    out = rec.kalman_filter_arrays(F, h, args[0], args[1], args[2], m0, args[3], np.ascontiguousarray(y))
    return FilterResult(*out[:4], float(out[4]), F, h)


def _check_data(data: MeasurementSeries, setup: ModelSetup):
    if data.kind != setup.kind and setup.kind != "random-walk":
        raise ValueError(f"data are for the {data.kind} model, spec is {setup.kind}")


def kalman_filter(spec: GaussianSSMSpec, params: dict, noise, data: MeasurementSeries) -> FilterResult:
    """Kalman filter of ``data`` under physical ``params`` and noise (Sigma_nu, Sigma_omega).

    Noise entries may be scalars (times identity) or p x p matrices.
    """
    _check_data(data, spec.setup)
    p = data.dim
    aff = transition(spec.setup, params, data.times, data.coords)
    R = _as_cov(noise[0], p)
    W = _as_cov(noise[1], p)
    m0, P0 = spec.initial_prior(data)
    return kalman_filter_affine(aff.matrices(), aff.h, spec.design(p), R, W, m0, P0, data.values)


def kalman_smoother(filt: FilterResult, spec=None, params=None, noise=None) -> SmootherResult:
    """Rauch-Tung-Striebel smoother; the filter result carries the transitions."""
    sm_m, sm_P = rec.rts_smoother_arrays(filt.F, filt.pred_mean, filt.pred_cov, filt.filt_mean, filt.filt_cov)
    return SmootherResult(sm_m, sm_P)


# ---------------------------------------------------------------------------
# Gibbs sampler


def _initial_theta(names, priors: PriorSpec, logpost, fixed: dict, rng, n_candidates: int = 200) -> dict:
    """Best of the prior midpoint and ``n_candidates`` uniform prior draws."""
    free = [k for k in names if k not in fixed]
    best = {k: fixed[k] if k in fixed else priors.bounded(k).midpoint() for k in names}
    best_lp = logpost(best)
    for _ in range(n_candidates):
        cand = dict(best)
        for k in free:
            b = priors.bounded(k)
            cand[k] = b.lower + b.width * (0.02 + 0.96 * rng.random())
        lp = logpost(cand)
        if lp > best_lp:
            best, best_lp = cand, lp
    return best


def _theta_sweep(rng, theta: dict, names, priors, loglik, current_ll, scales: AdaptiveScale, fixed):
    """One-at-a-time random-walk Metropolis on the logit scale of each free parameter."""
    accepted = np.zeros(len(names))
    for j, name in enumerate(names):
        if name in fixed:
            continue
        b = priors.bounded(name)
        z = float(b.to_free(theta[name]))
        z_new = z + scales.scale[j] * rng.standard_normal()
        prop = dict(theta)
        prop[name] = float(b.from_free(z_new))
        if not b.contains(prop[name]):
            rng.random()
            continue
        ll_new = loglik(prop)
        log_ratio = ll_new - current_ll + b.log_jacobian(z_new) - b.log_jacobian(z)
        if np.log(rng.random()) < log_ratio:
            theta, current_ll = prop, ll_new
            accepted[j] = 1.0
    scales.record(accepted)
    return theta, current_ll


def _transition_loglik(aff: Affine, C: np.ndarray, W, scalar: bool) -> float:
    mu = aff.mean(C[:-1])
    if scalar:
        return float(np.sum(logpdf_normal(C[1:], mu, W)))
    return float(np.sum(logpdf_mvn(C[1:], mu, W)))


def gibbs_fit_gaussian(
    spec: GaussianSSMSpec,
    data: MeasurementSeries,
    n_iter: int,
    burn_in: int,
    thin: int = 1,
    rng: np.random.Generator | None = None,
) -> PosteriorSamples:
    """Single-chain Gibbs sampler for the Gaussian state-space model.

    Each sweep draws the states, then Sigma_nu (or sigma2) and Sigma_omega (or
    tau2) from their conjugate inverse-Wishart (inverse-gamma) conditionals,
    then each physical parameter by Metropolis given the states.
    """
    if not n_iter > burn_in >= 0:
        raise ValueError("n_iter must exceed burn_in")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    _check_data(data, spec.setup)
    rng = make_rng(0) if rng is None else rng
    setup, priors, fixed = spec.setup, spec.priors, spec.fixed
    names = setup.theta_names
    y = data.values
    n, p = y.shape
    B = spec.design(p)
    m0, P0 = spec.initial_prior(data)
    scalar = spec.scalar_noise

    def make_aff(theta):
        return transition(setup, theta, data.times, data.coords)

    # initial states through B^{-1}, noise from crude moments
    C = np.linalg.solve(B, y.T).T.copy()
    spread = float(np.mean(np.diff(C, axis=0) ** 2)) + 1e-6
    sigma2 = fixed.get("sigma2", 0.5 * spread)
    tau2 = fixed.get("tau2", spread)
    Sig_nu = _as_cov(fixed.get("Sigma_nu", 0.5 * spread), p)
    Sig_om = _as_cov(fixed.get("Sigma_omega", spread), p)

    def W_of():
        return tau2 if scalar else Sig_om

    def loglik(theta):
        try:
            aff = make_aff(theta)
        except (ValueError, ArithmeticError):
            return -np.inf
        return _transition_loglik(aff, C, W_of(), scalar)

    theta = _initial_theta(names, priors, loglik, fixed, rng) if names else {}
    theta.update({k: v for k, v in fixed.items() if k in names})
    aff = make_aff(theta)

    scales = AdaptiveScale(np.full(len(names), 0.2))
    n_keep = (n_iter - burn_in + thin - 1) // thin
    draws = {k: np.empty((1, n_keep)) for k in names}
    if scalar:
        draws["sigma2"] = np.empty((1, n_keep))
        draws["tau2"] = np.empty((1, n_keep))
    else:
        draws["Sigma_nu"] = np.empty((1, n_keep, p, p))
        draws["Sigma_omega"] = np.empty((1, n_keep, p, p))
    draws["state"] = np.empty((1, n_keep, n, p))
    keep = 0

    for it in range(n_iter):
        if it == burn_in:
            scales.freeze()
        R = sigma2 * np.eye(p) if scalar else Sig_nu
        W = tau2 * np.eye(p) if scalar else Sig_om
        Fm = np.ascontiguousarray(aff.matrices())
        z = rng.standard_normal((n, p))
        if "state" not in fixed:
            try:
                if spec.state_sampler == "conditional":
                    C, _ = rec.forward_conditional_arrays(Fm, aff.h, B, R, W, m0, P0, np.ascontiguousarray(y), z)
                else:
                    f = rec.kalman_filter_arrays(Fm, aff.h, B, R, W, m0, P0, np.ascontiguousarray(y))
                    C = rec.ffbs_arrays(Fm, f[0], f[1], f[2], f[3], z)
            except np.linalg.LinAlgError:
                C = np.full((n, p), np.nan)
        else:
            C = np.asarray(fixed["state"], dtype=float).reshape(n, p)
        if not np.all(np.isfinite(C)):
            raise NumericalError(
                "non-finite latent state in Gaussian sampler",
                {"iteration": it, "theta": dict(theta), "sigma2": sigma2, "tau2": tau2},
            )

        resid_meas = y - C @ B.T
        resid_trans = C[1:] - aff.mean(C[:-1])
        if scalar:
            if "sigma2" not in fixed:
                a, b = inverse_gamma_posterior(priors.a_sigma, priors.b_sigma, resid_meas)
                sigma2 = float(sample_inverse_gamma(rng, a, b))
            if "tau2" not in fixed:
                a, b = inverse_gamma_posterior(priors.a_tau, priors.b_tau, resid_trans)
                tau2 = float(sample_inverse_gamma(rng, a, b))
        else:
            if "Sigma_nu" not in fixed:
                r, S = inverse_wishart_posterior(priors.r_nu, priors.S("nu", p), resid_meas)
                Sig_nu = sample_inverse_wishart(rng, r, S)
            if "Sigma_omega" not in fixed:
                r, S = inverse_wishart_posterior(priors.r_omega, priors.S("omega", p), resid_trans)
                Sig_om = sample_inverse_wishart(rng, r, S)

        if names:
            current = loglik(theta)
            theta, _ = _theta_sweep(rng, theta, names, priors, loglik, current, scales, fixed)
            aff = make_aff(theta)

        if it >= burn_in and (it - burn_in) % thin == 0:
            for k in names:
                draws[k][0, keep] = theta[k]
            if scalar:
                draws["sigma2"][0, keep] = sigma2
                draws["tau2"][0, keep] = tau2
            else:
                draws["Sigma_nu"][0, keep] = Sig_nu
                draws["Sigma_omega"][0, keep] = Sig_om
            draws["state"][0, keep] = C
            keep += 1

    acceptance = {}
    for j, k in enumerate(names):
        if k in fixed:
            continue
        acceptance[k] = float(scales.acceptance[j])
        if scales.total_accepts[j] == 0:
            warnings.warn(f"Metropolis updates of {k} were all rejected after burn-in", RuntimeWarning)
    return PosteriorSamples(
        engine="gaussian",
        kind=setup.kind,
        times=data.times.copy(),
        theta_names=tuple(names),
        draws=draws,
        acceptance=acceptance,
        coords=None if data.coords is None else data.coords.copy(),
        options={"state_sampler": spec.state_sampler, "B": B.tolist()},
    )
