"""Nonlinear non-Gaussian state-space engine and the regression baseline.

Measurements enter on the log scale, Z_i = log Y_i = log C_i + nu_i.  The
transition keeps the physical map as its conditional mean:

* log-normal: log C_i ~ N(log mu_i - v/2, v), v the transition variance
  (a full 2x2 covariance for the two-zone model);
* gamma: C_i ~ Gamma(shape mu_i^2/tau2, rate mu_i/tau2), mean mu_i, variance tau2,

with mu_i = F_i C_{i-1} + h_i.  Latent states are updated one site at a time by
random-walk Metropolis on log C; sites with the same time parity do not
interact, so each parity class is updated as one vectorised block.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from . import physical as phys
from .statespace import (
    EPS,
    Affine,
    MeasurementSeries,
    ModelSetup,
    NumericalError,
    PosteriorSamples,
    PriorSpec,
    steady_level,
    transition,
)
from .stochastics import (
    AdaptiveScale,
    distance_matrix,
    exp_corr,
    inverse_gamma_posterior,
    inverse_wishart_posterior,
    logpdf_gamma_meanvar,
    logpdf_inverse_gamma,
    logpdf_mvn,
    make_rng,
    sample_inverse_gamma,
    sample_inverse_wishart,
)

__all__ = [
    "NonGaussianSSMSpec",
    "log_target_state",
    "fit_nongaussian",
    "fit_eddy_spatial",
    "fit_bnlr_two_zone",
    "spatial_surface",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class NonGaussianSSMSpec:
    """Options for the log-scale engine.

    ``family`` selects the transition noise ("lognormal" or "gamma"; gamma is
    only defined for scalar-per-site models).  ``spatial`` applies to the eddy
    model: "exponential" (sigma2 R(phi) residual field), "unstructured" (free
    covariance with an inverse-Wishart prior) or "none".  The first state has
    prior log C_1 ~ N(init_log_mean, init_log_var), the mean defaulting to the
    log of the first measurement.
    """

    setup: ModelSetup
    priors: PriorSpec = None
    family: str = "lognormal"
    spatial: str = "exponential"
    init_log_mean: np.ndarray | None = None
    init_log_var: float = 10.0
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.priors is None:
            self.priors = PriorSpec.defaults(self.setup.kind)
        if self.family not in ("lognormal", "gamma"):
            raise ValueError(f"unknown transition family {self.family!r}")
        if self.family == "gamma" and self.setup.kind == "two-zone":
            raise ValueError("the two-zone model uses the bivariate log-normal transition")
        if self.spatial not in ("exponential", "unstructured", "none"):
            raise ValueError(f"unknown spatial option {self.spatial!r}")
        if self.setup.kind != "eddy" and self.spatial != "none":
            self.spatial = "none"

    @property
    def coupled(self) -> bool:
        return self.setup.kind == "two-zone"


# ---------------------------------------------------------------------------
# log densities on the site level


def _normal_terms(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def _mvn_rows(resid, cov_inv, logdet):
    quad = np.einsum("ij,jk,ik->i", resid, cov_inv, resid)
    return -0.5 * (resid.shape[1] * _LOG_2PI + logdet + quad)


class _Chain:
    """Mutable state of one Metropolis-within-Gibbs chain."""

    def __init__(self, spec: NonGaussianSSMSpec, data: MeasurementSeries, rng):
        self.spec = spec
        self.setup = spec.setup
        self.priors = spec.priors
        self.fixed = spec.fixed
        self.rng = rng
        self.data = data
        self.Z = np.log(np.maximum(data.values, EPS))
        self.n, self.p = self.Z.shape
        self.names = self.setup.theta_names
        self.coupled = spec.coupled
        self.gamma = spec.family == "gamma"
        self.spatial = spec.spatial if self.setup.kind == "eddy" else "none"
        if spec.init_log_mean is None:
            self.init_mean = self.Z[0].copy()
        else:
            self.init_mean = np.broadcast_to(np.asarray(spec.init_log_mean, dtype=float), (self.p,)).copy()
        self.init_var = float(spec.init_log_var)

        f = self.fixed
        self.logC = np.array(f["log_state"], dtype=float) if "log_state" in f else self.Z.copy()
        self.C = np.exp(self.logC)
        if self.coupled:
            self.Sig_nu = np.asarray(f.get("Sigma_nu", 0.1 * np.eye(self.p)), dtype=float)
            self.Sig_om = np.asarray(f.get("Sigma_omega", 0.1 * np.eye(self.p)), dtype=float)
        self.sigma2 = float(f.get("sigma2", 0.1 if self.spatial == "none" else 0.5))
        if self.gamma:
            self.tau2 = float(f.get("tau2", (0.1 * np.median(data.values)) ** 2))
        else:
            self.tau2 = float(f.get("tau2", 0.1))
        # eddy residual field
        self.nugget = float(f.get("nugget", 0.1))
        self.nu = np.zeros_like(self.Z)
        if self.spatial == "exponential":
            self.dist = distance_matrix(data.coords)
            self.phi = float(f.get("phi", self.priors.bounded("phi").midpoint()))
        if self.spatial == "unstructured":
            self.Sig_sp = np.asarray(f.get("Sigma_nu", 0.5 * np.eye(self.p)), dtype=float)

        self.theta = {}
        if self.names:
            self.theta = self._initial_theta()
        self.aff = self._transition(self.theta)
        self.ref_level = max(float(np.max(data.values)), steady_level(self.setup, self.theta, data.coords), 1.0)

        self.state_scale = AdaptiveScale(np.full((self.n, self.p), 0.1))
        self.theta_scale = AdaptiveScale(np.full(len(self.names), 0.2))
        self.tau_scale = AdaptiveScale(np.array([0.3]))
        self.phi_scale = AdaptiveScale(np.array([0.5]))
        self.tau_indep_acc = [0, 0]

    # -- transition pieces -------------------------------------------------

    def _transition(self, theta) -> Affine:
        return transition(self.setup, theta, self.data.times, self.data.coords)

    def _trans_var_vec(self):
        return np.diag(self.Sig_om) if self.coupled else self.tau2

    def trans_logpdf(self, C_next, logC_next, mu):
        """Density of C_next given conditional mean mu (per site, or per row if coupled)."""
        mu = np.maximum(mu, EPS)
        if self.gamma:
            return logpdf_gamma_meanvar(C_next, mu, self.tau2)
        if self.coupled:
            resid = logC_next - (np.log(mu) - 0.5 * np.diag(self.Sig_om))
            return _mvn_rows(resid, self._om_inv, self._om_logdet) - logC_next.sum(axis=1)
        return _normal_terms(logC_next, np.log(mu) - 0.5 * self.tau2, self.tau2) - logC_next

    def init_logpdf(self, logC0):
        out = _normal_terms(logC0, self.init_mean, self.init_var) - logC0
        return out.sum(axis=-1) if self.coupled else out

    def meas_logpdf(self, rows, logC_rows):
        Z = self.Z[rows]
        if self.coupled:
            return _mvn_rows(Z - logC_rows, self._nu_inv, self._nu_logdet)
        if self.setup.kind == "eddy":
            return _normal_terms(Z - self.nu[rows], logC_rows, self.nugget)
        return _normal_terms(Z, logC_rows, self.sigma2)

    def _refresh_cov_cache(self):
        if self.coupled:
            self._nu_inv = np.linalg.inv(self.Sig_nu)
            self._nu_logdet = np.linalg.slogdet(self.Sig_nu)[1]
            self._om_inv = np.linalg.inv(self.Sig_om)
            self._om_logdet = np.linalg.slogdet(self.Sig_om)[1]

    def transition_loglik(self, aff: Affine) -> float:
        mu = aff.mean(self.C[:-1])
        if np.any(~(mu > 0)) and not self.gamma:
            mu = np.maximum(mu, EPS)
        return float(np.sum(self.trans_logpdf(self.C[1:], self.logC[1:], mu)))

    # -- state block ---------------------------------------------------------

    def _site_terms(self, rows, lc, mu_in):
        """Log full-conditional kernel (in log C coordinates) of the given rows."""
        c = np.exp(lc)
        terms = self.meas_logpdf(rows, lc)
        first = rows == 0
        inner = ~first
        if np.any(first):
            terms[first] += self.init_logpdf(lc[first])
        if np.any(inner):
            terms[inner] += self.trans_logpdf(c[inner], lc[inner], mu_in[inner])
        not_last = rows < self.n - 1
        if np.any(not_last):
            r = rows[not_last]
            mu_out = self._mu_from(r, c[not_last])
            terms[not_last] += self.trans_logpdf(self.C[r + 1], self.logC[r + 1], mu_out)
        # Jacobian of the log-scale random walk
        return terms + (lc.sum(axis=1) if self.coupled else lc)

    def _mu_from(self, r, c_rows):
        F = self.aff.F[r]
        h = self.aff.h[r]
        if self.aff.diagonal:
            return F * c_rows + h
        return np.einsum("ipq,iq->ip", F, c_rows) + h

    def update_states(self):
        rng = self.rng
        n, p = self.n, self.p
        accepted = np.zeros((n, p))
        cols = [slice(None)] if not self.coupled else [j for j in range(p)]
        for parity in (0, 1):
            rows = np.arange(parity, n, 2)
            mu_in = np.zeros((rows.size, p))
            inner = rows > 0
            mu_in[inner] = self._mu_from(rows[inner] - 1, self.C[rows[inner] - 1])
            for col in cols:
                cur = self.logC[rows]
                prop = cur.copy()
                step = self.state_scale.scale[rows] * rng.standard_normal((rows.size, p))
                if self.coupled:
                    prop[:, col] += step[:, col]
                else:
                    prop += step
                log_ratio = self._site_terms(rows, prop, mu_in) - self._site_terms(rows, cur, mu_in)
                log_u = np.log(rng.random(log_ratio.shape))
                acc = log_u < log_ratio
                if self.coupled:
                    new = np.where(acc[:, None], prop, cur)
                    accepted[rows, col] = acc
                else:
                    new = np.where(acc, prop, cur)
                    accepted[rows] = acc
                self.logC[rows] = new
                self.C[rows] = np.exp(new)
        self.state_scale.record(accepted)

    # -- eddy residual field ----------------------------------------------

    def _spatial_cov(self):
        if self.spatial == "exponential":
            return self.sigma2 * exp_corr(self.phi, self.dist)
        return self.Sig_sp

    def update_nu(self):
        if self.spatial == "none":
            return
        K = self._spatial_cov()
        K_inv = np.linalg.inv(K)
        prec = K_inv + np.eye(self.p) / self.nugget
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        L = np.linalg.cholesky(cov)
        resid = self.Z - self.logC
        mean = resid @ cov.T / self.nugget
        self.nu = mean + self.rng.standard_normal(resid.shape) @ L.T

    def update_spatial_params(self):
        rng, pr, f = self.rng, self.priors, self.fixed
        if self.spatial == "exponential":
            R = exp_corr(self.phi, self.dist)
            if "sigma2" not in f:
                quad = float(np.sum(self.nu * np.linalg.solve(R, self.nu.T).T))
                a = pr.a_sigma + self.nu.size / 2.0
                b = pr.b_sigma + 0.5 * quad
                self.sigma2 = float(sample_inverse_gamma(rng, a, b))
            if "phi" not in f:
                self._update_phi()
        elif self.spatial == "unstructured" and "Sigma_nu" not in f:
            r, S = inverse_wishart_posterior(pr.r_nu, pr.S("nu", self.p), self.nu)
            self.Sig_sp = sample_inverse_wishart(rng, r, S)
        if "nugget" not in f:
            a, b = inverse_gamma_posterior(pr.a_nugget, pr.b_nugget, self.Z - self.logC - self.nu)
            self.nugget = float(sample_inverse_gamma(rng, a, b))

    def phi_loglik(self, phi) -> float:
        cov = self.sigma2 * exp_corr(phi, self.dist)
        return float(np.sum(logpdf_mvn(self.nu, np.zeros(self.p), cov)))

    def _update_phi(self):
        b = self.priors.bounded("phi")
        z = float(b.to_free(self.phi))
        z_new = z + self.phi_scale.scale[0] * self.rng.standard_normal()
        phi_new = float(b.from_free(z_new))
        log_ratio = (
            self.phi_loglik(phi_new) - self.phi_loglik(self.phi) + b.log_jacobian(z_new) - b.log_jacobian(z)
        )
        acc = np.log(self.rng.random()) < log_ratio
        if acc:
            self.phi = phi_new
        self.phi_scale.record([acc])

    # -- variances -----------------------------------------------------------

    def update_measurement_variance(self):
        pr, f = self.priors, self.fixed
        resid = self.Z - self.logC
        if self.coupled:
            if "Sigma_nu" not in f:
                r, S = inverse_wishart_posterior(pr.r_nu, pr.S("nu", self.p), resid)
                self.Sig_nu = sample_inverse_wishart(self.rng, r, S)
        elif self.setup.kind != "eddy" and "sigma2" not in f:
            a, b = inverse_gamma_posterior(pr.a_sigma, pr.b_sigma, resid)
            self.sigma2 = float(sample_inverse_gamma(self.rng, a, b))

    def _lognormal_shift_term(self, d, cov):
        # part of the log-normal transition density not captured by the
        # conjugate proposal: -1/2 sum_i [d_i' V^{-1} s + s' V^{-1} s / 4], s = diag V
        if self.coupled:
            s = np.diag(cov)
            Vs = np.linalg.solve(cov, s)
            return -0.5 * (float(np.sum(d @ Vs)) + d.shape[0] * float(s @ Vs) / 4.0)
        return -0.5 * (float(np.sum(d)) + d.size * cov / 4.0)

    def update_transition_variance(self):
        pr, f, rng = self.priors, self.fixed, self.rng
        key = "Sigma_omega" if self.coupled else "tau2"
        if key in f:
            return
        mu = np.maximum(self.aff.mean(self.C[:-1]), EPS)
        if self.gamma:
            lt = math.log(self.tau2)
            lt_new = lt + self.tau_scale.scale[0] * rng.standard_normal()
            t_new = math.exp(lt_new)

            def target(t2, lt2):
                return (
                    float(np.sum(logpdf_gamma_meanvar(self.C[1:], mu, t2)))
                    + float(logpdf_inverse_gamma(t2, pr.a_tau, pr.b_tau))
                    + lt2
                )

            acc = np.log(rng.random()) < target(t_new, lt_new) - target(self.tau2, lt)
            if acc:
                self.tau2 = t_new
            self.tau_scale.record([acc])
            return
        d = self.logC[1:] - np.log(mu)
        if self.coupled:
            r, S = inverse_wishart_posterior(pr.r_omega, pr.S("omega", self.p), d)
            prop = sample_inverse_wishart(rng, r, S)
            log_ratio = self._lognormal_shift_term(d, prop) - self._lognormal_shift_term(d, self.Sig_om)
            acc = np.log(rng.random()) < log_ratio
            if acc:
                self.Sig_om = prop
        else:
            a, b = inverse_gamma_posterior(pr.a_tau, pr.b_tau, d)
            prop = float(sample_inverse_gamma(rng, a, b))
            log_ratio = self._lognormal_shift_term(d, prop) - self._lognormal_shift_term(d, self.tau2)
            acc = np.log(rng.random()) < log_ratio
            if acc:
                self.tau2 = prop
        self.tau_scale.record([acc])

    # -- physical parameters -----------------------------------------------

    def _safe_loglik(self, theta):
        try:
            aff = self._transition(theta)
        except (ValueError, ArithmeticError):
            return -np.inf, None
        if not np.all(np.isfinite(aff.h)):
            return -np.inf, None
        return self.transition_loglik(aff), aff

    def _initial_theta(self):
        pr, f, rng = self.priors, self.fixed, self.rng
        self._refresh_cov_cache()
        best = {k: f[k] if k in f else pr.bounded(k).midpoint() for k in self.names}
        best_lp, _ = self._safe_loglik(best)
        free = [k for k in self.names if k not in f]
        for _ in range(200 if free else 0):
            cand = dict(best)
            for k in free:
                b = pr.bounded(k)
                cand[k] = b.lower + b.width * (0.02 + 0.96 * rng.random())
            lp, _ = self._safe_loglik(cand)
            if lp > best_lp:
                best, best_lp = cand, lp
        return best

    def update_theta(self):
        pr, f, rng = self.priors, self.fixed, self.rng
        accepted = np.zeros(len(self.names))
        current = self.transition_loglik(self.aff)
        for j, name in enumerate(self.names):
            if name in f:
                continue
            b = pr.bounded(name)
            z = float(b.to_free(self.theta[name]))
            z_new = z + self.theta_scale.scale[j] * rng.standard_normal()
            prop = dict(self.theta)
            prop[name] = float(b.from_free(z_new))
            ll, aff = self._safe_loglik(prop) if b.contains(prop[name]) else (-np.inf, None)
            log_ratio = ll - current + b.log_jacobian(z_new) - b.log_jacobian(z)
            if np.log(rng.random()) < log_ratio:
                self.theta, self.aff, current = prop, aff, ll
                accepted[j] = 1.0
        self.theta_scale.record(accepted)

    # -- driver ----------------------------------------------------------------

    def sweep(self, it):
        self._refresh_cov_cache()
        if "log_state" not in self.fixed:
            self.update_states()
        if self.setup.kind == "eddy":
            self.update_nu()
            self.update_spatial_params()
        else:
            self.update_measurement_variance()
        self._refresh_cov_cache()
        self.update_transition_variance()
        self._refresh_cov_cache()
        if self.names:
            self.update_theta()
        if not np.all(np.isfinite(self.logC)) or np.max(self.C) > 1e6 * self.ref_level:
            raise NumericalError(
                "latent trajectory diverged",
                {
                    "iteration": it,
                    "theta": dict(self.theta),
                    "max_state": float(np.max(self.C)),
                    "sigma2": self.sigma2,
                    "tau2": self.tau2,
                },
            )

    def freeze(self):
        for s in (self.state_scale, self.theta_scale, self.tau_scale, self.phi_scale):
            s.freeze()


def _run_chain(spec: NonGaussianSSMSpec, data, n_iter, burn_in, thin, rng, engine):
    if not n_iter > burn_in >= 0:
        raise ValueError("n_iter must exceed burn_in")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    chain = _Chain(spec, data, rng)
    n, p = chain.n, chain.p
    n_keep = (n_iter - burn_in + thin - 1) // thin
    names = chain.names
    draws = {k: np.empty((1, n_keep)) for k in names}
    if chain.coupled:
        draws["Sigma_nu"] = np.empty((1, n_keep, p, p))
        draws["Sigma_omega"] = np.empty((1, n_keep, p, p))
    else:
        draws["tau2"] = np.empty((1, n_keep))
        if chain.spatial == "unstructured":
            draws["Sigma_nu"] = np.empty((1, n_keep, p, p))
        elif chain.spatial != "none" or data.kind != "eddy":
            draws["sigma2"] = np.empty((1, n_keep))
    if chain.setup.kind == "eddy":
        draws["nugget"] = np.empty((1, n_keep))
        if chain.spatial == "exponential":
            draws["phi"] = np.empty((1, n_keep))
    draws["state"] = np.empty((1, n_keep, n, p))
    nu_sum = np.zeros((n, p))
    keep = 0
    for it in range(n_iter):
        if it == burn_in:
            chain.freeze()
        chain.sweep(it)
        if it >= burn_in and (it - burn_in) % thin == 0:
            for k in names:
                draws[k][0, keep] = chain.theta[k]
            if chain.coupled:
                draws["Sigma_nu"][0, keep] = chain.Sig_nu
                draws["Sigma_omega"][0, keep] = chain.Sig_om
            else:
                draws["tau2"][0, keep] = chain.tau2
                if "sigma2" in draws:
                    draws["sigma2"][0, keep] = chain.sigma2
                if chain.spatial == "unstructured":
                    draws["Sigma_nu"][0, keep] = chain.Sig_sp
            if "nugget" in draws:
                draws["nugget"][0, keep] = chain.nugget
            if "phi" in draws:
                draws["phi"][0, keep] = chain.phi
            draws["state"][0, keep] = chain.C
            nu_sum += chain.nu
            keep += 1

    acceptance = {"state": float(np.mean(chain.state_scale.acceptance))}
    for j, k in enumerate(names):
        if k not in spec.fixed:
            acceptance[k] = float(chain.theta_scale.acceptance[j])
            if chain.theta_scale.total_accepts[j] == 0:
                warnings.warn(f"Metropolis updates of {k} were all rejected after burn-in", RuntimeWarning)
    if ("Sigma_omega" if chain.coupled else "tau2") not in spec.fixed:
        acceptance["tau2"] = float(chain.tau_scale.acceptance[0])
    if "phi" in draws and "phi" not in spec.fixed:
        acceptance["phi"] = float(chain.phi_scale.acceptance[0])
    extras = {}
    if chain.setup.kind == "eddy":
        extras["nu_mean"] = nu_sum / max(keep, 1)
    return PosteriorSamples(
        engine=engine,
        kind=chain.setup.kind,
        times=data.times.copy(),
        theta_names=tuple(names),
        draws=draws,
        acceptance=acceptance,
        coords=None if data.coords is None else data.coords.copy(),
        options={"family": spec.family, "spatial": chain.spatial},
        extras=extras,
    )


def log_target_state(spec: NonGaussianSSMSpec, params: dict, trajectory, index: int, value: float,
                     data: MeasurementSeries, noise: dict | None = None) -> float:
    """Log full-conditional kernel of one scalar-per-site state, in concentration units.

    Measurement density at log(value) plus the transition densities into and
    out of the site; -inf for value <= 0.  ``noise`` supplies sigma2 / tau2 /
    nugget (defaults 0.1) and, for eddy data, the residual field ``nu``.
    Locations of eddy data are handled by passing the column as ``trajectory``
    and ``data`` restricted to that location.
    """
    if not value > 0:
        return -np.inf
    if spec.coupled:
        raise ValueError("log_target_state evaluates scalar-per-site models")
    noise = {} if noise is None else noise
    traj = np.asarray(trajectory, dtype=float).reshape(-1, 1)
    n = traj.shape[0]
    if not 0 <= index < n:
        raise IndexError("state index out of range")
    fixed = dict(params)
    fixed.update({k: v for k, v in noise.items() if k in ("sigma2", "tau2", "nugget")})
    fixed["log_state"] = np.log(traj)
    sub = NonGaussianSSMSpec(spec.setup, spec.priors, spec.family, "none", spec.init_log_mean, spec.init_log_var, fixed)
    chain = _Chain(sub, data, make_rng(0))
    if "nu" in noise:
        chain.nu = np.asarray(noise["nu"], dtype=float).reshape(n, 1)
    rows = np.array([index])
    lc = np.array([[math.log(value)]])
    mu_in = np.zeros((1, 1))
    if index > 0:
        mu_in = chain._mu_from(rows - 1, chain.C[rows - 1])
    # _site_terms works on the log scale; remove the Jacobian to get the density of C
    return float(chain._site_terms(rows, lc, mu_in)[0, 0] - lc[0, 0])


def fit_nongaussian(
    spec: NonGaussianSSMSpec,
    data: MeasurementSeries,
    n_iter: int,
    burn_in: int,
    thin: int = 1,
    rng: np.random.Generator | None = None,
) -> PosteriorSamples:
    """Metropolis-within-Gibbs fit of the log-scale state-space model (single chain)."""
    data.require_positive()
    if data.kind != spec.setup.kind and spec.setup.kind != "random-walk":
        raise ValueError(f"data are for the {data.kind} model, spec is {spec.setup.kind}")
    if spec.setup.kind == "eddy":
        return fit_eddy_spatial(spec, data, n_iter, burn_in, thin, rng)
    return _run_chain(spec, data, n_iter, burn_in, thin, make_rng(0) if rng is None else rng, "nongaussian")


def fit_eddy_spatial(
    spec: NonGaussianSSMSpec,
    data: MeasurementSeries,
    n_iter: int,
    burn_in: int,
    thin: int = 1,
    rng: np.random.Generator | None = None,
) -> PosteriorSamples:
    """Eddy-diffusion fit with a per-time spatial residual field plus nugget."""
    data.require_positive()
    if spec.setup.kind != "eddy" or data.kind != "eddy":
        raise ValueError("fit_eddy_spatial needs eddy data and an eddy model")
    if data.dim < 2:
        raise ValueError("spatial fit needs at least two locations")
    if spec.spatial == "exponential":
        d = distance_matrix(data.coords)
        if np.any(d[np.triu_indices(data.dim, 1)] == 0):
            raise ValueError("duplicate locations make the exponential correlation singular")
    return _run_chain(spec, data, n_iter, burn_in, thin, make_rng(0) if rng is None else rng, "nongaussian")


def spatial_surface(samples: PosteriorSamples, grid_x=None, grid_y=None):
    """Posterior-mean residual field averaged over time, kriged onto a grid.

    Simple kriging with the posterior-mean decay phi: nu(s0) = r(s0)' R^{-1} nu_bar.
    Returns (grid_x, grid_y, surface) with surface shape (len(grid_y), len(grid_x)).
    """
    if "nu_mean" not in samples.extras or samples.coords is None:
        raise ValueError("samples carry no spatial residual field")
    coords = samples.coords
    nu_bar = samples.extras["nu_mean"].mean(axis=0)
    if grid_x is None:
        grid_x = np.linspace(coords[:, 0].min() - 0.5, coords[:, 0].max() + 0.5, 40)
    if grid_y is None:
        grid_y = np.linspace(coords[:, 1].min() - 0.5, coords[:, 1].max() + 0.5, 40)
    phi = float(samples.flat("phi").mean()) if "phi" in samples.draws else 1.0
    R = exp_corr(phi, distance_matrix(coords))
    weights = np.linalg.solve(R, nu_bar)
    gx, gy = np.meshgrid(grid_x, grid_y)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    d0 = np.sqrt(((pts[:, None, :] - coords[None, :, :]) ** 2).sum(-1))
    surface = (np.exp(-phi * d0) @ weights).reshape(gx.shape)
    return np.asarray(grid_x), np.asarray(grid_y), surface


# ---------------------------------------------------------------------------
# Bayesian nonlinear regression on the exact two-zone solution

_BNLR_NAMES = ("G", "Q", "beta")


def _bnlr_least_squares(theta, curve, y, start, priors) -> dict:
    """Refine a starting point by least squares on the logit scale.

    Near-noiseless data make the likelihood too sharp for random starts alone.
    """
    bs = [priors.bounded(k) for k in _BNLR_NAMES]

    def resid(z):
        cand = {k: float(b.from_free(zi)) for k, b, zi in zip(_BNLR_NAMES, bs, z)}
        try:
            return (y[start:] - curve(cand)[start:]).ravel()
        except (ValueError, ArithmeticError):
            return np.full(y[start:].size, 1e6)

    z0 = np.array([float(b.to_free(theta[k])) for k, b in zip(_BNLR_NAMES, bs)])
    fit = least_squares(resid, z0, x_scale=1.0)
    out = {k: float(b.from_free(zi)) for k, b, zi in zip(_BNLR_NAMES, bs, fit.x)}
    if not all(b.contains(out[k]) for k, b in zip(_BNLR_NAMES, bs)):
        return theta
    return out


def fit_bnlr_two_zone(
    data: MeasurementSeries,
    priors: PriorSpec | None = None,
    n_iter: int = 20000,
    burn_in: int = 5000,
    thin: int = 1,
    rng: np.random.Generator | None = None,
    setup: ModelSetup | None = None,
    c0=None,
) -> PosteriorSamples:
    """Gaussian errors around the exact two-zone curve; no latent states.

    Y_i ~ N(C(t_i; G, Q, beta), Sigma_nu) with Sigma_nu ~ IW(r_nu, S_nu) and
    K_L fixed at zero.  When the series starts at t = 0 its first row is used
    as the initial condition and excluded from the likelihood; otherwise the
    initial concentration is ``c0`` (default zero) at t = 0.
    """
    if data.kind != "two-zone":
        raise ValueError("BNLR baseline is defined for two-zone data")
    priors = PriorSpec.defaults("two-zone") if priors is None else priors
    setup = ModelSetup("two-zone") if setup is None else setup
    rng = make_rng(0) if rng is None else rng
    if not n_iter > burn_in >= 0:
        raise ValueError("n_iter must exceed burn_in")
    t = data.times - data.times[0] if data.times[0] == 0 else data.times
    if c0 is None:
        c0 = np.maximum(data.values[0], 0.0) if data.times[0] == 0 else np.zeros(2)
    c0 = np.asarray(c0, dtype=float)
    start = 1 if data.times[0] == 0 else 0
    y = data.values

    def curve(theta):
        p = phys.TwoZoneParams(theta["G"], theta["Q"], theta["beta"], 0.0, setup.V_N, setup.V_F)
        return phys.exact_two_zone(p, c0, t)

    Sig = 0.1 * np.cov(y[start:].T) + 1e-6 * np.eye(2)

    def loglik(theta):
        try:
            mu = curve(theta)
        except (ValueError, ArithmeticError):
            return -np.inf
        return float(np.sum(logpdf_mvn(y[start:], mu[start:], Sig)))

    theta = {k: priors.bounded(k).midpoint() for k in _BNLR_NAMES}
    best = loglik(theta)
    for _ in range(200):
        cand = {k: priors.bounded(k).lower + priors.bounded(k).width * (0.02 + 0.96 * rng.random()) for k in _BNLR_NAMES}
        lp = loglik(cand)
        if lp > best:
            theta, best = cand, lp
    theta = _bnlr_least_squares(theta, curve, y, start, priors)

    scales = AdaptiveScale(np.full(len(_BNLR_NAMES), 0.2))
    n_keep = (n_iter - burn_in + thin - 1) // thin
    draws = {k: np.empty((1, n_keep)) for k in _BNLR_NAMES}
    draws["Sigma_nu"] = np.empty((1, n_keep, 2, 2))
    draws["mean"] = np.empty((1, n_keep, data.n, 2))
    mu = curve(theta)
    keep = 0
    for it in range(n_iter):
        if it == burn_in:
            scales.freeze()
        r, S = inverse_wishart_posterior(priors.r_nu, priors.S("nu", 2), y[start:] - mu[start:])
        Sig = sample_inverse_wishart(rng, r, S)
        current = loglik(theta)
        accepted = np.zeros(len(_BNLR_NAMES))
        for j, name in enumerate(_BNLR_NAMES):
            b = priors.bounded(name)
            z = float(b.to_free(theta[name]))
            z_new = z + scales.scale[j] * rng.standard_normal()
            prop = dict(theta)
            prop[name] = float(b.from_free(z_new))
            ll = loglik(prop) if b.contains(prop[name]) else -np.inf
            if np.log(rng.random()) < ll - current + b.log_jacobian(z_new) - b.log_jacobian(z):
                theta, current = prop, ll
                accepted[j] = 1.0
        scales.record(accepted)
        mu = curve(theta)
        if it >= burn_in and (it - burn_in) % thin == 0:
            for k in _BNLR_NAMES:
                draws[k][0, keep] = theta[k]
            draws["Sigma_nu"][0, keep] = Sig
            draws["mean"][0, keep] = mu
            keep += 1
    acceptance = {k: float(scales.acceptance[j]) for j, k in enumerate(_BNLR_NAMES)}
    return PosteriorSamples(
        engine="bnlr",
        kind="two-zone",
        times=data.times.copy(),
        theta_names=_BNLR_NAMES,
        draws=draws,
        acceptance=acceptance,
        options={"c0": c0.tolist()},
    )
