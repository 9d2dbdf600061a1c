"""Containers shared by the inference engines.

A fitted model works on the measurement grid t_1 < ... < t_n.  Between two
observations the physical model advances by composing Euler steps, which for
all three physical models is an affine map C_i = F_i C_{i-1} + h_i.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import physical as phys
from .stochastics import Bounded

__all__ = [
    "MODEL_KINDS",
    "THETA_NAMES",
    "EPS",
    "NumericalError",
    "MeasurementSeries",
    "ModelSetup",
    "PriorSpec",
    "Affine",
    "transition",
    "steady_level",
    "PosteriorSamples",
]

MODEL_KINDS = ("one-zone", "two-zone", "eddy", "random-walk")

THETA_NAMES = {
    "one-zone": ("G", "Q", "K_L"),
    "two-zone": ("G", "Q", "K_L", "beta"),
    "eddy": ("G", "D_T"),
    "random-walk": (),
}

# floor for concentrations inside logarithms (mg/m^3)
EPS = 1e-8


class NumericalError(RuntimeError):
    """Raised when a sampler produces NaN or divergent states.

    ``diagnostics`` carries a dump of the chain state at the failure.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class MeasurementSeries:
    """Observed concentrations on a time grid.

    ``values`` has shape (n, p): p = 1 for one-zone, 2 (near, far) for two-zone
    and one column per location for eddy, with ``coords`` of shape (m, 2).
    """

    kind: str
    times: np.ndarray
    values: np.ndarray
    coords: np.ndarray | None = None
    truth: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        self.times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        if self.times.ndim != 1 or self.times.size != values.shape[0]:
            raise ValueError("times and values must have matching length")
        if self.times.size < 2:
            raise ValueError("at least two timepoints are required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        expected = {"one-zone": 1, "two-zone": 2}.get(self.kind)
        if expected is not None and values.shape[1] != expected:
            raise ValueError(f"{self.kind} data needs {expected} value column(s), got {values.shape[1]}")
        if self.kind == "eddy":
            if self.coords is None:
                raise ValueError("eddy data needs location coordinates")
            self.coords = np.asarray(self.coords, dtype=float)
            if self.coords.shape != (values.shape[1], 2):
                raise ValueError("coords must have shape (m, 2) matching value columns")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float).reshape(values.shape)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def require_positive(self) -> None:
        if np.any(~(self.values > 0)):
            raise ValueError("log-scale measurement model needs strictly positive measurements")


@dataclass(frozen=True)
class ModelSetup:
    """Physical model kind plus fixed geometry and discretization."""

    kind: str
    discretization: phys.Discretization | None = None
    V: float = 3.8
    V_N: float = math.pi * 1e-3
    V_F: float = 3.8
    source: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.discretization is None:
            dt = phys.DEFAULT_DELTA_T.get(self.kind, 1.0)
            object.__setattr__(self, "discretization", phys.Discretization(dt))

    @property
    def theta_names(self) -> tuple:
        return THETA_NAMES[self.kind]

    def physical_params(self, theta: dict):
        if self.kind == "one-zone":
            return phys.OneZoneParams(theta["G"], theta["Q"], theta.get("K_L", 0.0), self.V)
        if self.kind == "two-zone":
            return phys.TwoZoneParams(
                theta["G"], theta["Q"], theta["beta"], theta.get("K_L", 0.0), self.V_N, self.V_F
            )
        if self.kind == "eddy":
            return phys.EddyParams(theta["G"], theta["D_T"], tuple(self.source))
        raise ValueError("random-walk model has no physical parameters")


_SIM_BOUNDS = {
    "G": (281.0, 482.0),
    "Q": (11.0, 17.0),
    "K_L": (0.0, 1.0),
    "beta": (0.0, 10.0),
    "D_T": (0.0, 3.0),
    "phi": (0.5, 3.0),
}
_CHAMBER_BOUNDS = {
    "one-zone": {"G": (30.0, 150.0), "Q": (0.0, 1.0), "K_L": (0.0, 1.0)},
    "two-zone": {"G": (30.0, 150.0), "Q": (0.0, 1.0), "K_L": (0.0, 1.0), "beta": (0.0, 5.0)},
    "eddy": {"G": (1104.0, 1650.0), "D_T": (0.0, 1.0), "phi": (0.5, 3.0)},
    "random-walk": {},
}


@dataclass
class PriorSpec:
    """Uniform bounds for physical parameters and variance hyperparameters.

    Scalar variances take IG(a, b) priors; matrix variances IW(r, S) with S
    defaulting to the identity.  IW(3, I) in one dimension is IG(1.5, 0.5).
    """

    bounds: dict = field(default_factory=lambda: dict(_SIM_BOUNDS))
    a_sigma: float = 1.5
    b_sigma: float = 0.5
    a_tau: float = 1.5
    b_tau: float = 0.5
    r_nu: float = 3.0
    S_nu: np.ndarray | None = None
    r_omega: float = 3.0
    S_omega: np.ndarray | None = None
    a_nugget: float = 2.0
    b_nugget: float = 1.0

    def __post_init__(self):
        for name, (a, b) in self.bounds.items():
            if not a < b:
                raise ValueError(f"prior bounds for {name} must satisfy a < b, got ({a}, {b})")
        for name in ("a_sigma", "b_sigma", "a_tau", "b_tau", "r_nu", "r_omega", "a_nugget", "b_nugget"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def defaults(cls, kind: str, provenance: str = "simulation") -> "PriorSpec":
        if provenance == "simulation":
            return cls(bounds=dict(_SIM_BOUNDS))
        if provenance == "chamber":
            return cls(bounds=dict(_CHAMBER_BOUNDS[kind]))
        raise ValueError(f"provenance must be 'simulation' or 'chamber', got {provenance!r}")

    def bounded(self, name: str) -> Bounded:
        if name not in self.bounds:
            raise KeyError(f"no prior bounds for {name!r}")
        return Bounded(*self.bounds[name])

    def S(self, which: str, dim: int) -> np.ndarray:
        S = self.S_nu if which == "nu" else self.S_omega
        return np.eye(dim) if S is None else np.asarray(S, dtype=float)


@dataclass
class Affine:
    """Per-gap affine transition C_i = F_i C_{i-1} + h_i for i = 1..n-1.

    ``F`` has shape (n-1, p) when ``diagonal`` and (n-1, p, p) otherwise.
    """

    F: np.ndarray
    h: np.ndarray
    diagonal: bool

    def mean(self, prev: np.ndarray) -> np.ndarray:
        if self.diagonal:
            return self.F * prev + self.h
        return np.einsum("ipq,iq->ip", self.F, prev) + self.h

    def matrices(self) -> np.ndarray:
        if not self.diagonal:
            return self.F
        n1, p = self.F.shape
        out = np.zeros((n1, p, p))
        idx = np.arange(p)
        out[:, idx, idx] = self.F
        return out


def _unique_gaps(times: np.ndarray):
    gaps = np.diff(times)
    keys = np.round(gaps, 12)
    uniq, inverse = np.unique(keys, return_inverse=True)
    return uniq, inverse


def transition(setup: ModelSetup, theta: dict, times, coords=None, drift: float = 0.0) -> Affine:
    """Affine transition maps on the measurement grid for physical parameters ``theta``.

    ``drift`` is added to every h (used for the random-walk model).
    """
    times = np.asarray(times, dtype=float)
    d = setup.discretization
    n1 = times.size - 1
    if setup.kind == "one-zone":
        p = setup.physical_params(theta)
        uniq, inv = _unique_gaps(times)
        Fh = np.array([phys.one_zone_transition(p, d, g) for g in uniq])
        return Affine(Fh[inv, 0][:, None], Fh[inv, 1][:, None], True)
    if setup.kind == "two-zone":
        p = setup.physical_params(theta)
        uniq, inv = _unique_gaps(times)
        maps = [phys.two_zone_transition(p, d, g) for g in uniq]
        F = np.stack([m[0] for m in maps])[inv]
        h = np.stack([m[1] for m in maps])[inv]
        return Affine(F, h, False)
    if setup.kind == "eddy":
        p = setup.physical_params(theta)
        r = p.distance(np.asarray(coords, dtype=float))
        gaps = np.diff(times)
        ks = np.maximum(1, np.ceil(gaps / d.delta_t - 1e-9).astype(int))
        if np.all(ks == ks[0]):
            dts = gaps / ks[0]
            ts = times[:-1, None] + dts[:, None] * np.arange(ks[0])
            rate = phys.eddy_rate(p.G, p.D_T, r[None, None, :], ts[:, :, None])
            h = (dts[:, None, None] * rate).sum(axis=1)
        else:
            h = np.stack([phys.eddy_transition(p, d, r, times[i], gaps[i]) for i in range(n1)])
        return Affine(np.ones_like(h), h, True)
    # random walk: identity map on whatever dimension the data has
    dim = 1 if coords is None else len(coords)
    return Affine(np.ones((n1, dim)), np.full((n1, dim), drift), True)


def steady_level(setup: ModelSetup, theta: dict, coords=None) -> float:
    """Largest steady-state concentration; used as the divergence reference."""
    if setup.kind == "one-zone":
        return phys.steady_state_one_zone(setup.physical_params(theta))
    if setup.kind == "two-zone":
        try:
            return float(np.max(phys.steady_state_two_zone(setup.physical_params(theta), setup.discretization.kl_sign)))
        except ValueError:
            return math.inf
    if setup.kind == "eddy":
        return float(np.max(phys.steady_state_eddy(setup.physical_params(theta), coords)))
    return 1.0


@dataclass
class PosteriorSamples:
    """Retained MCMC draws.

    ``draws`` maps a name to an array of shape (chains, draws, *shape).  Scalar
    parameters use their own names ("G", "sigma2", ...); matrices "Sigma_nu"
    and "Sigma_omega" have shape (p, p); latent concentrations live under
    "state" with shape (n, p).  Regression fits store their fitted curve as
    "mean" instead of "state".
    """

    engine: str
    kind: str
    times: np.ndarray
    theta_names: tuple
    draws: dict
    acceptance: dict = field(default_factory=dict)
    coords: np.ndarray | None = None
    options: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return next(iter(self.draws.values())).shape[0]

    @property
    def n_draws(self) -> int:
        return next(iter(self.draws.values())).shape[1]

    def flat(self, name: str) -> np.ndarray:
        arr = self.draws[name]
        return arr.reshape(-1, *arr.shape[2:])

    def trajectory_key(self) -> str:
        return "state" if "state" in self.draws else "mean"

    def posterior_mean_trajectory(self) -> np.ndarray:
        return self.flat(self.trajectory_key()).mean(axis=0)

    def scalar_names(self) -> list:
        return [k for k, v in self.draws.items() if v.ndim == 2]

    @classmethod
    def stack_chains(cls, chains: list) -> "PosteriorSamples":
        """Concatenate single-chain results along the chain axis."""
        first = chains[0]
        draws = {k: np.concatenate([c.draws[k] for c in chains], axis=0) for k in first.draws}
        acceptance = {}
        for k in first.acceptance:
            acceptance[k] = float(np.nanmean([c.acceptance[k] for c in chains]))
        extras = dict(first.extras)
        return cls(
            engine=first.engine,
            kind=first.kind,
            times=first.times,
            theta_names=first.theta_names,
            draws=draws,
            acceptance=acceptance,
            coords=first.coords,
            options=dict(first.options),
            extras=extras,
        )
