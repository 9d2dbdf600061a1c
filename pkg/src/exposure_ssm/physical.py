"""Deterministic exposure physics.

Exact solutions, steady states and Euler transition maps for the well-mixed
(one-zone), two-zone and turbulent eddy-diffusion models.  Units throughout:
minutes, metres, milligrams.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "OneZoneParams",
    "TwoZoneParams",
    "EddyParams",
    "Discretization",
    "DiscretizationWarning",
    "EigenDecompositionError",
    "TwoZoneEigensystem",
    "DEFAULT_DELTA_T",
    "erf",
    "erfc",
    "exact_one_zone",
    "steady_state_one_zone",
    "two_zone_matrix",
    "two_zone_eigensystem",
    "exact_two_zone",
    "steady_state_two_zone",
    "exact_eddy",
    "steady_state_eddy",
    "eddy_rate",
    "step_one_zone",
    "step_two_zone",
    "step_eddy",
    "one_zone_transition",
    "two_zone_transition",
    "eddy_transition",
]

_SQRT_PI = math.sqrt(math.pi)

# Per-kind default Euler step (min).  0.01 is unstable for the two-zone model
# at V_N = pi*1e-3 (fast eigenvalue ~ -1600/min), hence the smaller default.
DEFAULT_DELTA_T = {"one-zone": 0.01, "two-zone": 1e-4, "eddy": 1.0}


class DiscretizationWarning(UserWarning):
    pass


class EigenDecompositionError(ArithmeticError):
    pass


@dataclass(frozen=True)
class OneZoneParams:
    G: float
    Q: float
    K_L: float = 0.0
    V: float = 3.8

    def __post_init__(self):
        if not self.G >= 0:
            raise ValueError(f"G must be >= 0, got {self.G}")
        if not self.Q > 0:
            raise ValueError(f"Q must be > 0, got {self.Q}")
        if not self.K_L >= 0:
            raise ValueError(f"K_L must be >= 0, got {self.K_L}")
        if not self.V > 0:
            raise ValueError(f"V must be > 0, got {self.V}")

    @property
    def decay_rate(self) -> float:
        """First-order removal rate (Q + K_L V)/V in 1/min."""
        return (self.Q + self.K_L * self.V) / self.V


@dataclass(frozen=True)
class TwoZoneParams:
    G: float
    Q: float
    beta: float
    K_L: float = 0.0
    V_N: float = math.pi * 1e-3
    V_F: float = 3.8

    def __post_init__(self):
        if not self.G >= 0:
            raise ValueError(f"G must be >= 0, got {self.G}")
        if not self.Q > 0:
            raise ValueError(f"Q must be > 0, got {self.Q}")
        if not self.K_L >= 0:
            raise ValueError(f"K_L must be >= 0, got {self.K_L}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not (self.V_N > 0 and self.V_F > 0):
            raise ValueError("volumes must be positive")
        if not self.V_N < self.V_F:
            raise ValueError(f"V_N ({self.V_N}) must be smaller than V_F ({self.V_F})")


@dataclass(frozen=True)
class EddyParams:
    G: float
    D_T: float
    source: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.G >= 0:
            raise ValueError(f"G must be >= 0, got {self.G}")
        if not self.D_T > 0:
            raise ValueError(f"D_T must be > 0, got {self.D_T}")

    def distance(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.hypot(s[..., 0] - self.source[0], s[..., 1] - self.source[1])


@dataclass(frozen=True)
class Discretization:
    """Euler step size and the sign convention for K_L in the two-zone matrix.

    ``kl_sign="decay"`` treats K_L as a far-field loss, ``"literal"`` adds it
    to the (2,2) entry as printed in the original two-zone system.
    """

    delta_t: float = 0.01
    kl_sign: str = "decay"

    def __post_init__(self):
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be > 0, got {self.delta_t}")
        if self.kl_sign not in ("decay", "literal"):
            raise ValueError(f"kl_sign must be 'decay' or 'literal', got {self.kl_sign!r}")


# ---------------------------------------------------------------------------
# error function


def _erf_series(x: float) -> float:
    # erf(x) = 2/sqrt(pi) exp(-x^2) sum 2^n x^(2n+1) / (1*3*...*(2n+1)); all
    # terms positive, so no cancellation for |x| < 3.
    term = x
    total = x
    x2 = 2.0 * x * x
    n = 0
    while abs(term) > 1e-17 * abs(total):
        n += 1
        term *= x2 / (2 * n + 1)
        total += term
    return 2.0 / _SQRT_PI * math.exp(-x * x) * total


def _erfc_cf(x: float) -> float:
    # Continued fraction erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    # evaluated by modified Lentz, x >= 3.
    tiny = 1e-300
    f = x
    c = x
    d = 0.0
    for k in range(1, 500):
        a = k / 2.0
        d = x + a * d
        d = tiny if d == 0.0 else d
        c = x + a / c
        c = tiny if c == 0.0 else c
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x * x) / _SQRT_PI / f


def _erf_scalar(x: float) -> float:
    if math.isnan(x):
        return math.nan
    ax = abs(x)
    if ax < 3.0:
        r = _erf_series(ax)
    elif ax > 27.0:
        r = 1.0
    else:
        r = 1.0 - _erfc_cf(ax)
    return math.copysign(r, x)


def _erfc_scalar(x: float) -> float:
    if math.isnan(x):
        return math.nan
    if x < 3.0:
        return 1.0 - _erf_scalar(x)
    if x > 27.0:
        return 0.0
    return _erfc_cf(x)


def erf(z):
    """Standard error function 2/sqrt(pi) int_0^z exp(-u^2) du."""
    if np.ndim(z) == 0:
        return _erf_scalar(float(z))
    return np.vectorize(_erf_scalar, otypes=[float])(z)


def erfc(z):
    """Complementary error function, accurate in the upper tail."""
    if np.ndim(z) == 0:
        return _erfc_scalar(float(z))
    return np.vectorize(_erfc_scalar, otypes=[float])(z)


# ---------------------------------------------------------------------------
# one-zone


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    return t


def exact_one_zone(p: OneZoneParams, c0: float, t):
    """Closed-form solution of V dC/dt + (Q + K_L V) C = G."""
    t = _check_time(t)
    k = p.decay_rate
    if k == 0:
        raise ZeroDivisionError("Q + K_L*V must be positive")
    decay = np.exp(-k * t)
    out = decay * c0 - np.expm1(-k * t) * (p.G / p.V) / k
    return float(out) if out.ndim == 0 else out


def steady_state_one_zone(p: OneZoneParams, approximate: bool = False) -> float:
    """G/(Q + K_L V); with ``approximate=True`` the small-loss limit G/Q."""
    if approximate:
        return p.G / p.Q
    denom = p.Q + p.K_L * p.V
    if denom <= 0:
        raise ZeroDivisionError("Q + K_L*V must be positive")
    return p.G / denom


def step_one_zone(p: OneZoneParams, d: Discretization, c):
    """One explicit Euler step of the one-zone ODE."""
    rate = p.decay_rate
    if d.delta_t * rate >= 1.0:
        warnings.warn(
            f"Euler step {d.delta_t} exceeds 1/|rate| = {1.0 / rate:.4g}",
            DiscretizationWarning,
            stacklevel=2,
        )
    return (1.0 - d.delta_t * rate) * np.asarray(c, dtype=float) + d.delta_t * p.G / p.V


def _substeps(gap: float, delta_t: float):
    k = max(1, int(math.ceil(gap / delta_t - 1e-9)))
    return k, gap / k


def one_zone_transition(p: OneZoneParams, d: Discretization, gap: float):
    """Affine map C -> F*C + h composed from Euler steps over ``gap`` minutes."""
    k, dt = _substeps(gap, d.delta_t)
    a = 1.0 - dt * p.decay_rate
    b = dt * p.G / p.V
    F = a**k
    h = b * k if a == 1.0 else b * (1.0 - F) / (1.0 - a)
    return F, h


# ---------------------------------------------------------------------------
# two-zone


def two_zone_matrix(p: TwoZoneParams, kl_sign: str = "decay"):
    """System matrix A and source vector g of dC/dt = A C + g."""
    a22 = -(p.beta + p.Q) / p.V_F
    a22 = a22 - p.K_L if kl_sign == "decay" else a22 + p.K_L
    A = np.array([[-p.beta / p.V_N, p.beta / p.V_N], [p.beta / p.V_F, a22]])
    g = np.array([p.G / p.V_N, 0.0])
    return A, g


@dataclass(frozen=True)
class TwoZoneEigensystem:
    lam: np.ndarray  # (lambda_1, lambda_2), lambda_1 the slower root
    L: np.ndarray  # eigenvectors in columns
    L_inv: np.ndarray

    def projectors(self):
        """Rank-one spectral projectors u_i v_i^T."""
        return [np.outer(self.L[:, i], self.L_inv[i, :]) for i in range(2)]

    def reconstruct(self) -> np.ndarray:
        return self.L @ np.diag(self.lam) @ self.L_inv

    def apply(self, fn) -> np.ndarray:
        """Matrix function sum_i fn(lambda_i) u_i v_i^T."""
        vals = fn(self.lam)
        return (self.L * vals) @ self.L_inv


def _eig2(a, b, c, dd):
    tr = a + dd
    det = a * dd - b * c
    disc = (a - dd) ** 2 + 4.0 * b * c
    if not disc > 0 or b == 0:
        raise EigenDecompositionError("two-zone matrix has repeated eigenvalues")
    root = math.sqrt(disc)
    # stable pair: larger-magnitude root first, the other through the product
    lam2 = 0.5 * (tr - root) if tr <= 0 else 0.5 * (tr + root)
    lam1 = det / lam2 if lam2 != 0 else 0.5 * (tr + root)
    if lam1 < lam2:
        lam1, lam2 = lam2, lam1
    if abs(lam1 - lam2) <= 1e-12 * max(abs(lam1), abs(lam2)):
        raise EigenDecompositionError("two-zone matrix has repeated eigenvalues")
    return lam1, lam2


def two_zone_eigensystem(p: TwoZoneParams, kl_sign: str = "decay") -> TwoZoneEigensystem:
    """Closed-form eigenvalues and eigenvectors of the two-zone matrix.

    With K_L = 0 the roots are

        lambda = [-(b V_F + (b + Q) V_N)/(V_N V_F) +/- sqrt(...^2 - 4 b Q/(V_N V_F))] / 2.
    """
    A, _ = two_zone_matrix(p, kl_sign)
    a, b, c, dd = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
    lam1, lam2 = _eig2(a, b, c, dd)
    L = np.array([[b, b], [lam1 - a, lam2 - a]])
    detL = b * (lam2 - lam1)
    L_inv = np.array([[lam2 - a, -b], [-(lam1 - a), b]]) / detL
    return TwoZoneEigensystem(np.array([lam1, lam2]), L, L_inv)


def exact_two_zone(p: TwoZoneParams, c0, t, kl_sign: str = "decay") -> np.ndarray:
    """C(t) = exp(tA) C0 + A^{-1}(exp(tA) - I) g through the spectral projectors.

    Returns shape (2,) for scalar ``t`` and (len(t), 2) otherwise.
    """
    t = _check_time(t)
    c0 = np.asarray(c0, dtype=float)
    eig = two_zone_eigensystem(p, kl_sign)
    _, g = two_zone_matrix(p, kl_sign)
    lam = eig.lam
    tt = np.atleast_1d(t)[:, None]
    expo = np.exp(tt * lam)  # (T, 2)
    growth = np.expm1(tt * lam) / lam
    # coefficients in the eigenbasis
    w0 = eig.L_inv @ c0
    wg = eig.L_inv @ g
    out = (expo * w0 + growth * wg) @ eig.L.T
    # the basis change rounds; the initial condition holds exactly
    out[np.atleast_1d(t) == 0] = c0
    return out[0] if t.ndim == 0 else out


def steady_state_two_zone(p: TwoZoneParams, kl_sign: str = "decay") -> np.ndarray:
    """Limit -A^{-1} g; equals (G/Q + G/beta, G/Q) when K_L = 0."""
    A, g = two_zone_matrix(p, kl_sign)
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if det <= 0:
        raise ValueError("two-zone system has no stable steady state")
    return -np.linalg.solve(A, g)


def step_two_zone(p: TwoZoneParams, d: Discretization, c) -> np.ndarray:
    """One explicit Euler step (I + dt A) C + dt g."""
    A, g = two_zone_matrix(p, d.kl_sign)
    lam_max = np.max(np.abs(two_zone_eigensystem(p, d.kl_sign).lam))
    if d.delta_t * lam_max > 1.0:
        warnings.warn(
            f"Euler step {d.delta_t} exceeds 1/|lambda_max| = {1.0 / lam_max:.3g}",
            DiscretizationWarning,
            stacklevel=2,
        )
    c = np.asarray(c, dtype=float)
    return c + d.delta_t * (c @ A.T + g)


def two_zone_transition(p: TwoZoneParams, d: Discretization, gap: float):
    """Affine map C -> F C + h of ``gap`` minutes of Euler steps.

    The k-fold product (I + dt A)^k shares eigenvectors with A, so it is
    evaluated on the closed-form spectrum; h = (I - F)(-A)^{-1} g.
    """
    k, dt = _substeps(gap, d.delta_t)
    eig = two_zone_eigensystem(p, d.kl_sign)
    _, g = two_zone_matrix(p, d.kl_sign)
    mult = 1.0 + dt * eig.lam
    F = eig.apply(lambda lam: (1.0 + dt * lam) ** k)
    # (I - F)(-A)^{-1} g = sum_i (1 - mult_i^k)/(-lam_i) P_i g
    h = eig.apply(lambda lam: (1.0 - mult**k) / (-lam)) @ g
    return F, h


# ---------------------------------------------------------------------------
# eddy diffusion


def _eddy_radius(p: EddyParams, s):
    r = p.distance(s)
    if np.any(r == 0):
        raise ValueError("concentration is singular at the source location")
    return r


def exact_eddy(p: EddyParams, s, t):
    """G/(2 pi D_T r) * erfc(r / sqrt(4 D_T t)); zero at t = 0."""
    t = _check_time(t)
    r = _eddy_radius(p, s)
    r, t = np.broadcast_arrays(r, t)
    out = np.zeros(r.shape)
    pos = t > 0
    if np.any(pos):
        arg = r[pos] / np.sqrt(4.0 * p.D_T * t[pos])
        out[pos] = p.G / (2.0 * math.pi * p.D_T * r[pos]) * erfc(arg)
    return float(out) if out.ndim == 0 else out


def steady_state_eddy(p: EddyParams, s):
    r = _eddy_radius(p, s)
    return p.G / (2.0 * math.pi * p.D_T * r)


def eddy_rate(G, D_T, r, t):
    """dC/dt = G / (4 (pi D_T t)^{3/2}) exp(-r^2 / (4 D_T t)), zero at t <= 0."""
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    out = np.zeros(r.shape)
    pos = t > 0
    tp = t[pos]
    out[pos] = G / (4.0 * (math.pi * D_T * tp) ** 1.5) * np.exp(-r[pos] ** 2 / (4.0 * D_T * tp))
    return out


def step_eddy(p: EddyParams, d: Discretization, s, t, c):
    """Euler increment c + dt * dC/dt evaluated at time ``t`` > 0."""
    if np.any(np.asarray(t) <= 0):
        raise ValueError("eddy step requires t > 0")
    r = _eddy_radius(p, s)
    inc = d.delta_t * eddy_rate(p.G, p.D_T, r, t)
    out = np.asarray(c, dtype=float) + inc
    return float(out) if out.ndim == 0 else out


def eddy_transition(p: EddyParams, d: Discretization, r, t0: float, gap: float) -> np.ndarray:
    """Additive increment over [t0, t0 + gap] from left-point Euler steps, per radius."""
    k, dt = _substeps(gap, d.delta_t)
    ts = t0 + dt * np.arange(k)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return dt * eddy_rate(p.G, p.D_T, r[:, None], ts[None, :]).sum(axis=1)
