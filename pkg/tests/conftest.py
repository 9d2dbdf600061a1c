import warnings

import numpy as np
import pytest

from exposure_ssm import physical as phys


def rk4(f, y0, t_end, h=1e-4):
    """Classical Runge-Kutta trajectory on a uniform grid; returns (times, states)."""
    n = int(round(t_end / h))
    y = np.array(y0, dtype=float)
    out = np.empty((n + 1, y.size))
    out[0] = y
    for i in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = y
    return np.linspace(0.0, n * h, n + 1), out


def taylor_linear(A, g, y0, t_end, h=1e-4, order=8):
    """Fixed-step Taylor-series integration of y' = A y + g, local error O(h^(order+1))."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    g = np.atleast_1d(np.asarray(g, dtype=float))
    p = A.shape[0]
    # one step: y <- Phi y + psi with Phi = sum (hA)^j / j!, psi = h sum (hA)^j / (j+1)! g
    Phi, psi, term = np.eye(p), np.zeros(p), np.eye(p)
    for j in range(1, order + 1):
        psi += h * term @ g / j
        term = term @ (h * A) / j
        Phi += term
    n = int(round(t_end / h))
    out = np.empty((n + 1, p))
    out[0] = y0
    for i in range(n):
        out[i + 1] = Phi @ out[i] + psi
    return np.linspace(0.0, n * h, n + 1), out


@pytest.fixture
def one_zone():
    return phys.OneZoneParams(G=351.5, Q=13.8, K_L=0.1, V=3.8)


@pytest.fixture
def two_zone():
    return phys.TwoZoneParams(G=351.5, Q=13.8, beta=5.0, K_L=0.0)


@pytest.fixture
def eddy():
    return phys.EddyParams(G=351.5, D_T=1.0)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
