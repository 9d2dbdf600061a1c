"""Compiled sequential recursions for the linear-Gaussian engine.

Arguments are plain arrays: F (n-1, p, p), h (n-1, p), B (p, p), measurement
covariance R, transition covariance W, prior (m0, P0) for the first state and
observations y (n, p).  Random draws are passed in as standard normals so the
caller's generator stays the single source of randomness.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sym(a):
    return 0.5 * (a + a.T)


@njit(cache=True)
def kalman_filter_arrays(F, h, B, R, W, m0, P0, y):
    n, p = y.shape
    pred_m = np.empty((n, p))
    pred_P = np.empty((n, p, p))
    filt_m = np.empty((n, p))
    filt_P = np.empty((n, p, p))
    loglik = 0.0
    for i in range(n):
        if i == 0:
            mp = m0.copy()
            Pp = P0.copy()
        else:
            mp = F[i - 1] @ filt_m[i - 1] + h[i - 1]
            Pp = _sym(F[i - 1] @ filt_P[i - 1] @ F[i - 1].T + W)
        pred_m[i] = mp
        pred_P[i] = Pp
        S = _sym(B @ Pp @ B.T + R)
        S_inv = np.linalg.inv(S)
        resid = y[i] - B @ mp
        K = Pp @ B.T @ S_inv
        filt_m[i] = mp + K @ resid
        # Joseph form keeps the covariance symmetric positive definite
        IKB = np.eye(p) - K @ B
        filt_P[i] = _sym(IKB @ Pp @ IKB.T + K @ R @ K.T)
        sign, logdet = np.linalg.slogdet(S)
        loglik += -0.5 * (p * math.log(2.0 * math.pi) + logdet + resid @ S_inv @ resid)
    return pred_m, pred_P, filt_m, filt_P, loglik


@njit(cache=True)
def rts_smoother_arrays(F, pred_m, pred_P, filt_m, filt_P):
    n, p = filt_m.shape
    sm_m = np.empty((n, p))
    sm_P = np.empty((n, p, p))
    sm_m[n - 1] = filt_m[n - 1]
    sm_P[n - 1] = filt_P[n - 1]
    for i in range(n - 2, -1, -1):
        J = filt_P[i] @ F[i].T @ np.linalg.inv(pred_P[i + 1])
        sm_m[i] = filt_m[i] + J @ (sm_m[i + 1] - pred_m[i + 1])
        sm_P[i] = _sym(filt_P[i] + J @ (sm_P[i + 1] - pred_P[i + 1]) @ J.T)
    return sm_m, sm_P


@njit(cache=True)
def ffbs_arrays(F, pred_m, pred_P, filt_m, filt_P, z):
    """Forward-filter backward-sample one joint draw of the states."""
    n, p = filt_m.shape
    x = np.empty((n, p))
    L = np.linalg.cholesky(filt_P[n - 1])
    x[n - 1] = filt_m[n - 1] + L @ z[n - 1]
    for i in range(n - 2, -1, -1):
        J = filt_P[i] @ F[i].T @ np.linalg.inv(pred_P[i + 1])
        mean = filt_m[i] + J @ (x[i + 1] - pred_m[i + 1])
        cov = _sym(filt_P[i] - J @ F[i] @ filt_P[i])
        L = np.linalg.cholesky(cov + 1e-14 * np.eye(p))
        x[i] = mean + L @ z[i]
    return x


@njit(cache=True)
def forward_conditional_arrays(F, h, B, R, W, m0, P0, y, z):
    """Sequential state draws C_i ~ N(M_i m_i, M_i) with

        M_i = (B' R^{-1} B + S_i^{-1})^{-1},  m_i = B' R^{-1} y_i + S_i^{-1} (F C_{i-1} + h),
        S_i = F M_{i-1} F' + W,  S_1 = P0 and prior mean m0 for the first state.

    Returns the draws and the sequence of M_i.
    """
    n, p = y.shape
    R_inv = np.linalg.inv(R)
    BtRi = B.T @ R_inv
    info = BtRi @ B
    x = np.empty((n, p))
    Ms = np.empty((n, p, p))
    for i in range(n):
        if i == 0:
            S = P0.copy()
            prior_mean = m0.copy()
        else:
            S = _sym(F[i - 1] @ Ms[i - 1] @ F[i - 1].T + W)
            prior_mean = F[i - 1] @ x[i - 1] + h[i - 1]
        S_inv = np.linalg.inv(S)
        M = _sym(np.linalg.inv(info + S_inv))
        mean = M @ (BtRi @ y[i] + S_inv @ prior_mean)
        Ms[i] = M
        L = np.linalg.cholesky(M)
        x[i] = mean + L @ z[i]
    return x, Ms
