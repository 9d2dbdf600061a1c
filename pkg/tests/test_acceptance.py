"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line that is printed in the terminal
summary.  Criteria 5 and 6 share one suite of simulation fits over five
seeds (about five minutes on one core).
"""
import math
import time

import mpmath
import numpy as np
import pytest

from exposure_ssm import io
from exposure_ssm import physical as phys
from exposure_ssm.assessment import assess, dgp_score, effective_sample_size, replicate
from exposure_ssm.gaussian import GaussianSSMSpec, gibbs_fit_gaussian, kalman_filter_affine, kalman_smoother
from exposure_ssm.nongaussian import NonGaussianSSMSpec, fit_bnlr_two_zone, fit_nongaussian
from exposure_ssm.statespace import MeasurementSeries, ModelSetup
from exposure_ssm.stochastics import (
    distance_matrix,
    exp_corr,
    inverse_gamma_posterior,
    inverse_wishart_posterior,
    make_rng,
)

from .conftest import ACCEPTANCE_LINES, rk4, taylor_linear
from .test_gaussian import _condition, _joint, _random_instance

SEEDS = (1, 2, 3, 4, 5)
N_ITER = 20_000
BURN_IN = 5_000
THIN = 10


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def test_criterion_1_exact_solutions_match_fine_integration():
    one = phys.OneZoneParams(351.5, 13.8, 0.1, 3.8)
    two = phys.TwoZoneParams(351.5, 13.8, 5.0, 0.0)
    k, g = one.decay_rate, one.G / one.V
    A, gv = phys.two_zone_matrix(two)
    # order-8 Taylor steps of 1e-4; classical RK4 at this step is itself off by
    # ~1e-4 in the near-field transient (stiff eigenvalue about -1593 per minute)
    t1, y1 = taylor_linear([[-k]], [g], [1.0], 10.0, 1e-4)
    t2, y2 = taylor_linear(A, gv, [0.0, 0.5], 10.0, 1e-4)
    _, r2 = rk4(lambda c: A @ c + gv, [0.0, 0.5], 10.0, 1e-4)
    start = time.perf_counter()
    e1 = phys.exact_one_zone(one, 1.0, t1)
    e2 = phys.exact_two_zone(two, [0.0, 0.5], t2)
    elapsed = time.perf_counter() - start
    err1 = float(np.max(np.abs(e1 - y1[:, 0])))
    err2 = float(np.max(np.abs(e2 - y2)))
    err_rk4 = float(np.max(np.abs(e2 - r2)))
    ok = err1 < 1e-5 and err2 < 1e-5 and elapsed < 1.0
    record(
        1,
        ok,
        f"max abs error one-zone {err1:.2e}, two-zone {err2:.2e} over [0,10] (Taylor-8, step 1e-4; "
        f"two-zone vs RK4 at 1e-4: {err_rk4:.1e}); exact evaluation {elapsed:.3f} s",
    )
    assert ok


def test_criterion_2_steady_states():
    one = phys.steady_state_one_zone(phys.OneZoneParams(351.5, 13.8, 0.0, 3.8))
    two = phys.steady_state_two_zone(phys.TwoZoneParams(351.5, 13.8, 5.0, 0.0))
    eddy = phys.EddyParams(351.5, 1.0)
    s = np.array([[1.0, 0.0]])
    limit = float(phys.steady_state_eddy(eddy, s)[0])
    late = float(np.ravel(phys.exact_eddy(eddy, s[0], 1e6))[0])
    rel = abs(late / limit - 1.0)
    ok = round(one, 2) == 25.47 and round(two[0], 2) == 95.77 and rel < 1e-3
    ok = ok and limit == pytest.approx(351.5 / (2 * math.pi), rel=1e-12)
    record(2, ok, f"one-zone {one:.4f}, two-zone near {two[0]:.4f}, eddy t=1e6 vs limit rel diff {rel:.1e}")
    assert ok


def test_criterion_3_filter_and_smoother_oracle():
    rng = make_rng(3)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n, p, F, h, B, R, W, m0, P0, y = _random_instance(rng)
        f = kalman_filter_affine(F, h, B, R, W, m0, P0, y)
        sm = kalman_smoother(f)
        mx, my, Sx, Sxy, Syy = _joint(F, h, B, R, W, m0, P0, n, p)
        for i in range(n):
            m, S = _condition(mx, my, Sx, Sxy, Syy, y, i + 1, p)
            sl = slice(i * p, (i + 1) * p)
            worst = max(worst, np.max(np.abs(f.filt_mean[i] - m[sl])), np.max(np.abs(f.filt_cov[i] - S[sl, sl])))
        m, S = _condition(mx, my, Sx, Sxy, Syy, y, n, p)
        worst = max(worst, np.max(np.abs(sm.mean.ravel() - m)))
        for i in range(n):
            sl = slice(i * p, (i + 1) * p)
            worst = max(worst, np.max(np.abs(sm.cov[i] - S[sl, sl])))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 10.0
    record(3, ok, f"200 instances, max abs deviation {worst:.1e}, {elapsed:.2f} s")
    assert ok


def test_criterion_4_conjugate_updates():
    r = np.array([0.5, -1.0, 2.0])
    a, b = inverse_gamma_posterior(2.0, 1.0, r)
    ig_ok = a == 3.5 and b == 1.0 + 0.5 * (0.25 + 1.0 + 4.0)
    E = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
    S0 = np.array([[2.0, 0.5], [0.5, 1.0]])
    rr, S = inverse_wishart_posterior(3.0, S0, E)
    expected = S0 + np.array([[1 + 0 + 9, 2 + 0 + 3], [2 + 0 + 3, 4 + 1 + 1]], dtype=float)
    iw_ok = rr == 6.0 and np.array_equal(S, expected)
    ok = ig_ok and iw_ok
    record(4, ok, f"IG ({a}, {b}) and IW ({rr}, {S.tolist()}) on n=3 fixtures")
    assert ok


# --- simulation suite shared by criteria 5 and 6 -------------------------------


def _fit_suite():
    out = {}
    for seed in SEEDS:
        for kind in ("one-zone", "two-zone", "eddy"):
            data = io.simulate_dataset(kind, rng=make_rng(seed, 100))
            fits = {
                "nongaussian": lambda: fit_nongaussian(
                    NonGaussianSSMSpec(ModelSetup(kind)), data, N_ITER, BURN_IN, THIN, make_rng(seed, 1)
                ),
                "gaussian": lambda: gibbs_fit_gaussian(
                    GaussianSSMSpec(ModelSetup(kind)), data, N_ITER, BURN_IN, THIN, make_rng(seed, 1)
                ),
            }
            if kind == "two-zone":
                fits["bnlr"] = lambda: fit_bnlr_two_zone(data, None, N_ITER, BURN_IN, THIN, make_rng(seed, 1))
            for engine, fn in fits.items():
                t0 = time.perf_counter()
                samples = fn()
                rep = assess(samples, data, true_values=io.SIM_DEFAULTS[kind], rng=make_rng(seed, 2))
                out[(seed, kind, engine)] = (rep, time.perf_counter() - t0)
    return out


@pytest.fixture(scope="module")
def suite():
    return _fit_suite()


COVERED = {"one-zone": ("G", "Q"), "two-zone": ("G", "Q", "beta"), "eddy": ("G", "D_T")}


def test_criterion_5_simulation_coverage(suite):
    parts, ok = [], True
    for kind, names in COVERED.items():
        passes = sum(all(suite[(s, kind, "nongaussian")][0].params[k].covered for k in names) for s in SEEDS)
        slowest = max(suite[(s, kind, "nongaussian")][1] for s in SEEDS)
        parts.append(f"{kind} {passes}/5 (slowest fit {slowest:.0f} s)")
        ok = ok and passes >= 4 and slowest < 300
    record(5, ok, "non-Gaussian 95% CIs cover the truth: " + ", ".join(parts))
    assert ok


def test_criterion_6_model_orderings(suite):
    parts, ok = [], True
    for kind in ("one-zone", "two-zone", "eddy"):
        wins = 0
        for s in SEEDS:
            ng = suite[(s, kind, "nongaussian")][0]
            ga = suite[(s, kind, "gaussian")][0]
            good = ng.MSE < ga.MSE and ng.D < ga.D
            if kind == "two-zone":
                good = good and ng.D < suite[(s, kind, "bnlr")][0].D
            wins += good
        ng = [suite[(s, kind, "nongaussian")][0] for s in SEEDS]
        ga = [suite[(s, kind, "gaussian")][0] for s in SEEDS]
        detail = (
            f"{kind} {wins}/5 (median D {np.median([r.D for r in ng]):.4g} vs {np.median([r.D for r in ga]):.4g}, "
            f"MSE {np.median([r.MSE for r in ng]):.3g} vs {np.median([r.MSE for r in ga]):.3g}"
        )
        if kind == "two-zone":
            detail += f", BNLR D {np.median([suite[(s, kind, 'bnlr')][0].D for s in SEEDS]):.4g}"
        parts.append(detail + ")")
        ok = ok and wins >= 4
    record(6, ok, "non-Gaussian beats Gaussian (and BNLR): " + "; ".join(parts))
    assert ok


# --- cross-engine consistency ---------------------------------------------------


def test_criterion_7_cross_engine_consistency():
    rng = make_rng(11)
    n, s2, t2 = 50, 0.05, 0.02
    x = math.log(20.0) + np.cumsum(math.sqrt(t2) * rng.standard_normal(n))
    z = x + math.sqrt(s2) * rng.standard_normal(n)
    data = MeasurementSeries("random-walk", np.arange(float(n)), np.exp(z))
    spec = NonGaussianSSMSpec(ModelSetup("random-walk"), fixed={"sigma2": s2, "tau2": t2})
    s = fit_nongaussian(spec, data, 40_000, 5_000, 5, make_rng(3))
    L = np.log(s.draws["state"][0, :, :, 0])
    ess = np.array([effective_sample_size(L[:, i]) for i in range(n)])
    mcse = L.std(axis=0) / np.sqrt(ess)
    # identity map with the mean-preserving log drift -tau2/2
    f = kalman_filter_affine(
        np.ones((n - 1, 1, 1)), np.full((n - 1, 1), -t2 / 2), [[1.0]], [[s2]], [[t2]], [z[0]], [[10.0]], z[:, None]
    )
    km = kalman_smoother(f).mean[:, 0]
    zmax = float(np.max(np.abs(L.mean(axis=0) - km) / mcse))
    ok = zmax < 3.0
    record(7, ok, f"n={n}, max |posterior mean - smoother| / MCSE = {zmax:.2f} (min ESS {ess.min():.0f})")
    assert ok


# --- determinism --------------------------------------------------------------------


def test_criterion_8_determinism(tmp_path):
    data = io.simulate_dataset("one-zone", grid=np.arange(0.0, 40.0), rng=make_rng(8))
    path = tmp_path / "sim.csv"
    io.write_series(data, path)
    base = dict(model="one-zone", ssm="nongaussian", data=str(path), iters=600, burnin=100, thin=2, chains=3, seed=8)
    blobs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 3)):
        io.run(io.RunConfig(**base, threads=threads, out=str(tmp_path / name)))
        blobs.append((tmp_path / name / "samples.csv").read_bytes())
    rerun = blobs[0] == blobs[1]
    concurrent = blobs[0] == blobs[2]
    ok = rerun and concurrent
    record(8, ok, f"rerun byte-identical: {rerun}; 3 concurrent chains equal sequential: {concurrent}")
    assert ok


# --- property suites --------------------------------------------------------------


def test_criterion_9_property_suites():
    checks = {}
    # positivity of non-Gaussian trajectories
    d = io.simulate_dataset("two-zone", grid=np.arange(0.0, 30.0), rng=make_rng(9))
    s = fit_nongaussian(NonGaussianSSMSpec(ModelSetup("two-zone")), d, 600, 100, rng=make_rng(9))
    checks["positivity"] = bool(np.all(s.draws["state"] > 0))
    # D = G + P exactly, G and P non-negative
    reps = replicate(s, d, make_rng(10))
    D, G, P = dgp_score(reps, d)
    checks["D=G+P"] = D == G + P and G >= 0 and P >= 0
    # smoothed variance <= filtered variance
    rng = make_rng(11)
    smooth_ok = True
    for _ in range(200):
        n, p, F, h, B, R, W, m0, P0, y = _random_instance(rng)
        f = kalman_filter_affine(F, h, B, R, W, m0, P0, y)
        sm = kalman_smoother(f)
        smooth_ok &= bool(np.all(np.diagonal(sm.cov, 0, 1, 2) <= np.diagonal(f.filt_cov, 0, 1, 2) + 1e-12))
    checks["smoothed<=filtered"] = smooth_ok
    # erf against 50-digit arithmetic
    mpmath.mp.dps = 50
    xs = np.concatenate([np.linspace(-6, 6, 2001), make_rng(12).uniform(-30, 30, 500)])
    erf_err = max(abs(phys.erf(float(x)) - float(mpmath.erf(mpmath.mpf(float(x))))) for x in xs)
    checks["erf 1e-12"] = erf_err < 1e-12
    # exponential correlation PD over 1000 random planar configurations
    rng = make_rng(13)
    pd_ok = True
    for _ in range(1000):
        m = int(rng.integers(2, 15))
        pts = rng.uniform(-10, 10, size=(m, 2))
        R = exp_corr(float(rng.uniform(0.05, 5.0)), distance_matrix(pts))
        pd_ok &= bool(np.min(np.linalg.eigvalsh(R)) > 0)
    checks["R(phi) PD"] = pd_ok
    ok = all(checks.values())
    record(9, ok, ", ".join(f"{k}: {'ok' if v else 'violated'}" for k, v in checks.items()) + f" (erf max error {erf_err:.1e})")
    assert ok
