import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from exposure_ssm.assessment import (
    assess,
    dgp_score,
    effective_sample_size,
    replicate,
    state_mse,
    summarize,
)
from exposure_ssm.statespace import MeasurementSeries, PosteriorSamples
from exposure_ssm.stochastics import make_rng


def _samples(states, engine="gaussian", kind="one-zone", **scalars):
    states = np.asarray(states, dtype=float)
    k, n, p = states.shape
    draws = {name: np.asarray(v, dtype=float).reshape(1, k) for name, v in scalars.items()}
    draws["state"] = states[None]
    return PosteriorSamples(engine, kind, np.arange(float(n)), (), draws)


def test_perfect_replicates_score_zero():
    y = np.array([[1.0], [2.0], [3.0]])
    reps = np.repeat(y[None], 10, axis=0)
    assert dgp_score(reps, y) == (0.0, 0.0, 0.0)


def test_two_point_replicates():
    D, G, P = dgp_score(np.array([[[1.0]], [[3.0]]]), np.array([[2.0]]))
    assert (D, G, P) == (2.0, 0.0, 2.0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 4, 2), elements=st.floats(-50, 50)), arrays(np.float64, (4, 2), elements=st.floats(-50, 50)))
def test_score_additive_nonnegative_and_permutation_invariant(reps, y):
    D, G, P = dgp_score(reps, y)
    assert D == G + P and G >= 0 and P >= 0
    perm = np.random.default_rng(0).permutation(6)
    D2, G2, P2 = dgp_score(reps[perm], y)
    assert D2 == pytest.approx(D, rel=1e-12, abs=1e-9)


def test_fit_term_shrinks_as_replicates_approach_data():
    rng = make_rng(300)
    y = rng.standard_normal((20, 1))
    far = y[None] + 5.0 + rng.standard_normal((50, 20, 1))
    Gs = [dgp_score((1 - a) * far + a * y[None], y)[1] for a in np.linspace(0, 1, 11)]
    assert all(b <= a for a, b in zip(Gs, Gs[1:]))
    assert Gs[-1] < 1e-20


def test_state_mse_cases():
    truth = np.array([1.0, 2.0, 4.0])
    s = _samples(np.repeat(truth[None, :, None], 3, axis=0))
    assert state_mse(s, truth) == 0.0
    s = _samples(np.repeat((truth + 0.5)[None, :, None], 3, axis=0))
    assert state_mse(s, truth) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        state_mse(s, truth[:2])


def test_ess_constant_and_independent_chains():
    assert effective_sample_size(np.ones(500)) == 500
    x = make_rng(301).standard_normal((2, 5000))
    assert 8000 < effective_sample_size(x) <= 10_000
    # AR(1) with rho = 0.9 has ESS ~ n (1 - rho) / (1 + rho)
    rng = make_rng(302)
    n, rho = 100_000, 0.9
    e = rng.standard_normal(n)
    ar = np.empty(n)
    ar[0] = e[0]
    for i in range(1, n):
        ar[i] = rho * ar[i - 1] + np.sqrt(1 - rho**2) * e[i]
    assert effective_sample_size(ar) == pytest.approx(n * (1 - rho) / (1 + rho), rel=0.1)


def test_summary_quantiles_of_standard_normal():
    x = make_rng(303).standard_normal(100_000)
    s = PosteriorSamples("gaussian", "one-zone", np.arange(2.0), ("G",), {"G": x[None]})
    rep = summarize(s, {"G": 0.0})
    q = rep.params["G"]
    assert abs(q.q025 + 1.96) < 0.02 and abs(q.q975 - 1.96) < 0.02
    assert q.q025 <= q.median <= q.q975 and q.covered is True
    assert summarize(s, {"G": 3.0}).params["G"].covered is False
    assert summarize(s).params["G"].covered is None
    # symmetric flip: coverage of -v under -x equals coverage of v under x
    s_neg = PosteriorSamples("gaussian", "one-zone", np.arange(2.0), ("G",), {"G": -x[None]})
    for v in (-2.5, -1.0, 0.3, 1.9, 2.1):
        assert summarize(s, {"G": v}).params["G"].covered == summarize(s_neg, {"G": -v}).params["G"].covered


def test_summary_splits_matrices_and_reports_ess():
    k = 200
    S = np.tile(np.array([[1.0, 0.2], [0.2, 2.0]]), (1, k, 1, 1))
    s = PosteriorSamples("gaussian", "two-zone", np.arange(2.0), (), {"Sigma_nu": S})
    d = summarize(s).to_dict()
    assert set(d["params"]) == {"Sigma_nu[0,0]", "Sigma_nu[0,1]", "Sigma_nu[1,1]"}
    assert d["diagnostics"]["ess"]["Sigma_nu[0,1]"] == k


def test_zero_noise_replicates_equal_states():
    rng = make_rng(304)
    states = rng.uniform(1, 5, size=(7, 4, 1))
    s = _samples(states, sigma2=np.zeros(7))
    np.testing.assert_array_equal(replicate(s, rng=rng), states)
    s = _samples(states, engine="nongaussian", sigma2=np.zeros(7), tau2=np.ones(7))
    np.testing.assert_allclose(replicate(s, rng=rng), states, rtol=1e-14)


def test_replicate_count_and_shape_checks():
    s = _samples(np.ones((9, 5, 1)), sigma2=np.ones(9))
    assert replicate(s).shape == (9, 5, 1)
    with pytest.raises(ValueError):
        replicate(s, MeasurementSeries("one-zone", np.arange(4.0), np.ones(4)))
    bad = PosteriorSamples("other", "one-zone", np.arange(5.0), (), {"state": np.ones((1, 2, 5, 1))})
    with pytest.raises(ValueError):
        replicate(bad)


def test_replicate_variance_is_total_variance():
    rng = make_rng(305)
    k, n = 100_000, 3
    post_sd = np.array([0.5, 1.0, 2.0])
    states = 3.0 + post_sd[None, :, None] * rng.standard_normal((k, n, 1))
    sigma2 = 0.7
    s = _samples(states, sigma2=np.full(k, sigma2))
    reps = replicate(s, rng=make_rng(306))
    expected = states.var(axis=0, ddof=1)[:, 0] + sigma2
    np.testing.assert_allclose(reps.var(axis=0, ddof=1)[:, 0], expected, rtol=0.01)


def test_assess_defaults_to_truth_then_data():
    states = np.repeat(np.array([[1.0], [2.0], [3.0]])[None], 4, axis=0)
    s = _samples(states, sigma2=np.zeros(4))
    data = MeasurementSeries("one-zone", np.arange(3.0), [1.0, 2.0, 3.5], truth=[1.0, 2.0, 3.0])
    rep = assess(s, data)
    assert rep.MSE == 0.0 and rep.D == rep.G + rep.P
    assert rep.G == pytest.approx(0.25)
    data_nt = MeasurementSeries("one-zone", np.arange(3.0), [1.0, 2.0, 3.5])
    assert assess(s, data_nt).MSE == pytest.approx(0.25 / 3)
