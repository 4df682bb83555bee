import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from autolfd.hyperopt import (
    BO_BUDGET,
    DEFAULT_BOUNDS,
    GD_STEPS,
    Hyperparams,
    NonFiniteLossError,
    ObservationSet,
    bo_optimize,
    expected_improvement,
    fd_gradient,
    gd_optimize,
    latin_hypercube,
    matern52,
    surrogate_fit,
)


def _quad(x):
    return (x[0] - 1.0) ** 2 + (x[1] + 2.0) ** 2


# --- hyperparameters ---------------------------------------------------------


def test_hyperparams_roundtrip_and_bounds():
    h = Hyperparams(2.0, -3.0)
    assert h.kh == 100.0 and h.lam == pytest.approx(1e-3)
    assert Hyperparams.from_array(h.as_array()) == h
    assert h.within()
    assert not Hyperparams(7.0, 0.0).within()
    np.testing.assert_array_equal(DEFAULT_BOUNDS, [[-2.0, 6.0], [-8.0, 2.0]])
    assert (GD_STEPS, BO_BUDGET) == (30, 100)


# --- finite differences ------------------------------------------------------


def test_fd_gradient_quadratic():
    np.testing.assert_allclose(fd_gradient(_quad, [0.0, 0.0]), [-2.0, 4.0], atol=1e-6)
    assert np.linalg.norm(fd_gradient(_quad, [1.0, -2.0])) <= 1e-8


def test_fd_gradient_constant():
    np.testing.assert_allclose(fd_gradient(lambda x: 3.5, [0.3, -0.7]), [0.0, 0.0], atol=1e-12)


def test_fd_gradient_clips_stencil_at_bounds():
    b = np.array([[0.0, 1.0], [0.0, 1.0]])
    seen = []

    def f(x):
        seen.append(np.array(x))
        return float(x @ x)

    g = fd_gradient(f, [1.0, 0.5], bounds=b)
    assert all(np.all((p >= 0) & (p <= 1)) for p in seen)
    # one-sided difference at the upper bound
    assert g[0] == pytest.approx((1.0 - (1.0 - 1e-3) ** 2) / 1e-3, rel=1e-12)


def test_fd_gradient_non_finite():
    def f(x):
        return np.inf if x[1] > 0 else 0.0

    with pytest.raises(NonFiniteLossError) as err:
        fd_gradient(f, [0.0, 0.0])
    assert err.value.x[1] > 0


# --- gradient descent --------------------------------------------------------


def test_gd_converges_on_quadratic():
    res = gd_optimize(_quad, [4.0, 1.0], learning_rate=0.3, steps=30)
    assert np.linalg.norm(fd_gradient(_quad, res.x)) <= 1e-4
    assert len(res.history) == 31


def test_gd_zero_learning_rate():
    res = gd_optimize(_quad, [0.5, 0.5], learning_rate=0.0, steps=5)
    np.testing.assert_array_equal(res.x, [0.5, 0.5])
    assert {c for _, c in res.history} == {_quad([0.5, 0.5])}


@given(st.floats(0.01, 50.0), st.floats(-1.5, 5.5), st.floats(-7.5, 1.5))
def test_gd_accepted_costs_non_increasing(lr, x0, y0):
    def bumpy(x):
        return np.sin(3 * x[0]) + 0.1 * x[0] ** 2 + np.cos(2 * x[1]) + 0.05 * x[1] ** 2

    res = gd_optimize(bumpy, [x0, y0], lr, steps=10, bounds=DEFAULT_BOUNDS)
    costs = [c for _, c in res.history]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert all(Hyperparams.from_array(x).within() for x, _ in res.history)


def test_gd_projects_onto_bounds():
    res = gd_optimize(lambda x: -x[0] - x[1], [0.0, 0.0], 100.0, steps=3, bounds=DEFAULT_BOUNDS)
    np.testing.assert_array_equal(res.x, [6.0, 2.0])


# --- surrogate ---------------------------------------------------------------


def test_matern_values():
    a = np.array([[0.0, 0.0]])
    assert matern52(a, a, [1.0, 1.0])[0, 0] == 1.0
    b = np.array([[1.0, 0.0]])
    r = 1.0
    expected = (1 + np.sqrt(5) * r + 5 * r * r / 3) * np.exp(-np.sqrt(5) * r)
    assert matern52(a, b, [1.0, 2.0])[0, 0] == pytest.approx(expected, rel=1e-14)


def _obs(seed=0, n=12):
    rng = np.random.default_rng(seed)
    obs = ObservationSet()
    for x in rng.uniform([-2, -8], [6, 2], size=(n, 2)):
        obs = obs.append(x, float(np.sin(x[0]) + 0.1 * x[1] ** 2))
    return obs


def test_surrogate_interpolates():
    obs = _obs()
    model = surrogate_fit(obs, DEFAULT_BOUNDS)
    mean, _ = model.predict(obs.x)
    np.testing.assert_allclose(mean, obs.y, atol=1e-3)


def test_surrogate_variance_shrinks_at_data():
    obs = ObservationSet().append([-1.5, -7.5], 1.0).append([-1.0, -7.0], 2.0).append([-1.8, -7.2], 1.5)
    model = surrogate_fit(obs, DEFAULT_BOUNDS)
    _, sd_data = model.predict(obs.x)
    _, sd_center = model.predict(DEFAULT_BOUNDS.mean(axis=1))
    assert np.all(sd_data <= sd_center[0])


def test_surrogate_deterministic():
    a = surrogate_fit(_obs(3), DEFAULT_BOUNDS)
    b = surrogate_fit(_obs(3), DEFAULT_BOUNDS)
    q = np.array([[0.0, 0.0], [3.0, -4.0]])
    assert a.predict(q)[0].tobytes() == b.predict(q)[0].tobytes()
    np.testing.assert_array_equal(a.length_scales, b.length_scales)


def test_surrogate_errors():
    with pytest.raises(ValueError):
        surrogate_fit(ObservationSet().append([0.0, 0.0], 1.0))
    same = ObservationSet().append([0.0, 0.0], 1.0).append([0.0, 0.0], 2.0)
    with pytest.raises(ValueError, match="degenerate"):
        surrogate_fit(same)


def test_observation_set_invariants():
    with pytest.raises(ValueError):
        ObservationSet(((0.0, 0.0),), (np.nan,))
    obs = _obs(1, 20)
    trace = obs.incumbent_trace()
    assert np.all(np.diff(trace) <= 0)
    assert obs.incumbent == trace[-1] == obs.y[obs.incumbent_index]


# --- expected improvement ----------------------------------------------------


def test_ei_examples():
    assert expected_improvement(1.0, 0.0, 1.0) == 0.0
    assert expected_improvement(0.5, 0.0, 1.0) == 0.5
    assert expected_improvement(0.0, 1.0, 0.0) == pytest.approx(0.3989422804, abs=1e-6)
    with pytest.raises(ValueError):
        expected_improvement(0.0, -1.0, 0.0)


@pytest.mark.parametrize("mu,sd,best", [(0.0, 1.0, 0.0), (1.0, 0.5, 0.3), (-0.2, 2.0, 0.4)])
def test_ei_matches_monte_carlo(mu, sd, best):
    draws = np.random.default_rng(99).normal(mu, sd, size=1_000_000)
    mc = np.mean(np.maximum(best - draws, 0.0))
    assert expected_improvement(mu, sd, best) == pytest.approx(mc, abs=1e-3)


@given(st.floats(-10, 10), st.floats(0, 10), st.floats(-10, 10))
def test_ei_non_negative(mu, sd, best):
    ei = expected_improvement(mu, sd, best)
    assert ei >= 0.0
    if sd == 0 and mu >= best:
        assert ei == 0.0


def test_ei_vectorized():
    mu = np.array([0.0, 1.0, 2.0])
    sd = np.array([1.0, 0.0, 1.0])
    out = expected_improvement(mu, sd, 1.0)
    z = (1.0 - mu[[0, 2]]) / sd[[0, 2]]
    np.testing.assert_allclose(out[[0, 2]], (1.0 - mu[[0, 2]]) * norm.cdf(z) + sd[[0, 2]] * norm.pdf(z))
    assert out[1] == 0.0


# --- Bayesian optimization ---------------------------------------------------


def test_latin_hypercube_strata():
    pts = latin_hypercube(np.array([[0.0, 8.0], [-1.0, 1.0]]), 8, seed=[0, 0])
    assert sorted(np.floor(pts[:, 0]).astype(int).tolist()) == list(range(8))


def test_bo_quadratic_1d():
    res = bo_optimize(lambda x: (x[0] - 1.7) ** 2, bounds=[[-5.0, 5.0]], budget=30, seed=0)
    assert abs(res.x[0] - 1.7) <= 0.1
    assert len(res.observations) == 30


def test_bo_incumbent_monotone_and_deterministic():
    def f(x):
        return float(np.sin(x[0]) + 0.1 * (x[1] + 3) ** 2)

    a = bo_optimize(f, DEFAULT_BOUNDS, budget=15, seed=4)
    b = bo_optimize(f, DEFAULT_BOUNDS, budget=15, seed=4)
    assert a.observations == b.observations
    assert np.all(np.diff(a.observations.incumbent_trace()) <= 0)
    assert a.cost == min(a.observations.costs)


def test_bo_penalizes_non_finite():
    def f(x):
        if x[0] > 4.0:
            raise np.linalg.LinAlgError("boom")
        return float(x[0] ** 2)

    res = bo_optimize(f, DEFAULT_BOUNDS, budget=20, seed=0)
    assert res.penalized
    costs = res.observations.costs
    for i in res.penalized:
        assert res.observations.x[i, 0] > 4.0
        earlier = [costs[j] for j in range(i) if j not in res.penalized]
        expected = 10.0 * abs(max(earlier)) if earlier and max(earlier) != 0 else 10.0
        assert costs[i] == expected


def test_bo_budget_check():
    with pytest.raises(ValueError):
        bo_optimize(_quad, DEFAULT_BOUNDS, budget=4)
