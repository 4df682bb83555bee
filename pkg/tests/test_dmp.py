import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from autolfd.dmp import (
    DmpModel,
    GpForcing,
    adapt_dmp,
    canonical_phase,
    critical_damping,
    extract_forcing_targets,
    fit_dmp,
    gp_predict,
    rollout,
)
from autolfd.hyperopt import Hyperparams
from autolfd.letters import minimum_jerk
from autolfd.trajectory import ConstraintPoint, Constraints, Demonstration

GOOD = Hyperparams(4.0, -4.0)


def _free_model(o=2, tau=1.0, kp=100.0, n=101):
    # forcing identically zero: GP trained on zero targets
    s = canonical_phase(np.linspace(0, tau, n), tau)
    gp = GpForcing.fit(s, np.zeros((n, o)), 1.0, 1e-6)
    kp = np.full(o, kp)
    return DmpModel(4.0, tau, kp, critical_damping(kp), np.zeros(o), np.ones(o), gp, np.ones(o, bool))


def _oracle(model, xi0, g, t_eval, forcing=True):
    """Independent RK45 solution of the transformation system."""
    tau = model.tau
    xi0 = np.asarray(xi0, float)
    g = np.asarray(g, float)
    o = xi0.size

    def rhs(t, y):
        x, v = y[:o], y[o:]
        s = np.exp(-model.alpha * t / tau)
        push = s * (g - xi0) * model.gp.predict(s) if forcing else 0.0
        acc = (model.kp * (g - x) - tau * model.kv * v + push) / tau**2
        return np.concatenate([v, acc])

    sol = solve_ivp(rhs, (0.0, t_eval[-1]), np.concatenate([xi0, np.zeros(o)]), t_eval=t_eval, rtol=1e-10, atol=1e-12)
    return sol.y[:o].T


def _min_jerk_demo(n=101, tau=1.0):
    t = np.linspace(0.0, tau, n)
    return Demonstration.from_positions(t, minimum_jerk(t / tau)[:, None])


# --- canonical system --------------------------------------------------------


def test_phase_values():
    assert canonical_phase(0.0, 2.0) == 1.0
    assert canonical_phase(1.0, 1.0, alpha=1.0) == pytest.approx(np.exp(-1.0), abs=1e-12)
    s = canonical_phase(np.linspace(0, 3, 50), 3.0)
    assert np.all(np.diff(s) < 0)


# --- forcing targets ---------------------------------------------------------


def test_stationary_demo_rejected():
    t = np.linspace(0, 1, 20)
    demo = Demonstration.from_positions(t, np.ones((20, 2)))
    with pytest.raises(ValueError, match="zero-amplitude demonstration"):
        extract_forcing_targets(demo)


def test_forcing_substitution_reproduces_acceleration(letter_a):
    demo = letter_a[0]
    tr = demo.trajectory
    kp = np.full(2, 100.0)
    kv = critical_damping(kp)
    s, f, active = extract_forcing_targets(demo, 4.0, kp, kv)
    assert np.all(active)
    x0, g, tau = tr.positions[0], tr.positions[-1], tr.duration
    rhs = kp * (g - tr.positions) - tau * kv * tr.velocities + s[:, None] * (g - x0) * f
    np.testing.assert_allclose(rhs, tau**2 * demo.accelerations, rtol=1e-10, atol=1e-8)


def test_forcing_min_jerk_bounded_by_bruteforce():
    demo = _min_jerk_demo()
    s, f, _ = extract_forcing_targets(demo)
    tr = demo.trajectory
    brute = []
    for n in range(tr.n_points):
        x, v, a = tr.positions[n, 0], tr.velocities[n, 0], demo.accelerations[n, 0]
        num = 1.0 * a - 100.0 * (1.0 - x) + 1.0 * 20.0 * v
        brute.append(num / (np.exp(-4.0 * tr.times[n]) * 1.0))
    assert np.all(np.isfinite(f))
    assert np.max(np.abs(f)) == pytest.approx(np.max(np.abs(brute)), rel=1e-12)


def test_degenerate_dimension_gets_zero_forcing():
    t = np.linspace(0, 1, 50)
    pos = np.column_stack([minimum_jerk(t), np.sin(np.pi * t)])  # second dim starts and ends at 0
    _, f, active = extract_forcing_targets(Demonstration.from_positions(t, pos))
    assert active.tolist() == [True, False]
    assert np.all(f[:, 1] == 0)


# --- GP regression -----------------------------------------------------------


def test_gp_single_point():
    gp = GpForcing.fit([0.5], [2.0], 3.0, 0.0)
    assert gp_predict(gp, 0.5)[0] == pytest.approx(2.0, abs=1e-10)
    gp = GpForcing.fit([0.5], [2.0], 3.0, 1.0)
    assert gp_predict(gp, 0.5)[0] == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 1000), st.floats(200.0, 2000.0))
def test_gp_interpolates_at_small_lambda(seed, kh):
    rng = np.random.default_rng(seed)
    s = np.sort(rng.uniform(0.05, 1.0, 8))
    s = s[np.concatenate([[True], np.diff(s) > 0.05])]
    u = rng.normal(size=(s.size, 2))
    gp = GpForcing.fit(s, u, kh, 1e-10)
    np.testing.assert_allclose(gp.predict(s), u, atol=1e-6)


@given(st.integers(0, 1000))
def test_gp_linear_in_targets(seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0, 1, 12)
    u = rng.normal(size=(12, 2))
    q = rng.uniform(0, 1, 5)
    a = GpForcing.fit(s, u, 10.0, 1e-2).predict(q)
    b = GpForcing.fit(s, 2.0 * u, 10.0, 1e-2).predict(q)
    np.testing.assert_array_equal(b, 2.0 * a)


def test_gp_duplicate_inputs_rescued_by_jitter():
    gp = GpForcing.fit([0.5, 0.5, 0.5], [1.0, 1.0, 1.0], 1.0, 0.0)
    assert 0.0 < gp.jitter <= 1e-4
    assert gp.predict(0.5)[0] == pytest.approx(1.0, abs=1e-3)


# --- rollout -----------------------------------------------------------------


def test_rollout_equilibrium():
    model = _free_model()
    g = np.array([0.3, -0.2])
    out = rollout(model, g, g, forcing=False)
    np.testing.assert_array_equal(out.positions, np.tile(g, (out.n_points, 1)))


def test_rollout_free_settles_and_matches_oracle():
    model = _free_model()
    xi0, g = np.array([0.0, 1.0]), np.array([2.0, -1.0])
    out = rollout(model, xi0, g, forcing=False)
    assert out.n_points == 101
    ref = _oracle(model, xi0, g, out.times, forcing=False)
    assert np.linalg.norm(ref[-1] - g) <= 1e-2 * np.linalg.norm(g - xi0)
    assert np.linalg.norm(out.positions[-1] - g) <= 1e-2 * np.linalg.norm(g - xi0)


def test_rollout_step_count_and_guard():
    model = _free_model(tau=1.0)
    assert rollout(model, [0, 0], [1, 1], tau=1.0, dt=0.03).n_points == 34
    with pytest.raises(ValueError):
        rollout(model, [0, 0], [1, 1], tau=1.0, dt=0.2)


def test_endpoint_error_decreases_with_stiffness():
    errs = []
    for kp in (25.0, 100.0, 400.0):
        model = _free_model(kp=kp)
        out = rollout(model, [0.0, 0.0], [1.0, 1.0], forcing=False)
        errs.append(np.linalg.norm(out.positions[-1] - 1.0))
    assert errs[0] > errs[1] > errs[2]


def test_diverged_rollout_detected():
    model = _free_model()
    with pytest.raises(RuntimeError, match="diverged rollout"):
        rollout(model, [0.0, 0.0], [1e308, 1e308], forcing=False)


def test_dt_halving_is_first_order(letter_a):
    model = fit_dmp(letter_a[0], GOOD.kh, GOOD.lam)
    xi0, g = model.xi0_demo, model.goal_demo
    dt = model.tau / 100
    coarse = rollout(model, xi0, g, dt=dt)
    fine = rollout(model, xi0, g, dt=dt / 2)
    ref = _oracle(model, xi0, g, coarse.times)
    e1 = np.max(np.abs(coarse.positions - ref))
    e2 = np.max(np.abs(fine.positions[::2] - ref))
    assert 1.5 <= e1 / e2 <= 2.5


def test_reproduction_within_two_percent(letter_a):
    for demo in letter_a:
        tr = demo.trajectory
        model = fit_dmp(demo, GOOD.kh, GOOD.lam)
        out = rollout(model, tr.positions[0], tr.positions[-1])
        rmse = np.sqrt(np.mean(np.sum((out.positions - tr.positions) ** 2, axis=1)))
        assert rmse <= 0.02 * tr.bbox_diagonal()


# --- adapt_dmp ---------------------------------------------------------------


def _endpoints(tr, start, end):
    return Constraints((ConstraintPoint(tr.times[0], start), ConstraintPoint(tr.times[-1], end)))


def test_adapt_own_endpoints_reproduces(letter_a):
    demo = letter_a[1]
    tr = demo.trajectory
    out = adapt_dmp(demo, _endpoints(tr, tr.positions[0], tr.positions[-1]), GOOD)
    assert out.n_points == 200
    np.testing.assert_allclose(out.times, tr.times)
    rmse = np.sqrt(np.mean(np.sum((out.positions - tr.positions) ** 2, axis=1)))
    assert rmse <= 0.02 * tr.bbox_diagonal()


def test_adapt_new_goal_matches_oracle_endpoint(letter_a):
    demo = letter_a[0]
    tr = demo.trajectory
    start, goal = tr.positions[0] + [0.5, 0.2], tr.positions[-1] + [1.5, -1.0]
    out = adapt_dmp(demo, _endpoints(tr, start, goal), GOOD)
    model = fit_dmp(demo, GOOD.kh, GOOD.lam)
    ref = _oracle(model, start, goal, tr.times - tr.times[0])
    assert np.linalg.norm(out.positions[-1] - ref[-1]) <= 1e-2 * np.linalg.norm(goal - start)
    assert np.linalg.norm(out.positions[0] - start) == 0.0


def test_adapt_rejects_via_point(letter_a):
    tr = letter_a[0].trajectory
    c = Constraints(
        (
            ConstraintPoint(tr.times[0], tr.positions[0]),
            ConstraintPoint(tr.times[100], tr.positions[100]),
            ConstraintPoint(tr.times[-1], tr.positions[-1]),
        )
    )
    with pytest.raises(ValueError, match="unsupported constraint for DMP"):
        adapt_dmp(letter_a[0], c, GOOD)


def test_model_json_roundtrip(tmp_path, letter_a):
    model = fit_dmp(letter_a[0], GOOD.kh, GOOD.lam)
    path = model.save_json(tmp_path / "dmp.json")
    back = DmpModel.from_dict(json.loads(path.read_text()))
    a = rollout(model, model.xi0_demo, model.goal_demo)
    b = rollout(back, back.xi0_demo, back.goal_demo)
    assert a == b
