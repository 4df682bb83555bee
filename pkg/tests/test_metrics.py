import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from autolfd.encoder import init_params
from autolfd.gmm import ProbRefTrajectory
from autolfd.metrics import (
    MetricReport,
    discrete_frechet,
    latent_metric,
    metric_report,
    mle_cost,
    mse,
    shape_distortion,
    shape_terms,
    similarity_align,
)
from autolfd.trajectory import Demonstration, Trajectory


def _coupling_oracle(p, q):
    """Minimum over all monotone couplings of the largest matched distance."""
    n, m = len(p), len(q)
    best = np.inf

    def walk(i, j, worst):
        nonlocal best
        worst = max(worst, float(np.linalg.norm(p[i] - q[j])))
        if worst >= best:
            return
        if i == n - 1 and j == m - 1:
            best = worst
            return
        if i + 1 < n:
            walk(i + 1, j, worst)
        if j + 1 < m:
            walk(i, j + 1, worst)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, worst)

    walk(0, 0, 0.0)
    return best


def _smooth_demo(n=100):
    t = np.linspace(0.0, 2.0, n)
    pos = np.column_stack([np.cos(1.3 * t), np.sin(2.1 * t) + 0.5 * t])
    return Demonstration.from_positions(t, pos).trajectory


# --- mse / mle ---------------------------------------------------------------


def test_mse_identical_and_offset():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(30, 4))
    d = np.array([0.5, -1.0, 2.0, 0.25])
    assert mse(a, a) == 0.0
    assert mse(a, a + d) == pytest.approx(float(d @ d), rel=1e-12)


def test_mse_against_summation_oracle():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 2))  # O = 1: one position and one velocity column
    b = rng.normal(size=(5, 2))
    total = 0.0
    for n in range(5):
        for k in range(2):
            total += (b[n, k] - a[n, k]) ** 2
    assert mse(a, b) == pytest.approx(total / 5, abs=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        mse(np.zeros((4, 2)), np.zeros((5, 2)))


def _ref(rng, n=20, o=2, scale=1.0):
    t = np.linspace(0, 1, n)
    covs = []
    for _ in range(n):
        a = rng.normal(size=(2 * o, 2 * o))
        covs.append(scale * (a @ a.T + 0.5 * np.eye(2 * o)))
    return ProbRefTrajectory(t, rng.normal(size=(n, 2 * o)), np.stack(covs))


def test_mle_identical_is_zero(rng):
    ref = _ref(rng)
    assert mle_cost(ref, ref.means) == 0.0


def test_mle_identity_covariance_equals_mse(rng):
    ref = _ref(rng)
    unit = ProbRefTrajectory(ref.times, ref.means, np.tile(np.eye(4), (20, 1, 1)))
    traj = rng.normal(size=ref.means.shape)
    assert mle_cost(unit, traj) == mse(ref.means, traj)


@given(st.integers(0, 1000))
def test_mle_doubling_covariance_halves(seed):
    rng = np.random.default_rng(seed)
    ref = _ref(rng)
    doubled = ProbRefTrajectory(ref.times, ref.means, 2.0 * ref.covariances)
    traj = rng.normal(size=ref.means.shape)
    assert mle_cost(doubled, traj) == pytest.approx(0.5 * mle_cost(ref, traj), rel=1e-12)


def test_mle_matches_explicit_inverse(rng):
    ref = _ref(rng)
    traj = rng.normal(size=ref.means.shape)
    d = traj - ref.means
    oracle = np.mean([d[n] @ np.linalg.inv(ref.covariances[n]) @ d[n] for n in range(ref.n_points)])
    assert mle_cost(ref, traj) == pytest.approx(oracle, rel=1e-10)


def test_mle_singular_covariance():
    ref = ProbRefTrajectory(np.linspace(0, 1, 3), np.zeros((3, 2)), np.zeros((3, 2, 2)))
    with pytest.raises(np.linalg.LinAlgError, match="singular"):
        mle_cost(ref, np.ones((3, 2)))


# --- discrete Frechet --------------------------------------------------------


def test_frechet_base_cases():
    p = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]])
    assert discrete_frechet(p, p) == 0.0
    assert discrete_frechet([[1.0, 2.0]], [[4.0, 6.0]]) == 5.0
    with pytest.raises(ValueError):
        discrete_frechet(np.zeros((0, 2)), p)


def test_frechet_matches_coupling_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        n, m = rng.integers(1, 7, size=2)
        p, q = rng.normal(size=(n, 2)), rng.normal(size=(m, 2))
        assert discrete_frechet(p, q) == pytest.approx(_coupling_oracle(p, q), rel=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 30), st.integers(1, 30))
def test_frechet_endpoint_lower_bound_and_symmetry(seed, n, m):
    rng = np.random.default_rng(seed)
    p, q = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    d = discrete_frechet(p, q)
    assert d >= max(np.linalg.norm(p[0] - q[0]), np.linalg.norm(p[-1] - q[-1])) * (1 - 1e-12)
    assert d == discrete_frechet(q, p)


def test_frechet_uses_positions_of_trajectories():
    tr = _smooth_demo(20)
    shifted = Trajectory(tr.times, tr.positions + [3.0, 4.0], tr.velocities + 100.0)
    assert discrete_frechet(tr, shifted) == pytest.approx(5.0, abs=1e-12)


# --- shape distortion --------------------------------------------------------


@given(st.floats(0.3, 3.0), st.floats(-np.pi, np.pi), st.floats(-5, 5), st.floats(-5, 5))
def test_similarity_transform_has_zero_residual(scale, angle, dx, dy):
    tr = _smooth_demo()
    c, s = np.cos(angle), np.sin(angle)
    moved = scale * tr.positions @ np.array([[c, s], [-s, c]]) + [dx, dy]
    residual, jerk_ratio = shape_terms(tr, moved)
    assert residual <= 1e-9
    assert jerk_ratio == pytest.approx(1.0, rel=1e-6)
    assert shape_distortion(tr, moved) <= 1e-9


def test_similarity_align_recovers_transform():
    rng = np.random.default_rng(5)
    src = rng.normal(size=(40, 2))
    rot = np.array([[0.6, -0.8], [0.8, 0.6]])
    dst = 1.7 * src @ rot.T + [1.0, -2.0]
    aligned, scale, r, shift = similarity_align(src, dst)
    assert scale == pytest.approx(1.7, rel=1e-12)
    np.testing.assert_allclose(r, rot, atol=1e-12)
    np.testing.assert_allclose(shift, [1.0, -2.0], atol=1e-12)
    np.testing.assert_allclose(aligned, dst, atol=1e-12)


def test_single_displaced_point_is_distorted():
    tr = _smooth_demo()
    pos = tr.positions.copy()
    pos[50] += 0.1 * tr.bbox_diagonal() * np.array([0.6, 0.8])
    assert shape_distortion(tr, pos) > 0.0


def test_zigzag_jerk_ratio_matches_direct_second_differences():
    n = 60
    t = np.linspace(0, 1, n)
    smooth = np.column_stack([t, t**2])
    zig = smooth.copy()
    zig[:, 1] += 0.02 * (-1.0) ** np.arange(n)
    residual, jerk_ratio = shape_terms(smooth, zig)
    aligned, *_ = similarity_align(zig, smooth)

    def dd(x):
        return np.mean([np.sum((x[i + 1] - 2 * x[i] + x[i - 1]) ** 2) for i in range(1, n - 1)])

    assert jerk_ratio == pytest.approx(dd(aligned) / dd(smooth), rel=1e-10)
    assert jerk_ratio > 2.0
    assert shape_distortion(smooth, zig) == pytest.approx(residual + jerk_ratio - 2.0, rel=1e-12)


def test_shape_distortion_degenerate_demo():
    with pytest.raises(ValueError, match="degenerate"):
        shape_distortion(np.ones((10, 2)), np.zeros((10, 2)))


# --- latent metric -----------------------------------------------------------


@pytest.fixture(scope="module")
def small_encoder():
    return init_params(20, 2, np.random.default_rng(0), hidden=(16, 8), embed_dim=4)


def _random_traj(rng, n=20):
    t = np.linspace(0, 1, n)
    return Demonstration.from_positions(t, np.cumsum(rng.normal(size=(n, 2)), axis=0)).trajectory


def test_latent_zero_on_identical(small_encoder, rng):
    tr = _random_traj(rng)
    assert latent_metric(small_encoder, tr, tr) == 0.0


@given(st.integers(0, 10_000))
def test_latent_is_pseudometric(small_encoder, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_traj(rng) for _ in range(3))
    ab = latent_metric(small_encoder, a, b)
    assert ab >= 0.0
    assert ab == latent_metric(small_encoder, b, a)
    ac = latent_metric(small_encoder, a, c)
    bc = latent_metric(small_encoder, b, c)
    assert ac <= ab + bc + 1e-12 * max(1.0, ab + bc)


def test_latent_dimension_mismatch(small_encoder):
    t = np.linspace(0, 1, 20)
    tr = Demonstration.from_positions(t, np.column_stack([t, t, t])).trajectory
    with pytest.raises(ValueError, match="dimension mismatch"):
        latent_metric(small_encoder, tr, tr)


# --- report ------------------------------------------------------------------


def test_metric_report(tmp_path, small_encoder):
    tr = _smooth_demo(20)
    other = Trajectory(tr.times, tr.positions + 0.1, tr.velocities)
    rep = metric_report(tr, other)
    assert rep.latent is None
    assert rep.mse == pytest.approx(0.02, rel=1e-12)
    assert rep.mle == rep.mse
    rep = metric_report(tr, other, encoder=small_encoder)
    values = rep.to_dict()
    assert all(np.isfinite(v) and v >= 0 for v in values.values())
    back = json.loads(rep.save_json(tmp_path / "r.json").read_text())
    assert MetricReport(**back) == rep
