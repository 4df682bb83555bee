import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from autolfd.linalg import IllConditionedError, cho_solve, clip_eigenvalues, jittered_cholesky, logdet_from_cho


def test_cholesky_no_jitter_for_pd(rng):
    a = rng.normal(size=(6, 6))
    m = a @ a.T + np.eye(6)
    cho, jitter = jittered_cholesky(m)
    assert jitter == 0.0
    b = rng.normal(size=6)
    np.testing.assert_allclose(m @ cho_solve(cho, b), b, atol=1e-10)
    assert logdet_from_cho(cho) == pytest.approx(np.linalg.slogdet(m)[1])


def test_cholesky_escalates_on_singular():
    v = np.ones((5, 1))
    _, jitter = jittered_cholesky(v @ v.T)
    assert 0 < jitter <= 1e-4


def test_cholesky_gives_up():
    with pytest.raises(IllConditionedError, match="ill-conditioned Gram"):
        jittered_cholesky(-np.eye(3))


@given(st.integers(0, 1000), st.floats(1e-8, 1e-2))
def test_clip_eigenvalues_floor(seed, floor):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(4, 4))
    m = a @ a.T - 0.5 * np.eye(4)
    out = clip_eigenvalues(m, floor)
    np.testing.assert_array_equal(out, out.T)
    assert np.linalg.eigvalsh(out).min() >= floor * (1 - 1e-9)
