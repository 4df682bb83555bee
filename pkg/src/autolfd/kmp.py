"""Kernelized movement primitives over a probabilistic reference trajectory.

Prediction: ``mu(t*) = k* (K + lambda Sigma)^-1 mu_hat`` where every kernel
entry is the 2x2 block of a squared-exponential kernel and its time
derivatives (position/velocity covariance of a GP and its derivative),
expanded over the ``O`` output dimensions with an identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .gmm import ProbRefTrajectory
from .linalg import cho_solve, jittered_cholesky, symmetrize
from .trajectory import ENCODER_LENGTH, Constraints, Trajectory, uniform_grid

CONSTRAINT_EPS_FACTOR = 1e-6


def _base_blocks(ti, tj, kh: float) -> np.ndarray:
    """SE kernel and derivatives on the lag grid, shape ``(2, 2, len(ti), len(tj))``."""
    lag = np.subtract.outer(np.atleast_1d(ti).astype(float), np.atleast_1d(tj).astype(float))
    k = np.exp(-kh * lag * lag)
    dk_dtj = 2.0 * kh * lag * k
    dk_dti = -dk_dtj
    d2k = (2.0 * kh - 4.0 * kh * kh * lag * lag) * k
    return np.array([[k, dk_dtj], [dk_dti, d2k]])


def _expand(base: np.ndarray, n_dims: int) -> np.ndarray:
    """``(2, 2, Q, N)`` blocks -> ``(Q*2O, N*2O)`` matrix in per-time [pos; vel] layout."""
    _, _, q, n = base.shape
    eye = np.eye(n_dims)
    full = np.einsum("abqn,ij->qainbj", base, eye)
    return full.reshape(q * 2 * n_dims, n * 2 * n_dims)


def extended_kernel(t_i: float, t_j: float, kh: float, n_dims: int) -> np.ndarray:
    """2O x 2O block ``[[k, dk/dt_j], [dk/dt_i, d2k/dt_i dt_j]] (x) I_O``."""
    if kh <= 0:
        raise ValueError("kh must be positive")
    return _expand(_base_blocks(t_i, t_j, kh), n_dims)


def extended_gram(ti, tj, kh: float, n_dims: int) -> np.ndarray:
    return _expand(_base_blocks(ti, tj, kh), n_dims)


def default_eps(ref: ProbRefTrajectory) -> float:
    traces = np.trace(ref.covariances, axis1=1, axis2=2)
    return CONSTRAINT_EPS_FACTOR * float(np.median(traces))


def insert_constraints(ref: ProbRefTrajectory, c: Constraints, eps: float | None = None) -> ProbRefTrajectory:
    """Overwrite the reference rows nearest in time to each desired point.

    Constrained coordinates get mean = desired value and variance ``eps``;
    an unconstrained velocity keeps its reference mean and covariance.
    """
    if eps is None:
        eps = default_eps(ref)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if len(c) == 0:
        return ref
    o = ref.n_dims
    means = np.array(ref.means)
    covs = np.array(ref.covariances)
    used: dict[int, float] = {}
    for p in c.points:
        if len(p.position) != o:
            raise ValueError("constraint dimension does not match reference")
        idx = int(np.argmin(np.abs(ref.times - p.time)))
        if idx in used:
            raise ValueError(
                f"conflicting constraints: t={used[idx]} and t={p.time} map to reference index {idx}"
            )
        used[idx] = p.time
        new_cov = np.zeros((2 * o, 2 * o))
        new_cov[:o, :o] = eps * np.eye(o)
        means[idx, :o] = p.position
        if p.velocity is None:
            new_cov[o:, o:] = covs[idx, o:, o:]
        else:
            means[idx, o:] = p.velocity
            new_cov[o:, o:] = eps * np.eye(o)
        covs[idx] = new_cov
    return ProbRefTrajectory(ref.times, means, covs, meta=dict(ref.meta, constraints=c))


@dataclass(frozen=True, eq=False)
class KmpModel:
    reference: ProbRefTrajectory
    kh: float
    lam: float
    _weights: np.ndarray = field(repr=False, default=None)
    jitter: float = 0.0

    @classmethod
    def fit(cls, reference: ProbRefTrajectory, kh: float, lam: float) -> "KmpModel":
        if kh <= 0 or lam < 0:
            raise ValueError("need kh > 0 and lambda >= 0")
        o = reference.n_dims
        gram = extended_gram(reference.times, reference.times, kh, o)
        gram = symmetrize(gram)
        system = gram + lam * block_diag(*reference.covariances)
        cho, jitter = jittered_cholesky(system, "ill-conditioned system")
        weights = cho_solve(cho, reference.means.reshape(-1))
        return cls(reference, float(kh), float(lam), weights, jitter)

    def predict(self, t_star) -> np.ndarray:
        """Predicted ``[position; velocity]`` at the query times, shape ``(Q, 2O)``."""
        scalar = np.ndim(t_star) == 0
        tq = np.atleast_1d(np.asarray(t_star, dtype=float))
        k_star = extended_gram(tq, self.reference.times, self.kh, self.reference.n_dims)
        out = (k_star @ self._weights).reshape(tq.size, -1)
        return out[0] if scalar else out


def kmp_predict(model: KmpModel, t_star) -> np.ndarray:
    return model.predict(t_star)


def adapt_kmp(
    ref: ProbRefTrajectory,
    c: Constraints,
    theta,
    eps: float | None = None,
    n_out: int = ENCODER_LENGTH,
) -> Trajectory:
    """Constraint-augmented KMP prediction on a uniform grid over the reference span."""
    c.validate_for(ref.mean_trajectory())
    augmented = insert_constraints(ref, c, eps)
    model = KmpModel.fit(augmented, theta.kh, theta.lam)
    grid = uniform_grid(ref.times[0], ref.times[-1], n_out)
    out = model.predict(grid)
    o = ref.n_dims
    return Trajectory(grid, out[:, :o], out[:, o:])
