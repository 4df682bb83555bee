"""Gaussian mixture fitting by EM and Gaussian mixture regression over time.

Samples are rows ``[t, x_1..x_O, v_1..v_O]``; GMR conditions the position and
velocity block on the time coordinate to give a probabilistic reference
trajectory (per-step mean and covariance).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .linalg import clip_eigenvalues, symmetrize
from .trajectory import Demonstration, Trajectory, resample

COV_FLOOR = 1e-6
DEFAULT_K = 16
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 200
# exp(-745) underflows to zero in float64
_LOG_UNDERFLOW = -745.0


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihoods: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()
    cov_floor: float = COV_FLOOR

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_component_densities(self, x: np.ndarray) -> np.ndarray:
        """``log(w_k N(x | mu_k, S_k))`` for every row of ``x``, shape ``(n, K)``."""
        return _log_weighted_densities(x, self.weights, self.means, self.covariances)


@dataclass(frozen=True, eq=False)
class ProbRefTrajectory:
    """Per-step Gaussian over ``[position; velocity]``."""

    times: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        mu = np.array(self.means, dtype=float)
        cov = np.array(self.covariances, dtype=float)
        if mu.ndim != 2 or mu.shape[0] != t.size or mu.shape[1] % 2:
            raise ValueError(f"means must be (N, 2*O), got {mu.shape}")
        if cov.shape != (t.size, mu.shape[1], mu.shape[1]):
            raise ValueError(f"covariances must be (N, 2O, 2O), got {cov.shape}")
        if np.any(np.diff(t) <= 0):
            raise ValueError("non-increasing times")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariances must be symmetric")
        for name, arr in (("times", t), ("means", mu), ("covariances", cov)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_points(self) -> int:
        return self.times.size

    @property
    def n_dims(self) -> int:
        return self.means.shape[1] // 2

    def mean_trajectory(self) -> Trajectory:
        o = self.n_dims
        return Trajectory(self.times, self.means[:, :o], self.means[:, o:])

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProbRefTrajectory":
        return cls(np.array(d["times"]), np.array(d["means"]), np.array(d["covariances"]))

    def save_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        return path

    @classmethod
    def load_json(cls, path) -> "ProbRefTrajectory":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    diff = np.linalg.solve(chol, (x - mean).T)
    maha = np.sum(diff**2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (maha + logdet + x.shape[1] * np.log(2.0 * np.pi))


def _log_weighted_densities(x, weights, means, covs) -> np.ndarray:
    x = np.atleast_2d(x)
    out = np.empty((x.shape[0], weights.size))
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    for k in range(weights.size):
        out[:, k] = logw[k] + _log_gauss(x, means[k], covs[k])
    return out


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding on standardized features; returns center indices."""
    scale = x.std(axis=0)
    z = (x - x.mean(axis=0)) / np.where(scale > 0, scale, 1.0)
    idx = [int(rng.integers(z.shape[0]))]
    d2 = np.sum((z - z[idx[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            j = int(rng.integers(z.shape[0]))
        else:
            j = int(rng.choice(z.shape[0], p=d2 / total))
        idx.append(j)
        d2 = np.minimum(d2, np.sum((z - z[j]) ** 2, axis=1))
    labels = np.argmin(
        np.stack([np.sum((z - z[j]) ** 2, axis=1) for j in idx], axis=1), axis=1
    )
    return labels


def _m_step(x, resp, floor, prev_means=None):
    nk = resp.sum(axis=0)
    n, d = x.shape
    weights = nk / n
    weights = weights / weights.sum()
    means = np.empty((nk.size, d))
    covs = np.empty((nk.size, d, d))
    notes = []
    for k in range(nk.size):
        if nk[k] < 1e-10 * n:
            means[k] = prev_means[k] if prev_means is not None else x.mean(axis=0)
            covs[k] = floor * np.eye(d)
            notes.append(f"component {k} received no responsibility mass; covariance floored")
            continue
        means[k] = resp[:, k] @ x / nk[k]
        diff = x - means[k]
        covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k]
        if nk[k] < 2.0:
            notes.append(f"component {k} degenerate (mass {nk[k]:.3g} < 2 points); covariance floored")
    covs = clip_eigenvalues(covs, floor)
    return weights, means, covs, notes


def fit_gmm(
    samples,
    n_components: int = DEFAULT_K,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    cov_floor: float = COV_FLOOR,
) -> GaussianMixture:
    """Fit a full-covariance mixture with EM from k-means++ hard assignments.

    The M-step clips covariance eigenvalues at ``cov_floor``, which is the
    exact constrained maximizer, so the log-likelihood sequence stays
    non-decreasing.  Stops when the relative change drops below ``tol``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise ValueError("samples must be a 2-D array")
    n, d = x.shape
    if n_components < 1:
        raise ValueError("need at least one component")
    if n < n_components:
        raise ValueError(f"K={n_components} larger than the number of samples ({n})")
    # sample count guideline is K*(1+d); fewer rows still fit but get floored
    rng = np.random.default_rng(seed)
    labels = _kmeans_pp(x, n_components, rng)
    resp = np.zeros((n, n_components))
    resp[np.arange(n), labels] = 1.0
    weights, means, covs, notes = _m_step(x, resp, cov_floor)
    warnings = list(notes)

    history: list[float] = []
    for _ in range(max_iters):
        logp = _log_weighted_densities(x, weights, means, covs)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol * abs(history[-2]):
            break
        resp = np.exp(logp - norm[:, None])
        weights, means, covs, notes = _m_step(x, resp, cov_floor, means)
        warnings.extend(n_ for n_ in notes if n_ not in warnings)
    return GaussianMixture(weights, means, covs, tuple(history), tuple(warnings), cov_floor)


def gmr(gmm: GaussianMixture, t, cov_floor: float | None = None):
    """Condition the mixture on its first coordinate.

    ``t`` may be a scalar (returns ``(mean (D-1,), cov (D-1, D-1))``) or an
    array (returns stacked arrays).
    """
    floor = gmm.cov_floor if cov_floor is None else cov_floor
    scalar = np.ndim(t) == 0
    tq = np.atleast_1d(np.asarray(t, dtype=float))
    mu_t = gmm.means[:, 0]
    mu_o = gmm.means[:, 1:]
    s_tt = gmm.covariances[:, 0, 0]
    s_ot = gmm.covariances[:, 1:, 0]
    s_oo = gmm.covariances[:, 1:, 1:]

    with np.errstate(divide="ignore"):
        logw = np.log(gmm.weights)
    diff = tq[:, None] - mu_t[None, :]
    logh = logw - 0.5 * (diff**2 / s_tt + np.log(2 * np.pi * s_tt))
    if np.any(np.max(logh, axis=1) < _LOG_UNDERFLOW):
        raise ValueError("query outside support")
    h = np.exp(logh - logsumexp(logh, axis=1, keepdims=True))

    # per-component conditional mean (Q, K, D-1) and covariance (K, D-1, D-1)
    gain = s_ot / s_tt[:, None]
    cond_mean = mu_o[None, :, :] + diff[:, :, None] * gain[None, :, :]
    cond_cov = s_oo - np.einsum("ki,kj->kij", s_ot, gain)

    mean = np.einsum("qk,qki->qi", h, cond_mean)
    second = np.einsum("qk,kij->qij", h, cond_cov) + np.einsum(
        "qk,qki,qkj->qij", h, cond_mean, cond_mean
    )
    cov = second - np.einsum("qi,qj->qij", mean, mean)
    cov = clip_eigenvalues(symmetrize(cov), floor)
    if scalar:
        return mean[0], cov[0]
    return mean, cov


def align_demonstrations(demos: list[Demonstration], n_points: int) -> list[Trajectory]:
    """Map every demo onto ``[0, T]`` (T = mean duration) and resample to ``n_points``."""
    if len(demos) < 2:
        raise ValueError("need at least two demonstrations")
    duration = float(np.mean([d.trajectory.duration for d in demos]))
    out = []
    for d in demos:
        tr = d.trajectory
        factor = duration / tr.duration
        t = (tr.times - tr.times[0]) * factor
        # velocities rescale with the time warp
        warped = Trajectory(t, tr.positions, tr.velocities / factor)
        out.append(resample(warped, n_points))
    return out


def extract_reference(
    demos: list[Demonstration],
    n_components: int = DEFAULT_K,
    n_ref: int = 200,
    seed: int = 0,
    **fit_kwargs,
) -> ProbRefTrajectory:
    """GMM/GMR reference from several demonstrations on a uniform time grid."""
    aligned = align_demonstrations(demos, n_ref)
    samples = np.vstack([np.column_stack([tr.times, tr.stacked]) for tr in aligned])
    # sorted rows make the fit independent of demonstration order
    samples = samples[np.lexsort(samples.T[::-1])]
    model = fit_gmm(samples, n_components, seed=seed, **fit_kwargs)
    grid = aligned[0].times
    means, covs = gmr(model, grid)
    return ProbRefTrajectory(grid, means, covs, meta={"gmm": model})
