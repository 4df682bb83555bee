"""Trajectory discrepancy measures.

``mse`` and ``mle_cost`` compare stacked position+velocity points against a
reference; ``discrete_frechet`` compares position polylines; and
``shape_distortion`` is the repository's independent notion of a
satisfactory adaptation (similarity-aligned residual plus a roughness
penalty).  ``latent_metric`` is the learned distance in embedding space.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .gmm import ProbRefTrajectory
from .trajectory import Trajectory

JERK_ALLOWANCE = 2.0


def _stacked(x) -> np.ndarray:
    if isinstance(x, Trajectory):
        return x.stacked
    if isinstance(x, ProbRefTrajectory):
        return np.asarray(x.means)
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def _positions(x) -> np.ndarray:
    if isinstance(x, Trajectory):
        return x.positions
    if isinstance(x, ProbRefTrajectory):
        return x.means[:, : x.n_dims]
    arr = np.asarray(x, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def mse(reference, traj) -> float:
    """Mean over samples of the squared norm of the stacked-point error."""
    a, b = _stacked(reference), _stacked(traj)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = b - a
    return float(np.mean(np.sum(d * d, axis=1)))


def mle_cost(reference: ProbRefTrajectory, traj) -> float:
    """Mean Mahalanobis error of the stacked points under the reference covariances."""
    mu = np.asarray(reference.means)
    b = _stacked(traj)
    if mu.shape != b.shape:
        raise ValueError(f"shape mismatch: {mu.shape} vs {b.shape}")
    d = b - mu
    try:
        chol = np.linalg.cholesky(reference.covariances)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular reference covariance") from None
    z = np.linalg.solve(chol, d[:, :, None])[:, :, 0]
    return float(np.mean(np.sum(z * z, axis=1)))


def discrete_frechet(a, b) -> float:
    """Discrete Frechet distance between two polylines (Eiter-Mannila recursion)."""
    p, q = _positions(a), _positions(b)
    if p.shape[0] == 0 or q.shape[0] == 0:
        raise ValueError("polylines must not be empty")
    dist = np.sqrt(np.sum((p[:, None, :] - q[None, :, :]) ** 2, axis=2))
    n, m = dist.shape
    ca = np.empty((n, m))
    ca[0] = np.maximum.accumulate(dist[0])
    ca[:, 0] = np.maximum.accumulate(dist[:, 0])
    for i in range(1, n):
        prev = ca[i - 1]
        row = ca[i]
        d = dist[i]
        for j in range(1, m):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = best if best > d[j] else d[j]
    return float(ca[-1, -1])


def similarity_align(source: np.ndarray, target: np.ndarray):
    """Best ``scale * R @ x + shift`` mapping ``source`` onto ``target`` (proper rotation).

    Returns ``(aligned_source, scale, rotation, shift)``.
    """
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    s0, t0 = source - mu_s, target - mu_t
    var_s = np.mean(np.sum(s0 * s0, axis=1))
    cov = t0.T @ s0 / source.shape[0]
    u, sig, vt = np.linalg.svd(cov)
    fix = np.ones(sig.size)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        fix[-1] = -1.0
    rot = (u * fix) @ vt
    scale = float(np.sum(sig * fix) / var_s) if var_s > 0 else 0.0
    shift = mu_t - scale * rot @ mu_s
    return scale * source @ rot.T + shift, scale, rot, shift


def shape_terms(demo, traj) -> tuple[float, float]:
    """``(residual, jerk_ratio)`` for the distortion oracle."""
    p, q = _positions(demo), _positions(traj)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    diag = float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))
    if diag <= 0:
        raise ValueError("degenerate demonstration (zero bounding-box diagonal)")
    aligned, *_ = similarity_align(q, p)
    residual = float(np.sqrt(np.mean(np.sum((aligned - p) ** 2, axis=1)))) / diag
    dd_demo = np.mean(np.sum(np.diff(p, 2, axis=0) ** 2, axis=1))
    dd_traj = np.mean(np.sum(np.diff(aligned, 2, axis=0) ** 2, axis=1))
    # relative floor keeps a perfectly straight demo from dividing by zero
    jerk_ratio = float(dd_traj / max(dd_demo, 1e-12 * diag**2))
    return residual, jerk_ratio


def shape_distortion(demo, traj) -> float:
    """Similarity-invariant residual plus the excess of the roughness ratio over 2.

    The roughness ratio compares mean squared second differences of the
    aligned trajectory with those of the demonstration, so uniform scaling
    is not mistaken for roughness.
    """
    residual, jerk_ratio = shape_terms(demo, traj)
    return residual + max(0.0, jerk_ratio - JERK_ALLOWANCE)


def latent_metric(encoder, demo, traj) -> float:
    """Euclidean distance between the embeddings of two trajectories."""
    from .encoder import encode

    ea = encode(encoder, demo)
    eb = encode(encoder, traj)
    return float(np.linalg.norm(ea - eb))


@dataclass
class MetricReport:
    mse: float
    mle: float
    frechet: float
    shape_distortion: float
    latent: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def save_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")
        return path


def metric_report(demo: Trajectory, traj: Trajectory, reference: ProbRefTrajectory | None = None, encoder=None) -> MetricReport:
    """All metrics for one adaptation; without a reference the MLE uses unit covariance."""
    return MetricReport(
        mse=mse(demo, traj),
        mle=mle_cost(reference, traj) if reference is not None else mse(demo, traj),
        frechet=discrete_frechet(demo, traj),
        shape_distortion=shape_distortion(demo, traj),
        latent=latent_metric(encoder, demo, traj) if encoder is not None else None,
    )
