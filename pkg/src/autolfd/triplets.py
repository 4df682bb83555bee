"""Synthesized (anchor, positive, negative) triplets for encoder training.

Labels come from the shape-distortion oracle rather than human judgment:

* positive: the anchor mapped by the similarity transform that carries its
  endpoints onto sampled constraint points, plus a smooth bump through an
  optional via point and a small random bump; kept if distortion < 0.05.
* negative: a DMP or KMP adaptation to the same constraints with
  hyperparameters drawn uniformly over the whole search box; kept if
  distortion > 0.15.

DMP-type sources are single demonstrations with start/end constraints;
KMP-type sources are reference trajectories with start/via/end constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dmp import adapt_dmp
from .gmm import ProbRefTrajectory
from .hyperopt import DEFAULT_BOUNDS, Hyperparams
from .kmp import adapt_kmp
from .metrics import shape_distortion
from .trajectory import Constraints, ConstraintPoint, Demonstration, Trajectory, finite_differences

POSITIVE_MAX = 0.05
NEGATIVE_MIN = 0.15
DEFAULT_M = 3026
MAX_ATTEMPT_FACTOR = 100

SCALE_RANGE = (0.8, 1.25)
ROTATION_DEG = 15.0
SHIFT_FRACTION = 0.15
ENDPOINT_NOISE = 0.01
VIA_OFFSET = (0.03, 0.08)
VIA_WINDOW = (0.3, 0.7)
BUMP_MAX = 0.02


class LabelSynthesisError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Triplet:
    anchor: Trajectory
    positive: Trajectory
    negative: Trajectory

    def __post_init__(self):
        shapes = {(t.n_points, t.n_dims) for t in (self.anchor, self.positive, self.negative)}
        if len(shapes) != 1:
            raise ValueError("triplet members must share (N, O)")


@dataclass(frozen=True, eq=False)
class TripletDataset:
    """Triplets stored as one array ``(M, 3, N, 2O)`` of stacked [pos; vel] rows."""

    data: np.ndarray
    times: np.ndarray
    kinds: np.ndarray  # 0 = DMP-type, 1 = KMP-type
    sources: np.ndarray

    @property
    def n_points(self) -> int:
        return self.data.shape[2]

    @property
    def n_dims(self) -> int:
        return self.data.shape[3] // 2

    def __len__(self) -> int:
        return self.data.shape[0]

    def flat(self):
        """``(anchors, positives, negatives)`` as ``(M, 2ON)`` per-time [pos; vel] vectors."""
        m = len(self)
        return tuple(self.data[:, j].reshape(m, -1) for j in range(3))

    def triplet(self, i: int) -> Triplet:
        o = self.n_dims
        parts = [Trajectory(self.times, self.data[i, j, :, :o], self.data[i, j, :, o:]) for j in range(3)]
        return Triplet(*parts)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.save(directory / "triplets.npy", self.data)
        np.save(directory / "times.npy", self.times)
        np.save(directory / "kinds.npy", self.kinds)
        np.save(directory / "sources.npy", self.sources)
        return directory

    @classmethod
    def load(cls, directory) -> "TripletDataset":
        directory = Path(directory)
        return cls(*(np.load(directory / f"{name}.npy") for name in ("triplets", "times", "kinds", "sources")))


def rotation_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Proper rotation taking unit ``u`` to unit ``v`` in the plane they span."""
    o = u.size
    c = float(u @ v)
    if c < -1.0 + 1e-12:
        raise ValueError("antiparallel directions: rotation is not unique")
    a = np.outer(v, u) - np.outer(u, v)
    return np.eye(o) + a + (a @ a) / (1.0 + c)


def endpoint_similarity(positions: np.ndarray, start, end):
    """``(scale, rotation, shift)`` mapping the first/last positions onto ``start``/``end``."""
    p0, p1 = positions[0], positions[-1]
    start, end = np.asarray(start, float), np.asarray(end, float)
    span, target = p1 - p0, end - start
    ls, lt = np.linalg.norm(span), np.linalg.norm(target)
    if ls <= 0 or lt <= 0:
        raise ValueError("coincident endpoints")
    rot = rotation_between(span / ls, target / lt)
    scale = lt / ls
    shift = start - scale * rot @ p0
    return scale, rot, shift


def smooth_window(t: np.ndarray, center: float, width: float) -> np.ndarray:
    """C2 bump equal to 1 at ``center`` and 0 outside ``center +- width/2``."""
    u = np.clip((t - center) / width + 0.5, 0.0, 1.0)
    # minimum-jerk rise and fall: 64 u^3 (1-u)^3 peaks at 1 for u = 1/2
    return 64.0 * u**3 * (1.0 - u) ** 3


def _random_rotation(o: int, max_deg: float, rng: np.random.Generator) -> np.ndarray:
    angle = np.deg2rad(rng.uniform(-max_deg, max_deg))
    if o == 1:
        return np.eye(1)
    if o == 2:
        c, s = np.cos(angle), np.sin(angle)
        return np.array([[c, -s], [s, c]])
    axis = rng.normal(size=o)
    axis /= np.linalg.norm(axis)
    other = rng.normal(size=o)
    other -= (other @ axis) * axis
    other /= np.linalg.norm(other)
    v = np.cos(angle) * axis + np.sin(angle) * other
    return rotation_between(axis, v)


def sample_constraints(anchor: Trajectory, rng: np.random.Generator, via: bool) -> Constraints:
    """Start/end (and optionally one via point) from a random similarity of the anchor plus noise."""
    p = anchor.positions
    o = anchor.n_dims
    diag = anchor.bbox_diagonal()
    scale = rng.uniform(*SCALE_RANGE)
    rot = _random_rotation(o, ROTATION_DEG, rng)
    center = p.mean(axis=0)
    shift = rng.uniform(-SHIFT_FRACTION, SHIFT_FRACTION, size=o) * diag

    def mapped(x):
        return center + scale * rot @ (x - center) + shift

    start = mapped(p[0]) + rng.normal(scale=ENDPOINT_NOISE * diag, size=o)
    end = mapped(p[-1]) + rng.normal(scale=ENDPOINT_NOISE * diag, size=o)
    t = anchor.times
    points = [ConstraintPoint(float(t[0]), tuple(start)), ConstraintPoint(float(t[-1]), tuple(end))]
    if via:
        frac = rng.uniform(*VIA_WINDOW)
        idx = int(round(frac * (t.size - 1)))
        direction = rng.normal(size=o)
        direction /= np.linalg.norm(direction)
        offset = rng.uniform(*VIA_OFFSET) * diag * direction
        points.insert(1, ConstraintPoint(float(t[idx]), tuple(mapped(p[idx]) + offset)))
    return Constraints(tuple(points))


def synthesize_positive(anchor: Trajectory, c: Constraints, rng: np.random.Generator) -> Trajectory:
    """Similarity image of the anchor meeting ``c``, with smooth low-amplitude bumps."""
    pts = c.points
    p = anchor.positions
    t = anchor.times
    scale, rot, shift = endpoint_similarity(p, pts[0].position, pts[-1].position)
    q = scale * p @ rot.T + shift
    duration = t[-1] - t[0]
    diag = anchor.bbox_diagonal()
    for via in pts[1:-1]:
        width = min(0.3 * duration, 2.0 * min(via.time - t[0], t[-1] - via.time))
        w = smooth_window(t, via.time, width)
        k = int(np.argmin(np.abs(t - via.time)))
        q = q + np.outer(w, (np.asarray(via.position) - q[k]) / w[k])
    # a random wiggle away from the constrained instants
    width = rng.uniform(0.15, 0.3) * duration
    center = rng.uniform(t[0] + width / 2, t[-1] - width / 2)
    direction = rng.normal(size=anchor.n_dims)
    direction /= np.linalg.norm(direction)
    wiggle = smooth_window(t, center, width)
    for via in pts[1:-1]:
        k = int(np.argmin(np.abs(t - via.time)))
        wiggle = wiggle * (1.0 - smooth_window(t, t[k], width))
    q = q + np.outer(wiggle, rng.uniform(0.0, BUMP_MAX) * diag * direction)
    vel, _ = finite_differences(q, t)
    return Trajectory(t, q, vel)


def _with_fd_velocities(traj: Trajectory) -> Trajectory:
    vel, _ = finite_differences(traj.positions, traj.times)
    return Trajectory(traj.times, traj.positions, vel)


def sample_theta(rng: np.random.Generator, bounds=DEFAULT_BOUNDS) -> Hyperparams:
    return Hyperparams.from_array(rng.uniform(bounds[:, 0], bounds[:, 1]))


def _negative(source, anchor: Trajectory, c: Constraints, theta) -> Trajectory | None:
    try:
        if isinstance(source, ProbRefTrajectory):
            out = adapt_kmp(source, c, theta, n_out=anchor.n_points)
        else:
            out = adapt_dmp(source, c, theta, n_out=anchor.n_points)
        out = _with_fd_velocities(out)
    except (np.linalg.LinAlgError, RuntimeError, FloatingPointError, ValueError):
        return None
    if not np.all(np.isfinite(out.stacked)):
        return None
    return out


def _anchor_of(source) -> Trajectory:
    if isinstance(source, ProbRefTrajectory):
        return _with_fd_velocities(source.mean_trajectory())
    return _with_fd_velocities(source.trajectory)


def generate_triplets(
    demos: list[Demonstration],
    m: int = DEFAULT_M,
    seed: int = 0,
    references: list[ProbRefTrajectory] | None = None,
    bounds=DEFAULT_BOUNDS,
    progress=None,
) -> TripletDataset:
    """Rejection-sample ``m`` labelled triplets; deterministic in ``seed``.

    Triplets alternate between DMP-type sources (``demos``) and KMP-type
    sources (``references``) when both are given.
    """
    if m < 1:
        raise ValueError("M must be at least 1")
    if not demos and not references:
        raise ValueError("need at least one demonstration")
    pools = []
    if demos:
        pools.append(list(demos))
    if references:
        pools.append(list(references))
    anchors = [[_anchor_of(s) for s in pool] for pool in pools]
    shapes = {(a.n_points, a.n_dims) for group in anchors for a in group}
    if len(shapes) != 1:
        raise ValueError("all sources must share (N, O)")
    times = anchors[0][0].times
    rng = np.random.default_rng([seed, 31337])

    data, kinds, sources = [], [], []
    attempts, limit = 0, MAX_ATTEMPT_FACTOR * m
    while len(data) < m:
        attempts += 1
        if attempts > limit:
            raise LabelSynthesisError(f"cannot synthesize labels: {len(data)} of {m} after {limit} attempts")
        kind = len(data) % len(pools)
        j = int(rng.integers(len(pools[kind])))
        source, anchor = pools[kind][j], anchors[kind][j]
        is_kmp = isinstance(source, ProbRefTrajectory)
        c = sample_constraints(anchor, rng, via=is_kmp)
        pos = synthesize_positive(anchor, c, rng)
        if not shape_distortion(anchor, pos) < POSITIVE_MAX:
            continue
        neg = _negative(source, anchor, c, sample_theta(rng, bounds))
        if neg is None or not shape_distortion(anchor, neg) > NEGATIVE_MIN:
            continue
        data.append(np.stack([anchor.stacked, pos.stacked, neg.stacked]))
        kinds.append(1 if is_kmp else 0)
        sources.append(j)
        if progress is not None:
            progress(len(data), attempts)
    return TripletDataset(np.array(data), np.array(times), np.array(kinds, dtype=np.int64), np.array(sources, dtype=np.int64))
