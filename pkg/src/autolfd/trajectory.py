"""Trajectory containers, demonstration CSV I/O and resampling helpers.

A trajectory point stacks position and velocity, so an ``O``-dimensional
trajectory of ``N`` samples flattens to a vector of length ``2*O*N`` laid out
as ``[x_1, v_1, x_2, v_2, ..., x_N, v_N]``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ENCODER_LENGTH = 200


class DemoParseError(ValueError):
    """Malformed demonstration file; ``line`` is 1-based (0 if not line-specific)."""

    def __init__(self, message: str, line: int = 0, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path}:" if path else ""
        super().__init__(f"{where}line {line}: {message}" if line else f"{where}{message}")


def _as_2d(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-stamped positions and velocities, shapes ``(N,)``, ``(N, O)``, ``(N, O)``."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        x = _as_2d(self.positions, "positions")
        v = _as_2d(self.velocities, "velocities")
        if t.size < 2:
            raise ValueError("a trajectory needs at least 2 samples")
        if x.shape[0] != t.size or v.shape != x.shape:
            raise ValueError(
                f"inconsistent shapes: times {t.shape}, positions {x.shape}, velocities {v.shape}"
            )
        if np.any(np.diff(t) <= 0):
            raise ValueError("non-increasing times")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("trajectory contains non-finite values")
        for name, arr in (("times", t), ("positions", x), ("velocities", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_points(self) -> int:
        return self.times.size

    @property
    def n_dims(self) -> int:
        return self.positions.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def stacked(self) -> np.ndarray:
        """Per-sample ``[position; velocity]`` rows, shape ``(N, 2*O)``."""
        return np.hstack([self.positions, self.velocities])

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.positions.max(axis=0) - self.positions.min(axis=0)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.velocities, other.velocities)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Demonstration:
    trajectory: Trajectory
    accelerations: np.ndarray
    label: str = ""

    def __post_init__(self):
        acc = _as_2d(self.accelerations, "accelerations")
        if acc.shape != self.trajectory.positions.shape:
            raise ValueError("accelerations shape must match positions")
        if not np.all(np.isfinite(acc)):
            raise ValueError("accelerations contain non-finite values")
        acc.setflags(write=False)
        object.__setattr__(self, "accelerations", acc)

    @classmethod
    def from_positions(cls, times, positions, label: str = "", velocities=None) -> "Demonstration":
        """Build a demonstration, differentiating whatever derivatives are missing."""
        times = np.asarray(times, dtype=float)
        positions = _as_2d(positions, "positions")
        if velocities is None:
            velocities, accelerations = finite_differences(positions, times)
        else:
            velocities = _as_2d(velocities, "velocities")
            accelerations = _gradient(velocities, times)
        return cls(Trajectory(times, positions, velocities), accelerations, label)


@dataclass(frozen=True)
class ConstraintPoint:
    time: float
    position: tuple[float, ...]
    velocity: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "position", tuple(float(p) for p in self.position))
        if self.velocity is not None:
            vel = tuple(float(v) for v in self.velocity)
            if len(vel) != len(self.position):
                raise ValueError("constraint velocity and position dimensions differ")
            object.__setattr__(self, "velocity", vel)
        if not np.all(np.isfinite(self.position)):
            raise ValueError("constraint position must be finite")


@dataclass(frozen=True)
class Constraints:
    """Desired points sorted by time; start/end are the first/last entries."""

    points: tuple[ConstraintPoint, ...] = field(default_factory=tuple)

    def __post_init__(self):
        pts = tuple(sorted(self.points, key=lambda p: p.time))
        times = [p.time for p in pts]
        if len(set(times)) != len(times):
            raise ValueError("at most one constraint per time")
        if len({len(p.position) for p in pts}) > 1:
            raise ValueError("constraints have inconsistent dimensions")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def validate_for(self, traj: Trajectory, tol: float = 1e-9) -> None:
        t0, t1 = traj.times[0], traj.times[-1]
        for p in self.points:
            if p.time < t0 - tol or p.time > t1 + tol:
                raise ValueError(f"constraint time {p.time} outside [{t0}, {t1}]")
            if len(p.position) != traj.n_dims:
                raise ValueError("constraint dimension does not match trajectory")

    @classmethod
    def from_arrays(cls, times: Sequence[float], positions) -> "Constraints":
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        return cls(tuple(ConstraintPoint(t, p) for t, p in zip(times, positions)))

    def to_dict(self) -> list[dict]:
        out = []
        for p in self.points:
            d = {"time": p.time, "position": list(p.position)}
            if p.velocity is not None:
                d["velocity"] = list(p.velocity)
            out.append(d)
        return out

    @classmethod
    def from_dict(cls, items: Iterable[dict]) -> "Constraints":
        return cls(
            tuple(
                ConstraintPoint(d["time"], d["position"], d.get("velocity")) for d in items
            )
        )


def _gradient(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    # second-order one-sided stencils at the ends keep quadratics exact
    steps = np.diff(times)
    if np.ptp(steps) <= 1e-12 * steps.mean():
        # scalar spacing: stencil weights cancel exactly on constants
        return np.gradient(values, steps.mean(), axis=0, edge_order=2)
    return np.gradient(values, times, axis=0, edge_order=2)


def finite_differences(positions, times) -> tuple[np.ndarray, np.ndarray]:
    """Velocities and accelerations by central differences.

    Interior samples use the three-point central stencil (valid on
    non-uniform grids), the two boundary samples use second-order one-sided
    stencils.  Output shapes equal the input shape.
    """
    positions = _as_2d(positions, "positions")
    times = np.asarray(times, dtype=float).reshape(-1)
    if positions.shape[0] < 3:
        raise ValueError("finite differences need at least 3 samples")
    if times.size != positions.shape[0]:
        raise ValueError("times and positions lengths differ")
    if np.any(np.diff(times) <= 0):
        raise ValueError("non-increasing times")
    velocities = _gradient(positions, times)
    accelerations = _gradient(velocities, times)
    return velocities, accelerations


def uniform_grid(t_start: float, t_end: float, n: int) -> np.ndarray:
    return np.linspace(t_start, t_end, n)


def resample(traj: Trajectory, n_out: int) -> Trajectory:
    """Linear interpolation onto ``n_out`` uniform times spanning the trajectory."""
    if n_out < 2:
        raise ValueError("n_out must be >= 2")
    grid = uniform_grid(traj.times[0], traj.times[-1], n_out)
    if grid.size == traj.n_points and np.array_equal(grid, traj.times):
        return traj
    pos = np.column_stack([np.interp(grid, traj.times, c) for c in traj.positions.T])
    vel = np.column_stack([np.interp(grid, traj.times, c) for c in traj.velocities.T])
    return Trajectory(grid, pos, vel)


def flatten(traj: Trajectory, n_points: int | None = None) -> np.ndarray:
    if n_points is not None and traj.n_points != n_points:
        raise ValueError(f"expected {n_points} samples, got {traj.n_points}")
    return traj.stacked.reshape(-1).copy()


def unflatten(vec, n_points: int, n_dims: int, times=None) -> Trajectory:
    vec = np.asarray(vec, dtype=float)
    if vec.size != 2 * n_dims * n_points:
        raise ValueError(f"vector of length {vec.size} does not match N={n_points}, O={n_dims}")
    rows = vec.reshape(n_points, 2 * n_dims)
    if times is None:
        times = np.arange(n_points, dtype=float)
    return Trajectory(times, rows[:, :n_dims], rows[:, n_dims:])


# ---------------------------------------------------------------------------
# CSV I/O


def _parse_float(text: str, line: int, path: str | None) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DemoParseError(f"cannot parse number {text!r}", line, path) from None
    if not np.isfinite(value):
        raise DemoParseError(f"non-finite value {text!r}", line, path)
    return value


def _parse_header(cells: list[str], line: int, path: str | None) -> tuple[int, bool]:
    names = [c.strip() for c in cells]
    if not names or names[0] != "t":
        raise DemoParseError("header must start with 't'", line, path)
    xs = [n for n in names[1:] if n.startswith("x")]
    vs = [n for n in names[1:] if n.startswith("v")]
    n_dims = len(xs)
    expected = ["t"] + [f"x{i + 1}" for i in range(n_dims)]
    if vs:
        expected += [f"v{i + 1}" for i in range(n_dims)]
    if n_dims == 0 or names != expected:
        raise DemoParseError(f"unexpected header {','.join(names)!r}", line, path)
    return n_dims, bool(vs)


def parse_demonstrations(text: str, path: str | None = None, label: str = "") -> list[Demonstration]:
    """Parse CSV text; blank lines separate independent segments."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DemoParseError("empty file", 0, path)
    n_dims, has_vel = _parse_header(rows[0], 1, path)
    width = 1 + n_dims * (2 if has_vel else 1)

    segments: list[list[tuple[int, list[float]]]] = [[]]
    for lineno, cells in enumerate(rows[1:], start=2):
        if not cells or all(not c.strip() for c in cells):
            if segments[-1]:
                segments.append([])
            continue
        if len(cells) != width:
            raise DemoParseError(
                f"inconsistent dimensions: expected {width} columns, got {len(cells)}", lineno, path
            )
        values = [_parse_float(c, lineno, path) for c in cells]
        seg = segments[-1]
        if seg and values[0] <= seg[-1][1][0]:
            raise DemoParseError("non-increasing times", lineno, path)
        seg.append((lineno, values))
    segments = [s for s in segments if s]
    if not segments:
        raise DemoParseError("no data rows", 0, path)

    demos = []
    for k, seg in enumerate(segments):
        if len(seg) < 3:
            raise DemoParseError("a segment needs at least 3 rows", seg[0][0], path)
        data = np.array([v for _, v in seg])
        t = data[:, 0]
        x = data[:, 1 : 1 + n_dims]
        v = data[:, 1 + n_dims :] if has_vel else None
        name = label if len(segments) == 1 else f"{label}#{k}"
        demos.append(Demonstration.from_positions(t, x, name, velocities=v))
    return demos


def load_demonstrations(path) -> list[Demonstration]:
    """Load one CSV file, or every ``*.csv`` in a directory (sorted by name)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise DemoParseError("no CSV files in directory", 0, str(path))
    elif path.is_file():
        files = [path]
    else:
        raise FileNotFoundError(path)
    demos: list[Demonstration] = []
    for f in files:
        demos.extend(parse_demonstrations(f.read_text(encoding="utf-8"), str(f), f.stem))
    return demos


def _fmt(x: float) -> str:
    return repr(float(x))


def trajectory_to_csv(traj: Trajectory) -> str:
    o = traj.n_dims
    header = ["t"] + [f"x{i + 1}" for i in range(o)] + [f"v{i + 1}" for i in range(o)]
    lines = [",".join(header)]
    for t, x, v in zip(traj.times, traj.positions, traj.velocities):
        lines.append(",".join([_fmt(t)] + [_fmt(a) for a in x] + [_fmt(a) for a in v]))
    return "\n".join(lines) + "\n"


def save_trajectory_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    path.write_text(trajectory_to_csv(traj), encoding="utf-8")
    return path


def load_trajectory_csv(path) -> Trajectory:
    (demo,) = parse_demonstrations(Path(path).read_text(encoding="utf-8"), str(path))
    return demo.trajectory
