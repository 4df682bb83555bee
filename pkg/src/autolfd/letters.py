"""Synthetic handwriting letters built from piecewise cubic Bezier templates.

Each segment is traversed with a minimum-jerk time law, so the pen is at
rest at every segment junction; segment durations are proportional to the
control-polygon length.  Demonstrations are the template with every control
point jittered uniformly within ``jitter`` workspace units.
"""

from __future__ import annotations

import numpy as np

from .trajectory import ENCODER_LENGTH, Demonstration

DURATION = 2.0
JITTER = 0.5


def _line(p, q):
    p, q = np.asarray(p, float), np.asarray(q, float)
    return [p, p + (q - p) / 3.0, p + 2.0 * (q - p) / 3.0, q]


def _segments(*points_lists):
    return [np.array(s, dtype=float) for s in points_lists]


TEMPLATES: dict[str, list[np.ndarray]] = {
    "A": _segments(
        _line((0.0, 0.0), (4.0, 10.0)),
        _line((4.0, 10.0), (8.0, 0.0)),
        [(8.0, 0.0), (7.2, 2.6), (5.4, 4.2), (2.2, 4.3)],
    ),
    "G": _segments(
        [(8.0, 8.5), (6.8, 10.3), (2.6, 10.4), (1.2, 6.4)],
        [(1.2, 6.4), (0.0, 2.6), (2.6, -0.2), (5.2, 0.2)],
        [(5.2, 0.2), (7.6, 0.6), (8.6, 2.2), (8.5, 4.6)],
        _line((8.5, 4.6), (5.2, 4.6)),
    ),
    "S": _segments(
        [(8.0, 9.0), (6.5, 10.5), (1.5, 10.0), (1.8, 7.2)],
        [(1.8, 7.2), (2.1, 4.9), (8.2, 5.3), (8.2, 2.6)],
        [(8.2, 2.6), (8.2, -0.4), (2.5, -0.6), (0.5, 1.2)],
    ),
    "L": _segments(
        _line((1.0, 10.0), (1.0, 0.0)),
        _line((1.0, 0.0), (7.0, 0.0)),
    ),
    "N": _segments(
        _line((0.0, 0.0), (0.0, 10.0)),
        _line((0.0, 10.0), (7.0, 0.0)),
        _line((7.0, 0.0), (7.0, 10.0)),
    ),
    "Z": _segments(
        _line((0.0, 10.0), (8.0, 10.0)),
        _line((8.0, 10.0), (0.0, 0.0)),
        _line((0.0, 0.0), (8.0, 0.0)),
    ),
}


def available_letters() -> list[str]:
    return sorted(TEMPLATES)


def template_control_points(letter_id: str) -> list[np.ndarray]:
    try:
        return [s.copy() for s in TEMPLATES[letter_id]]
    except KeyError:
        raise ValueError(
            f"unknown letter-id {letter_id!r}; available: {', '.join(available_letters())}"
        ) from None


def minimum_jerk(u):
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def _bezier(ctrl: np.ndarray, u: np.ndarray) -> np.ndarray:
    u = u[:, None]
    w = 1.0 - u
    return w**3 * ctrl[0] + 3 * w**2 * u * ctrl[1] + 3 * w * u**2 * ctrl[2] + u**3 * ctrl[3]


def render(segments: list[np.ndarray], n_points: int = ENCODER_LENGTH, duration: float = DURATION):
    """Sample the piecewise curve at ``n_points`` uniform times in ``[0, duration]``."""
    lengths = np.array([np.sum(np.linalg.norm(np.diff(s, axis=0), axis=1)) for s in segments])
    weights = lengths + 0.1 * lengths.mean()
    bounds = np.concatenate([[0.0], np.cumsum(weights) / weights.sum() * duration])
    times = np.linspace(0.0, duration, n_points)
    idx = np.clip(np.searchsorted(bounds, times, side="right") - 1, 0, len(segments) - 1)
    positions = np.empty((n_points, segments[0].shape[1]))
    for k, ctrl in enumerate(segments):
        mask = idx == k
        if not np.any(mask):
            continue
        local = (times[mask] - bounds[k]) / (bounds[k + 1] - bounds[k])
        positions[mask] = _bezier(ctrl, minimum_jerk(local))
    return times, positions


def _jitter(segments: list[np.ndarray], rng: np.random.Generator, bound: float):
    """Jitter every distinct control point once; junction points stay shared."""
    out = []
    prev_end = None
    for seg in segments:
        noise = rng.uniform(-bound, bound, size=seg.shape)
        new = seg + noise
        if prev_end is not None:
            new[0] = prev_end
        out.append(new)
        prev_end = new[-1]
    return out


def synth_letters(
    letter_id: str,
    count: int,
    seed: int,
    n_points: int = ENCODER_LENGTH,
    jitter: float = JITTER,
    duration: float = DURATION,
) -> list[Demonstration]:
    """``count`` jittered renditions of a template letter, deterministic in ``seed``."""
    template = template_control_points(letter_id)
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng([seed, ord(letter_id[0])])
    demos = []
    for k in range(count):
        times, positions = render(_jitter(template, rng, jitter), n_points, duration)
        demos.append(Demonstration.from_positions(times, positions, label=f"{letter_id}{k}"))
    return demos
