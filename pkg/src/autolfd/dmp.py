"""Dynamic movement primitives with a Gaussian-process forcing term.

Transformation system (per dimension, elementwise)::

    tau^2 xdd = Kp (g - x) - tau Kv xd + s (g - x0) * f(s)
    tau sd    = -alpha s

The forcing term is regressed on phase ``s`` with a squared-exponential GP
of width ``k_h`` and regularizer ``lambda``; those two numbers are the
hyperparameters the outer optimization loop tunes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import cho_solve, jittered_cholesky
from .trajectory import ENCODER_LENGTH, Constraints, Demonstration, Trajectory, resample

DEFAULT_ALPHA = 4.0
DEFAULT_KP = 100.0
AMPLITUDE_GUARD = 1e-6


class DivergedRolloutError(RuntimeError):
    pass


def canonical_phase(t, tau: float, alpha: float = DEFAULT_ALPHA):
    """Closed-form solution of the canonical system with ``s(0) = 1``."""
    return np.exp(-alpha * np.asarray(t, dtype=float) / tau)


def se_kernel(a, b, kh: float) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    return np.exp(-kh * (a[:, None] - b[None, :]) ** 2)


@dataclass(frozen=True, eq=False)
class GpForcing:
    """GP regression of the forcing term on phase; one target column per dimension."""

    inputs: np.ndarray
    targets: np.ndarray
    kh: float
    lam: float
    _cho: tuple = field(repr=False, default=None)
    _alpha: np.ndarray = field(repr=False, default=None)
    jitter: float = 0.0

    @classmethod
    def fit(cls, inputs, targets, kh: float, lam: float) -> "GpForcing":
        if kh <= 0 or lam < 0:
            raise ValueError("need kh > 0 and lambda >= 0")
        s = np.asarray(inputs, dtype=float).reshape(-1)
        u = np.asarray(targets, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        gram = se_kernel(s, s, kh)
        gram = 0.5 * (gram + gram.T)
        cho, jitter = jittered_cholesky(gram + lam * np.eye(s.size), "ill-conditioned Gram")
        return cls(s, u, float(kh), float(lam), cho, cho_solve(cho, u), jitter)

    def predict(self, s_star) -> np.ndarray:
        """Forcing at the query phases, shape ``(Q, O)`` (or ``(O,)`` for a scalar)."""
        scalar = np.ndim(s_star) == 0
        k_star = se_kernel(np.atleast_1d(s_star), self.inputs, self.kh)
        out = k_star @ self._alpha
        return out[0] if scalar else out


def gp_predict(gp: GpForcing, s_star) -> np.ndarray:
    return gp.predict(s_star)


@dataclass(frozen=True, eq=False)
class DmpModel:
    alpha: float
    tau: float
    kp: np.ndarray
    kv: np.ndarray
    xi0_demo: np.ndarray
    goal_demo: np.ndarray
    gp: GpForcing
    active: np.ndarray  # False where the demo amplitude is below the guard

    def __post_init__(self):
        if self.alpha <= 0 or self.tau <= 0:
            raise ValueError("alpha and tau must be positive")
        if np.any(self.kp <= 0) or np.any(self.kv <= 0):
            raise ValueError("gains must be positive")

    @property
    def n_dims(self) -> int:
        return self.kp.size

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "tau": self.tau,
            "kp": self.kp.tolist(),
            "kv": self.kv.tolist(),
            "xi0_demo": self.xi0_demo.tolist(),
            "goal_demo": self.goal_demo.tolist(),
            "active": self.active.tolist(),
            "gp": {
                "kh": self.gp.kh,
                "lambda": self.gp.lam,
                "inputs": self.gp.inputs.tolist(),
                "targets": self.gp.targets.tolist(),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DmpModel":
        g = d["gp"]
        gp = GpForcing.fit(g["inputs"], g["targets"], g["kh"], g["lambda"])
        return cls(
            float(d["alpha"]),
            float(d["tau"]),
            np.array(d["kp"]),
            np.array(d["kv"]),
            np.array(d["xi0_demo"]),
            np.array(d["goal_demo"]),
            gp,
            np.array(d["active"], dtype=bool),
        )

    def save_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        return path


def critical_damping(kp) -> np.ndarray:
    return 2.0 * np.sqrt(np.asarray(kp, dtype=float))


def extract_forcing_targets(
    demo: Demonstration,
    alpha: float = DEFAULT_ALPHA,
    kp=DEFAULT_KP,
    kv=None,
    amplitude_guard: float = AMPLITUDE_GUARD,
):
    """Invert the transformation system on the demonstration samples.

    Returns ``(s, f, active)``: phases ``(N,)``, forcing targets ``(N, O)``
    and the mask of dimensions whose start/goal amplitude clears the guard
    (forcing is identically zero on the others).
    """
    tr = demo.trajectory
    o = tr.n_dims
    kp = np.broadcast_to(np.asarray(kp, dtype=float), (o,)).copy()
    kv = critical_damping(kp) if kv is None else np.broadcast_to(np.asarray(kv, float), (o,)).copy()
    tau = tr.duration
    t = tr.times - tr.times[0]
    s = canonical_phase(t, tau, alpha)
    x, xd, xdd = tr.positions, tr.velocities, demo.accelerations
    x0, g = x[0], x[-1]
    amplitude = g - x0
    scale = max(tr.bbox_diagonal(), 1e-300)
    active = np.abs(amplitude) >= amplitude_guard * scale
    if not np.any(active):
        raise ValueError("zero-amplitude demonstration")
    f = np.zeros_like(x)
    num = tau**2 * xdd - kp * (g - x) + tau * kv * xd
    f[:, active] = num[:, active] / (s[:, None] * amplitude[active])
    return s, f, active


def fit_dmp(
    demo: Demonstration,
    kh: float,
    lam: float,
    alpha: float = DEFAULT_ALPHA,
    kp=DEFAULT_KP,
) -> DmpModel:
    tr = demo.trajectory
    o = tr.n_dims
    kp = np.broadcast_to(np.asarray(kp, dtype=float), (o,)).copy()
    kv = critical_damping(kp)
    s, f, active = extract_forcing_targets(demo, alpha, kp, kv)
    gp = GpForcing.fit(s, f, kh, lam)
    return DmpModel(
        float(alpha), tr.duration, kp, kv, tr.positions[0].copy(), tr.positions[-1].copy(), gp, active
    )


def n_rollout_steps(tau: float, dt: float) -> int:
    return int(np.floor(tau / dt + 1e-9)) + 1


def rollout(model: DmpModel, xi0, g, tau: float | None = None, dt: float | None = None, forcing=True) -> Trajectory:
    """Semi-implicit Euler integration from rest at ``xi0`` towards ``g``.

    Returns ``floor(tau/dt) + 1`` samples starting at time 0.  The forcing
    term depends on time only (through the phase), so it is evaluated for the
    whole horizon in one GP prediction.
    """
    tau = model.tau if tau is None else float(tau)
    if dt is None:
        dt = tau / (model.gp.inputs.size - 1)
    if dt <= 0 or tau / dt < 10 - 1e-9:
        raise ValueError("need dt > 0 and tau/dt >= 10")
    xi0 = np.asarray(xi0, dtype=float).reshape(-1)
    g = np.asarray(g, dtype=float).reshape(-1)
    n = n_rollout_steps(tau, dt)
    times = dt * np.arange(n)
    s = canonical_phase(times, tau, model.alpha)
    if forcing:
        push = s[:, None] * (g - xi0) * model.gp.predict(s)
        push[:, ~model.active] = 0.0
    else:
        push = np.zeros((n, xi0.size))

    kp, kv, tau2 = model.kp, model.kv, tau * tau
    pos = np.empty((n, xi0.size))
    vel = np.empty((n, xi0.size))
    x = xi0.copy()
    v = np.zeros_like(x)
    pos[0], vel[0] = x, v
    # an unstable step size overflows; that is reported below, not warned about
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n - 1):
            acc = (kp * (g - x) - tau * kv * v + push[k]) / tau2
            v = v + dt * acc
            x = x + dt * v
            pos[k + 1], vel[k + 1] = x, v
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
        raise DivergedRolloutError("diverged rollout")
    return Trajectory(times, pos, vel)


def split_start_end(c: Constraints, traj: Trajectory, tol: float = 1e-9):
    """Return ``(start, end)`` positions; anything else is rejected."""
    c.validate_for(traj, tol)
    t0, t1 = traj.times[0], traj.times[-1]
    pts = c.points
    if len(pts) != 2 or abs(pts[0].time - t0) > tol or abs(pts[1].time - t1) > tol:
        raise ValueError("unsupported constraint for DMP: need exactly a start and an end point")
    return np.array(pts[0].position), np.array(pts[1].position)


def adapt_dmp(
    demo: Demonstration,
    c: Constraints,
    theta,
    n_out: int = ENCODER_LENGTH,
    alpha: float = DEFAULT_ALPHA,
    kp=DEFAULT_KP,
) -> Trajectory:
    """Fit the forcing GP with ``theta`` and roll out between the constrained endpoints.

    The output is re-stamped to the demonstration's time axis and resampled
    to ``n_out`` points.
    """
    start, end = split_start_end(c, demo.trajectory)
    model = fit_dmp(demo, theta.kh, theta.lam, alpha, kp)
    out = rollout(model, start, end)
    out = Trajectory(out.times + demo.trajectory.times[0], out.positions, out.velocities)
    return resample(out, n_out)
