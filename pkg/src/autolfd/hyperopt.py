"""Outer-loop optimization of the kernel width and regularizer in log10 space.

Two optimizers share one interface, a loss ``f(x) -> float`` over a box of
log10 coordinates: projected gradient descent with central finite
differences and backtracking, and Bayesian optimization with a Matern-5/2
GP surrogate and expected improvement.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm, qmc

from .linalg import cho_solve, jittered_cholesky, logdet_from_cho

LOG10_KH_BOUNDS = (-2.0, 6.0)
LOG10_LAMBDA_BOUNDS = (-8.0, 2.0)
DEFAULT_BOUNDS = np.array([LOG10_KH_BOUNDS, LOG10_LAMBDA_BOUNDS])
FD_STEP = 1e-3
GD_STEPS = 30
BO_BUDGET = 100
BO_INITIAL = 8
BO_CANDIDATES = 1000
SURROGATE_NOISE = 1e-6
LENGTH_SCALE_GRID = np.logspace(-1.5, 0.5, 10)


@dataclass(frozen=True)
class Hyperparams:
    log10_kh: float
    log10_lambda: float

    @property
    def kh(self) -> float:
        return 10.0**self.log10_kh

    @property
    def lam(self) -> float:
        return 10.0**self.log10_lambda

    def as_array(self) -> np.ndarray:
        return np.array([self.log10_kh, self.log10_lambda])

    @classmethod
    def from_array(cls, x) -> "Hyperparams":
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(float(x[0]), float(x[1]))

    def within(self, bounds=DEFAULT_BOUNDS) -> bool:
        x = self.as_array()
        return bool(np.all(x >= bounds[:, 0]) and np.all(x <= bounds[:, 1]))


class NonFiniteLossError(FloatingPointError):
    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)
        super().__init__(f"non-finite loss at {self.x.tolist()}")


def _bounds(bounds, dim=None) -> np.ndarray:
    b = np.asarray(bounds if bounds is not None else DEFAULT_BOUNDS, dtype=float)
    if b.ndim == 1:
        b = b[None, :]
    if dim is not None and b.shape[0] != dim:
        raise ValueError("bounds do not match the parameter dimension")
    return b


def fd_gradient(loss: Callable, x, step: float = FD_STEP, bounds=None) -> np.ndarray:
    """Central-difference gradient; stencil points are clipped into ``bounds``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    b = _bounds(bounds, x.size) if bounds is not None else None
    grad = np.zeros_like(x)
    for i in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi[i] += step
        lo[i] -= step
        if b is not None:
            hi[i] = min(hi[i], b[i, 1])
            lo[i] = max(lo[i], b[i, 0])
        f_hi, f_lo = loss(hi), loss(lo)
        for pt, val in ((hi, f_hi), (lo, f_lo)):
            if not np.isfinite(val):
                raise NonFiniteLossError(pt)
        grad[i] = (f_hi - f_lo) / (hi[i] - lo[i])
    return grad


@dataclass
class GdResult:
    x: np.ndarray
    cost: float
    history: list[tuple[np.ndarray, float]] = field(default_factory=list)
    evaluations: int = 0


def gd_optimize(
    loss: Callable,
    x0,
    learning_rate: float,
    steps: int = GD_STEPS,
    bounds=None,
    step: float = FD_STEP,
    max_halvings: int = 10,
) -> GdResult:
    """Projected gradient descent; a step that raises the cost is retried with half the rate.

    ``history`` holds every accepted point with its cost, starting with
    ``x0``; accepted costs are therefore non-increasing.
    """
    b = _bounds(bounds, np.size(x0))
    x = np.clip(np.asarray(x0, dtype=float).reshape(-1), b[:, 0], b[:, 1])
    calls = 0

    def f(p):
        nonlocal calls
        calls += 1
        return float(loss(p))

    cost = f(x)
    if not np.isfinite(cost):
        raise NonFiniteLossError(x)
    history = [(x.copy(), cost)]
    for _ in range(steps):
        grad = fd_gradient(f, x, step, b)
        eta = learning_rate
        for _ in range(max_halvings + 1):
            cand = np.clip(x - eta * grad, b[:, 0], b[:, 1])
            if np.array_equal(cand, x):
                break
            c = f(cand)
            if np.isfinite(c) and c <= cost:
                x, cost = cand, c
                break
            eta *= 0.5
        history.append((x.copy(), cost))
    return GdResult(x, cost, history, calls)


# ---------------------------------------------------------------------------
# Surrogate


def matern52(a: np.ndarray, b: np.ndarray, length_scales) -> np.ndarray:
    """Unit-variance Matern-5/2 kernel with per-dimension length scales."""
    ls = np.asarray(length_scales, dtype=float)
    diff = (a[:, None, :] - b[None, :, :]) / ls
    r = np.sqrt(np.sum(diff * diff, axis=2))
    s5r = np.sqrt(5.0) * r
    return (1.0 + s5r + 5.0 / 3.0 * r * r) * np.exp(-s5r)


@dataclass(frozen=True)
class ObservationSet:
    thetas: tuple[tuple[float, ...], ...] = ()
    costs: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.thetas) != len(self.costs):
            raise ValueError("thetas and costs differ in length")
        if not np.all(np.isfinite(self.costs)):
            raise ValueError("costs must be finite")

    def __len__(self) -> int:
        return len(self.costs)

    def append(self, theta, cost: float) -> "ObservationSet":
        return ObservationSet(
            self.thetas + (tuple(float(v) for v in np.ravel(theta)),), self.costs + (float(cost),)
        )

    @property
    def x(self) -> np.ndarray:
        return np.array(self.thetas, dtype=float)

    @property
    def y(self) -> np.ndarray:
        return np.array(self.costs, dtype=float)

    @property
    def incumbent_index(self) -> int:
        return int(np.argmin(self.costs))

    @property
    def incumbent(self) -> float:
        return float(min(self.costs))

    def incumbent_trace(self) -> np.ndarray:
        return np.minimum.accumulate(self.y)


@dataclass(frozen=True, eq=False)
class Surrogate:
    """GP on unit-box inputs and standardized targets.

    The covariance is ``sigma2 * (Matern(ls) + noise * I)``; for each
    length-scale pair on the grid ``sigma2`` has a closed-form maximum
    likelihood value, so the grid search is over length scales only.
    """

    x_unit: np.ndarray
    y_std: np.ndarray
    lower: np.ndarray
    width: np.ndarray
    y_mean: float
    y_scale: float
    length_scales: np.ndarray
    sigma2: float
    noise: float
    log_marginal: float
    _cho: tuple = field(repr=False, default=None)
    _alpha: np.ndarray = field(repr=False, default=None)

    def _to_unit(self, x) -> np.ndarray:
        return (np.atleast_2d(np.asarray(x, dtype=float)) - self.lower) / self.width

    def predict(self, x):
        """Predictive mean and standard deviation in cost units."""
        z = self._to_unit(x)
        k = matern52(z, self.x_unit, self.length_scales)
        mean = k @ self._alpha
        v = cho_solve(self._cho, k.T)
        var = self.sigma2 * np.maximum(1.0 - np.sum(k * v.T, axis=1), 0.0)
        return self.y_mean + self.y_scale * mean, self.y_scale * np.sqrt(var)


def surrogate_fit(obs: ObservationSet, bounds=None, noise: float = SURROGATE_NOISE, grid=LENGTH_SCALE_GRID) -> Surrogate:
    x = obs.x
    if len(obs) < 2:
        raise ValueError("need at least two observations")
    if np.all(np.ptp(x, axis=0) == 0):
        raise ValueError("degenerate observations: all inputs identical")
    b = _bounds(bounds, x.shape[1]) if bounds is not None else np.column_stack([x.min(0), x.max(0)])
    lower, width = b[:, 0], np.where(b[:, 1] > b[:, 0], b[:, 1] - b[:, 0], 1.0)
    z = (x - lower) / width
    y = obs.y
    y_mean = float(y.mean())
    y_scale = float(y.std()) or 1.0
    ys = (y - y_mean) / y_scale
    n = ys.size

    best = None
    for ls in itertools.product(grid, repeat=x.shape[1]):
        gram = matern52(z, z, ls) + noise * np.eye(n)
        try:
            cho, _ = jittered_cholesky(gram, "ill-conditioned surrogate", relative=False)
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve(cho, ys)
        sigma2 = max(float(ys @ alpha) / n, 1e-12)
        lml = -0.5 * n * np.log(sigma2) - 0.5 * logdet_from_cho(cho) - 0.5 * n * (1 + np.log(2 * np.pi))
        if best is None or lml > best[0]:
            best = (lml, np.array(ls), sigma2, cho, alpha)
    if best is None:
        raise np.linalg.LinAlgError("surrogate fit failed for every length scale")
    lml, ls, sigma2, cho, alpha = best
    return Surrogate(z, ys, lower, width, y_mean, y_scale, ls, sigma2, noise, lml, cho, alpha)


def expected_improvement(mean, stddev, incumbent: float):
    """Closed-form EI for minimization; reduces to ``max(L* - mu, 0)`` at zero spread."""
    mean = np.asarray(mean, dtype=float)
    stddev = np.asarray(stddev, dtype=float)
    if np.any(stddev < 0):
        raise ValueError("stddev must be non-negative")
    gap = incumbent - mean
    out = np.maximum(gap, 0.0)
    pos = stddev > 0
    if np.any(pos):
        out = np.array(out, dtype=float)
        # tiny spreads give huge |z|; the pdf underflows to 0 harmlessly
        with np.errstate(over="ignore"):
            z = gap[pos] / stddev[pos]
            out[pos] = gap[pos] * norm.cdf(z) + stddev[pos] * norm.pdf(z)
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class BoResult:
    x: np.ndarray
    cost: float
    observations: ObservationSet
    penalized: list[int] = field(default_factory=list)


def latin_hypercube(bounds, n: int, seed) -> np.ndarray:
    b = _bounds(bounds)
    sampler = qmc.LatinHypercube(d=b.shape[0], seed=np.random.default_rng(seed))
    return qmc.scale(sampler.random(n), b[:, 0], b[:, 1])


def bo_optimize(
    loss: Callable,
    bounds=None,
    budget: int = BO_BUDGET,
    seed: int = 0,
    n_initial: int = BO_INITIAL,
    n_candidates: int = BO_CANDIDATES,
    callback=None,
) -> BoResult:
    """Sequential EI search; non-finite losses are replaced by 10x the worst finite cost."""
    b = _bounds(bounds)
    if budget < n_initial:
        raise ValueError(f"budget {budget} smaller than the initial design ({n_initial})")
    rng = np.random.default_rng([seed, 1])
    design = latin_hypercube(b, n_initial, [seed, 0])
    obs = ObservationSet()
    raw: list[float] = []
    penalized: list[int] = []

    def record(x, value):
        nonlocal obs
        raw.append(value)
        finite = [v for v in raw if np.isfinite(v)]
        if np.isfinite(value):
            cost = float(value)
        else:
            worst = max(finite) if finite else 1.0
            cost = 10.0 * abs(worst) if worst != 0 else 10.0
            penalized.append(len(obs))
        obs = obs.append(x, cost)
        if callback is not None:
            callback(len(obs), np.asarray(x, float), cost, obs.incumbent)

    for x in design:
        record(x, _safe_call(loss, x))
    while len(obs) < budget:
        model = surrogate_fit(obs, b)
        cand = rng.uniform(b[:, 0], b[:, 1], size=(n_candidates, b.shape[0]))
        mu, sd = model.predict(cand)
        ei = expected_improvement(mu, sd, obs.incumbent)
        x = cand[int(np.argmax(ei))]
        record(x, _safe_call(loss, x))
    i = obs.incumbent_index
    return BoResult(obs.x[i], obs.costs[i], obs, penalized)


def _safe_call(loss, x) -> float:
    try:
        value = float(loss(np.asarray(x, dtype=float)))
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError, RuntimeError, ValueError):
        return float("nan")
    return value
