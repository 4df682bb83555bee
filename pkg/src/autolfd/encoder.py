"""Siamese trajectory encoder: fully connected tanh network trained with a triplet hinge.

The network maps a normalized flattened trajectory (length ``2*O*N``) to an
``h``-dimensional embedding.  Gradients are computed by hand; the three
branches of a triplet share weights, so a batch of triplets is pushed
through the network as one stacked matrix of ``3*B`` rows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trajectory import Trajectory, finite_differences, flatten, resample

log = logging.getLogger(__name__)

HIDDEN_SIZES = (256, 128)
EMBED_DIM = 32
# gradient of the norm is undefined at zero distance
_NORM_EPS = 1e-12


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings; the defaults are the writing-task values, ``desk()`` is the CI-scale preset."""

    learning_rate: float = 1e-7
    batch_size: int = 200
    epochs: int = 30000
    margin: float = 0.5
    seed: int = 0
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if self.margin <= 0:
            raise ValueError("margin must be positive")

    @classmethod
    def paper(cls, seed: int = 0) -> "TrainConfig":
        """Writing-task settings: lr 1e-7, batch 200, 30000 epochs, margin 0.5."""
        return cls(learning_rate=1e-7, batch_size=200, epochs=30000, margin=0.5, seed=seed)

    @classmethod
    def desk(cls, seed: int = 0) -> "TrainConfig":
        return cls(learning_rate=1e-3, batch_size=200, epochs=500, margin=0.5, seed=seed)


@dataclass(eq=False)
class EncoderParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    in_mean: np.ndarray
    in_scale: np.ndarray
    n_points: int
    n_dims: int

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.in_mean.copy(),
            self.in_scale.copy(),
            self.n_points,
            self.n_dims,
        )

    def to_dict(self) -> dict:
        return {
            "n_points": self.n_points,
            "n_dims": self.n_dims,
            "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(self.weights, self.biases)],
            "normalization": {"mean": self.in_mean.tolist(), "scale": self.in_scale.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderParams":
        return cls(
            [np.array(layer["weight"], dtype=float) for layer in d["layers"]],
            [np.array(layer["bias"], dtype=float) for layer in d["layers"]],
            np.array(d["normalization"]["mean"], dtype=float),
            np.array(d["normalization"]["scale"], dtype=float),
            int(d["n_points"]),
            int(d["n_dims"]),
        )

    def save_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        return path

    @classmethod
    def load_json(cls, path) -> "EncoderParams":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def init_params(
    n_points: int,
    n_dims: int,
    rng: np.random.Generator,
    hidden=HIDDEN_SIZES,
    embed_dim: int = EMBED_DIM,
    in_mean=None,
    in_scale=None,
) -> EncoderParams:
    """Glorot-uniform weights, zero biases, identity normalization unless given."""
    d_in = 2 * n_dims * n_points
    sizes = [d_in, *hidden, embed_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    mean = np.zeros(d_in) if in_mean is None else np.asarray(in_mean, float)
    scale = np.ones(d_in) if in_scale is None else np.asarray(in_scale, float)
    return EncoderParams(weights, biases, mean, scale, n_points, n_dims)


def normalization_stats(anchors: np.ndarray, n_dims: int, floor_fraction: float = 0.1):
    """Per-coordinate mean and standard deviation of flattened anchors.

    Coordinates that barely vary across anchors (e.g. the rest velocity at
    t=0) would blow up after division, so each scale is floored at
    ``floor_fraction`` times the average scale of its kind (position or
    velocity component).
    """
    anchors = np.unique(np.asarray(anchors, dtype=float), axis=0)
    mean = anchors.mean(axis=0)
    std = anchors.std(axis=0)
    kind = (np.arange(anchors.shape[1]) % (2 * n_dims)) >= n_dims
    scale = std.copy()
    for flag in (False, True):
        sel = kind == flag
        ref = std[sel].mean() if np.any(std[sel] > 0) else 1.0
        scale[sel] = np.maximum(std[sel], floor_fraction * ref)
    return mean, scale


def _normalize(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    return (x - params.in_mean) / params.in_scale


def forward(params: EncoderParams, z: np.ndarray, keep: bool = False):
    """Network on already-normalized rows ``z``; optionally keep activations."""
    acts = [z]
    h = z
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return (h, acts) if keep else h


def embed(params: EncoderParams, flat: np.ndarray) -> np.ndarray:
    flat = np.atleast_2d(np.asarray(flat, dtype=float))
    if flat.shape[1] != params.input_dim:
        raise ValueError(f"dimension mismatch: encoder expects {params.input_dim}, got {flat.shape[1]}")
    return forward(params, _normalize(params, flat))


def featurize(traj: Trajectory, n_points: int) -> Trajectory:
    """Resample to ``n_points`` and replace velocities by finite differences of positions.

    Adaptation methods report velocities of their own (integrator state, kernel
    derivatives) that can hide position artifacts such as single-sample
    spikes; deriving them from positions gives every source the same view.
    """
    if traj.n_points != n_points:
        traj = resample(traj, n_points)
    vel, _ = finite_differences(traj.positions, traj.times)
    return Trajectory(traj.times, traj.positions, vel)


def trajectory_vector(params: EncoderParams, traj: Trajectory) -> np.ndarray:
    if traj.n_dims != params.n_dims:
        raise ValueError(f"dimension mismatch: encoder expects O={params.n_dims}, got {traj.n_dims}")
    return flatten(featurize(traj, params.n_points), params.n_points)


def encode(params: EncoderParams, traj) -> np.ndarray:
    """Embedding of one trajectory (or of one flattened vector)."""
    vec = trajectory_vector(params, traj) if isinstance(traj, Trajectory) else np.asarray(traj, float)
    return embed(params, vec)[0]


def triplet_loss(a_emb, p_emb, n_emb, margin: float) -> float:
    d_p = float(np.linalg.norm(np.asarray(a_emb) - np.asarray(p_emb)))
    d_n = float(np.linalg.norm(np.asarray(a_emb) - np.asarray(n_emb)))
    return max(0.0, margin + d_p - d_n)


def batch_loss_and_grads(params: EncoderParams, za, zp, zn, margin: float, with_grads: bool = True):
    """Summed triplet hinge over a batch of normalized inputs and its parameter gradients."""
    b = za.shape[0]
    z = np.vstack([za, zp, zn])
    out, acts = forward(params, z, keep=True)
    ea, ep, en = out[:b], out[b : 2 * b], out[2 * b :]
    diff_p, diff_n = ea - ep, ea - en
    d_p = np.sqrt(np.sum(diff_p**2, axis=1) + _NORM_EPS)
    d_n = np.sqrt(np.sum(diff_n**2, axis=1) + _NORM_EPS)
    hinge = margin + d_p - d_n
    active = hinge > 0
    loss = float(np.sum(hinge[active]))
    if not with_grads:
        return loss, None
    gp = diff_p / d_p[:, None] * active[:, None]
    gn = diff_n / d_n[:, None] * active[:, None]
    delta = np.vstack([gp - gn, -gp, gn])
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            # acts[i] is tanh output of layer i-1
            delta = (delta @ params.weights[i].T) * (1.0 - acts[i] ** 2)
    return loss, (grads_w, grads_b)


def separation_accuracy(params: EncoderParams, anchors, positives, negatives) -> float:
    """Fraction of triplets whose positive embeds closer to the anchor than the negative."""
    if len(anchors) == 0:
        return float("nan")
    ea, ep, en = embed(params, anchors), embed(params, positives), embed(params, negatives)
    d_p = np.linalg.norm(ea - ep, axis=1)
    d_n = np.linalg.norm(ea - en, axis=1)
    return float(np.mean(d_p < d_n))


@dataclass
class TrainLog:
    batch_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    holdout_accuracy: list[float] = field(default_factory=list)
    train_indices: np.ndarray | None = None
    holdout_indices: np.ndarray | None = None

    def smoothed(self, window: int = 100) -> np.ndarray:
        x = np.asarray(self.batch_losses)
        if x.size < window:
            window = max(1, x.size)
        return np.convolve(x, np.ones(window) / window, mode="valid")

    def to_csv(self) -> str:
        lines = ["epoch,loss,holdout_accuracy"]
        for k, (loss, acc) in enumerate(zip(self.epoch_losses, self.holdout_accuracy), start=1):
            lines.append(f"{k},{loss!r},{acc!r}")
        return "\n".join(lines) + "\n"


def split_indices(m: int, holdout_fraction: float, seed: int):
    rng = np.random.default_rng([seed, 7919])
    perm = rng.permutation(m)
    n_hold = int(round(holdout_fraction * m))
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def train_encoder(dataset, config: TrainConfig, hidden=HIDDEN_SIZES, embed_dim: int = EMBED_DIM, progress=None):
    """Plain mini-batch SGD on the summed triplet hinge.

    ``dataset`` is a ``TripletDataset``.  Returns ``(params, log)``; the
    log holds per-batch mean losses, per-epoch mean loss and holdout
    separation accuracy.
    """
    a_all, p_all, n_all = dataset.flat()
    train_idx, hold_idx = split_indices(len(a_all), config.holdout_fraction, config.seed)
    mean, scale = normalization_stats(a_all[train_idx], dataset.n_dims)
    rng = np.random.default_rng(config.seed)
    params = init_params(dataset.n_points, dataset.n_dims, rng, hidden, embed_dim, mean, scale)

    za, zp, zn = (_normalize(params, x) for x in (a_all, p_all, n_all))
    tlog = TrainLog(train_indices=train_idx, holdout_indices=hold_idx)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        total = 0.0
        for start in range(0, order.size, config.batch_size):
            sel = order[start : start + config.batch_size]
            loss, (gw, gb) = batch_loss_and_grads(params, za[sel], zp[sel], zn[sel], config.margin)
            if not np.isfinite(loss):
                norms = [float(np.linalg.norm(w)) for w in params.weights]
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}; weight norms {norms}"
                )
            for i in range(len(params.weights)):
                params.weights[i] -= lr * gw[i]
                params.biases[i] -= lr * gb[i]
            tlog.batch_losses.append(loss / sel.size)
            total += loss
        tlog.epoch_losses.append(total / max(1, train_idx.size))
        acc = separation_accuracy(params, a_all[hold_idx], p_all[hold_idx], n_all[hold_idx])
        tlog.holdout_accuracy.append(acc)
        if progress is not None:
            progress(epoch, tlog.epoch_losses[-1], acc)
    log.info("encoder trained: final loss %.4g, holdout accuracy %.3f", tlog.epoch_losses[-1], tlog.holdout_accuracy[-1])
    return params, tlog
