"""Cholesky factorization with jitter escalation, shared by GP, KMP and BO."""

from __future__ import annotations

import numpy as np
from scipy import linalg

JITTER_START = 1e-10
JITTER_MAX = 1e-4


class IllConditionedError(np.linalg.LinAlgError):
    pass


def jittered_cholesky(matrix: np.ndarray, what: str = "ill-conditioned Gram", relative: bool = True):
    """Lower Cholesky factor of ``matrix``, adding diagonal jitter on failure.

    Jitter goes 0, 1e-10, 1e-9, ..., 1e-4; with ``relative`` it is scaled by the
    mean diagonal so matrices with mixed units behave the same way.  Returns
    ``(cho, jitter_used)`` where ``cho`` is usable with ``scipy.linalg.cho_solve``.
    """
    a = np.asarray(matrix, dtype=float)
    scale = float(np.mean(np.abs(np.diag(a)))) if relative else 1.0
    if not np.isfinite(scale) or scale == 0.0:
        scale = 1.0
    jitter = 0.0
    while True:
        try:
            work = a + jitter * scale * np.eye(a.shape[0]) if jitter else a
            c = linalg.cholesky(work, lower=True, check_finite=True)
            return (c, True), jitter
        except (np.linalg.LinAlgError, ValueError):
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise IllConditionedError(what) from None


def cho_solve(cho, b: np.ndarray) -> np.ndarray:
    return linalg.cho_solve(cho, b, check_finite=False)


def logdet_from_cho(cho) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cho[0]))))


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def clip_eigenvalues(cov: np.ndarray, floor: float) -> np.ndarray:
    """Project a (batch of) symmetric matrices onto ``eig >= floor``."""
    cov = symmetrize(np.asarray(cov, dtype=float))
    w, v = np.linalg.eigh(cov)
    # margin covers round-off when the clipped matrix is rebuilt
    target = floor + 64.0 * np.finfo(float).eps * np.max(np.abs(w), axis=-1, keepdims=True)
    if np.all(w >= target):
        return cov
    w = np.maximum(w, target)
    out = (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)
    return symmetrize(out)
