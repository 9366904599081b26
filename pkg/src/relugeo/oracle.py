"""Dense-grid reference search for two-layer, one-input, one-output ReLU fits.

Hidden units range over a grid of ``(a, b)``; the output weights and the
bias are then solved exactly by least squares, which can only lower the
residual compared with also gridding them.  Used to cross-check the exact
membership verdicts.
"""

from __future__ import annotations

import numpy as np

from relugeo import _backend


def grid_features(s, lo: float = -5.0, hi: float = 5.0, step: float = 0.05) -> np.ndarray:
    """Distinct unit directions of centred ``relu(a s + b)`` over the grid.

    Constant features are dropped: the output bias absorbs them.
    """
    s = np.asarray(s, dtype=float).ravel()
    g = np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)
    A, B = np.meshgrid(g, g, indexing="ij")
    F = np.maximum(A.ravel()[:, None] * s[None, :] + B.ravel()[:, None], 0.0)
    F -= F.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(F, axis=1)
    keep = norms > 1e-12
    U = F[keep] / norms[keep, None]
    U = np.unique(np.round(U, 12), axis=0)
    return np.ascontiguousarray(U / np.linalg.norm(U, axis=1, keepdims=True))


def grid_residual(U, t, d: int, stop: float = 0.0) -> float:
    """Smallest Euclidean residual of ``t`` over ``d <= 2`` grid units.

    The scan may stop once the residual is at most ``stop``.
    """
    t = np.asarray(t, dtype=float).ravel()
    P = t - t.mean()
    pp = float(P @ P)
    if d == 0 or U.shape[0] == 0:
        return float(np.sqrt(pp))
    r = U @ P
    single = max(pp - float(np.max(r * r)), 0.0)
    if d == 1 or single <= stop * stop:
        return float(np.sqrt(single))
    if d != 2:
        raise ValueError("the grid oracle supports d <= 2")
    best, _, _ = _backend.kernels.pair_min_residual(U, np.ascontiguousarray(P), stop * stop)
    return float(np.sqrt(min(best, single)))
