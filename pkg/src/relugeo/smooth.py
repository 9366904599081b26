"""Non-attainment for one-input, one-hidden-unit smooth networks.

The network ``s -> c * tanh(a s + b) + d`` maps the sample ``s = (0, 1, 2)``
to vectors that are either constant or strictly monotone.  Its closure adds
the weakly monotone vectors, so the best approximation value of any target
is its isotonic distance (best of both orientations), and targets whose
isotonic projection has a tie are approached only along diverging weights.

Sigmoid networks have the same image, since
``sigmoid(x) = (1 + tanh(x / 2)) / 2``; they are supported as an extension.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, isotonic_regression

from relugeo import _backend
from relugeo.core import Activation, NetworkSpec
from relugeo.datasets import TANH_S
from relugeo.erm import AttainmentClass, FitConfig, fit


def isotonic_bound(t):
    """Squared distance from ``t`` to the nearest monotone vector.

    Both orientations are tried with pool-adjacent-violators; the smaller
    distance wins, the nondecreasing fit on ties.

    Returns
    -------
    (float, ndarray)
        Squared distance and the minimizing monotone vector.

    Examples
    --------
    >>> d, y = isotonic_bound([0.0, 2.0, 1.0])
    >>> round(d, 12), y.tolist()
    (0.5, [0.0, 1.5, 1.5])
    """
    t = np.asarray(t, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("t must have at least one entry")
    best = None
    for increasing in (True, False):
        y = isotonic_regression(t, increasing=increasing).x
        dist = float(np.sum((t - y) ** 2))
        if best is None or dist < best[0]:
            best = (dist, y)
    return best


def _logcosh(x):
    return np.logaddexp(x, -x) - np.log(2.0)


def chain_witness(t, activation=Activation.TANH):
    """Exact weights ``(a, b, c, d)`` reproducing ``t`` on ``s = (0, 1, 2)``.

    The image consists of the constant and the strictly monotone vectors.
    For the latter, the ratio of consecutive increments of
    ``tanh(a s + b)`` equals ``cosh(b) / cosh(2a + b)``, which sweeps
    ``(exp(-2a), exp(2a))`` as ``b`` runs over the reals.

    Returns
    -------
    ndarray or None
        ``None`` when ``t`` is not in the image.
    """
    t = np.asarray(t, dtype=float).ravel()
    if t.size != 3:
        raise ValueError("the chain example has three samples")
    d1, d2 = t[1] - t[0], t[2] - t[1]
    scale = max(np.max(np.abs(t)), 1.0)
    if abs(d1) <= 1e-15 * scale and abs(d2) <= 1e-15 * scale:
        theta = np.array([0.0, 0.0, 0.0, float(t.mean())])
    elif d1 * d2 > 0:
        log_r = np.log(d2 / d1)
        a = abs(log_r) / 2.0 + 1.0
        g = lambda b: _logcosh(b) - _logcosh(2.0 * a + b) - log_r
        lim = abs(log_r) + 4.0 * a + 40.0
        b = brentq(g, -lim, lim, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        c = d1 / (np.tanh(a + b) - np.tanh(b))
        theta = np.array([a, b, c, t[0] - c * np.tanh(b)])
    else:
        return None
    if Activation.parse(activation) is Activation.SIGMOID:
        a, b, c, d = theta
        theta = np.array([2.0 * a, 2.0 * b, 2.0 * c, d - c])
    return theta


@dataclass
class ChainAnalysis:
    """Fit of one target on the three-sample chain against its monotone bound.

    Attributes
    ----------
    s, t : sample and target
    bound, bound_minimizer : isotonic squared distance and its minimizer
    best_loss, best_theta, best_norm : best fit found
    min_iterate_loss : smallest loss at any recorded iterate of any restart
    classification : heuristic attainment verdict of the fit
    witness : exact weights when ``t`` lies in the image, else None
    activation : activation of the hidden unit
    extension : True for activations other than tanh
    """

    s: np.ndarray
    t: np.ndarray
    bound: float
    bound_minimizer: np.ndarray
    best_loss: float
    best_theta: np.ndarray
    best_norm: float
    min_iterate_loss: float
    classification: AttainmentClass
    witness: np.ndarray | None
    activation: Activation
    extension: bool

    @property
    def excess(self) -> float:
        """Best loss minus the isotonic bound."""
        return self.best_loss - self.bound

    def to_dict(self) -> dict:
        return {
            "s": self.s.tolist(), "t": self.t.tolist(), "bound": self.bound,
            "bound_minimizer": self.bound_minimizer.tolist(), "best_loss": self.best_loss,
            "best_theta": self.best_theta.tolist(), "best_norm": self.best_norm,
            "min_iterate_loss": self.min_iterate_loss,
            "classification": self.classification.value,
            "witness": None if self.witness is None else self.witness.tolist(),
            "activation": self.activation.value, "extension": self.extension,
        }


def default_chain_config(**overrides) -> FitConfig:
    """Fit settings for the chain: norms beyond 100 count as escaping."""
    base = dict(restarts=4, max_iters=5000, norm_divergence_threshold=100.0)
    base.update(overrides)
    return FitConfig(**base)


def tanh_example_analysis(t, config: FitConfig | None = None,
                          activation=Activation.TANH) -> ChainAnalysis:
    """Fit the 1-1-1 network to ``t`` on ``s = (0, 1, 2)`` and compare to the bound.

    Examples
    --------
    >>> r = tanh_example_analysis([5.0, 5.0, 5.0])
    >>> r.witness.tolist()
    [0.0, 0.0, 0.0, 5.0]
    """
    activation = Activation.parse(activation)
    if activation is Activation.RELU:
        raise ValueError("the chain analysis is for smooth activations")
    t = np.asarray(t, dtype=float).ravel()
    if t.size != 3:
        raise ValueError("the chain example has three samples")
    config = config or default_chain_config()
    spec = NetworkSpec((1, 1, 1), activation)
    bound, y = isotonic_bound(t)
    report = fit(spec, TANH_S, t, config)
    floor = min(float(np.min(tr.loss)) for tr in report.trajectories if len(tr.loss))
    return ChainAnalysis(
        s=TANH_S.ravel().copy(), t=t, bound=bound, bound_minimizer=y,
        best_loss=report.best_loss, best_theta=report.best_theta, best_norm=report.best_norm,
        min_iterate_loss=min(floor, report.best_loss), classification=report.classification,
        witness=chain_witness(t, activation), activation=activation,
        extension=activation is not Activation.TANH)


def epsilon_grid(center, eps: float, grid_points: int) -> np.ndarray:
    """Points of a uniform grid over the closed box ``|t' - center| <= eps``."""
    center = np.asarray(center, dtype=float).ravel()
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if grid_points < 1:
        raise ValueError("grid_points must be >= 1")
    if eps == 0 or grid_points == 1:
        return center[None, :].copy()
    axis = np.linspace(-eps, eps, grid_points)
    return np.array([center + np.array(off) for off in itertools.product(axis, repeat=center.size)])


def epsilon_grid_analysis(center, eps: float, grid_points: int, config: FitConfig | None = None,
                          activation=Activation.TANH) -> list:
    """Analyse every point of the closed ``eps``-box grid around ``center``.

    Points are independent; their results do not depend on grid order.
    """
    points = epsilon_grid(center, eps, grid_points)
    config = config or default_chain_config()
    run = lambda t: tanh_example_analysis(t, config, activation)
    workers = min(_backend.max_workers(), len(points))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, points))
    return [run(t) for t in points]


def suspected_fraction(results) -> float:
    """Fraction of analyses classified SUSPECTED_NON_ATTAINED."""
    if not results:
        return 0.0
    hits = sum(r.classification is AttainmentClass.SUSPECTED_NON_ATTAINED for r in results)
    return hits / len(results)
