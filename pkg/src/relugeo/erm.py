"""Squared-loss empirical risk minimization and attainment diagnostics.

:func:`fit` runs several restarts and keeps the best iterate.  Each restart
uses the kink-aware separable Levenberg-Marquardt solver with basin hopping
on stalls.  Smooth activations then hand over to iRprop+ for the rest of the
budget: near saturation the loss is flat in floating point but the gradient
sign still points along the minimizing sequence.

:func:`classify_attainment` is a heuristic.  A best iterate whose norm is
far above the starting scale and still growing at the end of the budget
suggests that the infimum is not attained.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from relugeo import _backend
from relugeo._lm import KinkAwareLM
from relugeo.core import (Activation, NetworkSpec, ShapeError, activate_deriv,
                          hidden_preactivations, weight_map)
from relugeo.datasets import PAPER_S, PAPER_T


class AttainmentClass(enum.Enum):
    LIKELY_ATTAINED = "LIKELY_ATTAINED"
    SUSPECTED_NON_ATTAINED = "SUSPECTED_NON_ATTAINED"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class FitConfig:
    """Optimizer and classification settings.

    Attributes
    ----------
    restarts, max_iters : restart count and per-restart iteration budget
    init_scale : weights start as N(0, init_scale**2 / fan_in)
    bias_init : "zero" starts biases at 0; "gaussian" draws them like the
        weights, with the bias counted in fan_in (more diverse kink positions);
        "sample" is "gaussian" with about half of the first-layer kink
        hyperplanes moved through randomly chosen samples
    seed : root seed; restart ``r`` uses ``SeedSequence(seed).spawn(restarts)[r]``
    method : "lm" (kink-aware separable LM) or "rprop" (iRprop+ only)
    hops, hop_scale : basin hops per restart and their relative size
    rel_loss_floor : a restart stops once its loss is at most this multiple of
        the constant-fit loss; below it rounding dominates the evidence
    continuation : follow LM with iRprop+ for smooth activations
    rprop_step0, rprop_step_min, rprop_step_max, eta_plus, eta_minus : iRprop+ schedule
    norm_divergence_threshold : norm above which a minimizer counts as escaping;
        ``None`` means 1e3 times the median initial norm
    grad_tol : gradient norm below which a bounded best iterate counts as stationary
    growth_tol : relative norm growth over the final window that counts as growing
    window, min_window : the classifier inspects the trailing ``window``
        fraction of the active iterations, and at least ``min_window`` of them
    min_evidence : budgets below this never produce SUSPECTED_NON_ATTAINED
    norm_cap : optional bound on ``||theta||`` for every iterate
    record_points : trajectories are subsampled to at most this many points
    """

    restarts: int = 20
    max_iters: int = 5000
    init_scale: float = 1.0
    bias_init: str = "zero"
    seed: int = 0
    method: str = "lm"
    hops: int = 5
    hop_scale: float = 1.0
    rel_loss_floor: float = 1e-14
    continuation: bool = True
    rprop_step0: float = 1e-2
    rprop_step_min: float = 1e-12
    rprop_step_max: float = 50.0
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    norm_divergence_threshold: float | None = None
    grad_tol: float = 1e-6
    growth_tol: float = 1e-3
    window: float = 0.1
    min_window: int = 10
    min_evidence: int = 100
    norm_cap: float | None = None
    record_points: int = 1000

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1:
            raise ValueError("restarts and max_iters must be >= 1")
        if self.method not in ("lm", "rprop"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.bias_init not in ("zero", "gaussian", "sample"):
            raise ValueError(f"unknown bias_init {self.bias_init!r}")
        for name in ("init_scale", "hop_scale", "rprop_step0", "rprop_step_min",
                     "rprop_step_max", "eta_plus", "eta_minus", "grad_tol", "growth_tol",
                     "window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.norm_divergence_threshold is not None and not self.norm_divergence_threshold > 0:
            raise ValueError("norm_divergence_threshold must be positive")
        if self.norm_cap is not None and not self.norm_cap > 0:
            raise ValueError("norm_cap must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown FitConfig fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Trajectory:
    """Best-so-far loss and norm of the best iterate, by iteration."""

    iterations: np.ndarray
    loss: np.ndarray
    norm: np.ndarray


@dataclass
class FitReport:
    spec: NetworkSpec
    best_loss: float
    best_theta: np.ndarray
    best_restart: int
    restart_losses: list
    iterations: list
    initial_norms: list
    trajectories: list
    grad_norm: float
    threshold: float
    seed: int
    best_trajectory: Trajectory = None
    saturated_units: int = 0
    loss_floor: float = 0.0
    classification: AttainmentClass = AttainmentClass.INCONCLUSIVE
    heuristic: bool = field(default=True)

    @property
    def best_norm(self) -> float:
        return float(np.linalg.norm(self.best_theta))

    @property
    def iterations_used(self) -> int:
        return int(sum(self.iterations))


def baseline_loss(T) -> float:
    """Squared loss of the best constant fit (the column means).

    Examples
    --------
    >>> baseline_loss([[0.0], [2.0], [1.0]])
    2.0
    """
    T = np.array(T, dtype=float, ndmin=2)
    R = T - T.mean(axis=0)
    return float(np.sum(R * R))


def squared_loss(spec, theta, S, T) -> float:
    R = weight_map(spec, theta, S) - T
    val = float(np.sum(R * R))
    return val if np.isfinite(val) else np.inf


def _baseline_theta(spec, T) -> np.ndarray:
    theta = np.zeros(spec.param_count)
    theta[-spec.q:] = T.mean(axis=0)
    return theta


def _init_theta(spec, rng, scale, bias_init="zero", S=None) -> np.ndarray:
    parts = []
    for rows, cols in spec.layer_shapes():
        if bias_init in ("gaussian", "sample"):
            # The bias is a weight on a constant input, so fan_in counts it.
            W = rng.normal(size=(rows, cols + 1)) * scale / np.sqrt(cols + 1)
            parts.append(W[:, :cols].ravel())
            parts.append(W[:, cols])
        else:
            parts.append(rng.normal(size=rows * cols) * scale / np.sqrt(cols))
            parts.append(np.zeros(rows))
    theta = np.concatenate(parts)
    if bias_init == "sample" and S is not None and spec.depth > 1:
        _anchor_first_layer(spec, theta, S, rng, scale)
    return theta


def _anchor_first_layer(spec, theta, S, rng, scale, offset=0.1):
    """Put about half of the first-layer kinks through ``p`` random samples.

    Boundary solutions of ReLU least squares often have kink hyperplanes
    through samples; Gaussian starts rarely land near them.
    """
    rows, cols = spec.layer_shapes()[0]
    M = np.hstack([S, np.ones((S.shape[0], 1))])
    for u in range(rows):
        if rng.random() < 0.5:
            continue
        J = rng.choice(S.shape[0], size=min(cols, S.shape[0]), replace=False)
        N = scipy.linalg.null_space(M[J])
        if N.shape[1] == 0:
            continue
        w = N @ rng.normal(size=N.shape[1])
        w *= scale / np.linalg.norm(w)
        w[-1] += offset * rng.normal() * np.linalg.norm(w[:-1])
        theta[u * cols:(u + 1) * cols] = w[:-1]
        theta[rows * cols + u] = w[-1]


class _Recorder:
    """Best-so-far loss and best-iterate norm, one entry per iteration."""

    def __init__(self):
        self.loss = []
        self.norm = []
        self.best = np.inf
        self.best_theta = None
        self._running = (np.inf, 0.0)

    def offer(self, theta, L):
        if L <= self.best:
            self.best = L
            self.best_theta = np.array(theta, dtype=float)

    def extend(self, losses, norms):
        for L, nrm in zip(losses, norms):
            if L <= self._running[0]:
                self._running = (float(L), float(nrm))
            self.loss.append(self._running[0])
            self.norm.append(self._running[1])


def _run_restart(spec, S, T, config, seed_seq):
    rng = np.random.default_rng(seed_seq)
    theta0 = _init_theta(spec, rng, config.init_scale, config.bias_init, S)
    init_norm = float(np.linalg.norm(theta0))
    widths = np.asarray(spec.widths, dtype=np.intp)
    code = spec.activation.code
    rec = _Recorder()
    used = 0
    floor = config.rel_loss_floor * baseline_loss(T)
    if config.method == "lm":
        # Accelerations only for ReLU: on saturating activations they jump
        # straight to the floating-point floor and leave no trajectory to read.
        relu = spec.activation is Activation.RELU
        solver = KinkAwareLM(spec, S, T, norm_cap=config.norm_cap,
                             extrapolate_every=10 if relu else 0, line_search=relu,
                             max_growth=None if relu else 1.0)
        hop_floor = 1e-12 * (1.0 + baseline_loss(T))
        start = theta0
        hops = 0
        while used < config.max_iters:
            try:
                theta, L, n_used, stalled, losses, norms = solver.run(
                    start, config.max_iters - used, floor)
            except FloatingPointError:
                break
            used += n_used
            rec.extend(losses, norms)
            rec.offer(theta, L)
            if not stalled or rec.best <= hop_floor or hops >= config.hops:
                break
            hops += 1
            best = rec.best_theta
            top = float(np.max(np.abs(best)))
            scale = config.hop_scale * top * np.sqrt(np.mean((best / max(top, 1e-300)) ** 2))
            start = best + scale * rng.normal(size=best.size)
            if not np.all(np.isfinite(start)):
                break
            if config.norm_cap is not None:
                nrm = np.linalg.norm(start)
                if nrm > config.norm_cap:
                    start *= config.norm_cap / nrm
        smooth = spec.activation is not Activation.RELU
        continue_rprop = config.continuation and smooth and config.norm_cap is None
        start = rec.best_theta if rec.best_theta is not None else theta0
    else:
        continue_rprop = True
        start = theta0
    remaining = config.max_iters - used
    if continue_rprop and remaining > 0 and rec.best > floor:
        best, best_loss, rl, rn = _backend.kernels.rprop(
            np.ascontiguousarray(start, dtype=float), widths, code, S, T, remaining,
            config.rprop_step0, config.rprop_step_min, config.rprop_step_max,
            config.eta_plus, config.eta_minus, 1)
        rec.extend(rl, rn)
        rec.offer(best, best_loss)
        used += remaining
    if rec.best_theta is None:
        rec.offer(theta0, squared_loss(spec, theta0, S, T))
    return rec, used, init_norm


def _subsample(values, k):
    values = np.asarray(values, dtype=float)
    if values.size <= k:
        return np.arange(values.size), values
    idx = np.unique(np.linspace(0, values.size - 1, k).round().astype(int))
    return idx, values[idx]


def fit(spec: NetworkSpec, S, T, config: FitConfig | None = None) -> FitReport:
    """Minimize ``||T - psi(theta)||_F^2`` over the weights.

    Restarts are independent and seeded from ``SeedSequence(config.seed)``;
    the result is deterministic given the seed and restart count.  The best
    restart is the one with the smallest loss (lowest index on ties).  Losses
    at or below ``rel_loss_floor`` times the constant-fit loss all count as
    ties, broken by the smaller weight norm.  The constant fit is used
    instead if it is strictly better.
    """
    config = config or FitConfig()
    S = np.array(S, dtype=float, ndmin=2)
    T = np.array(T, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if S.shape[1] != spec.p:
        raise ShapeError(f"S has {S.shape[1]} columns, network expects p={spec.p}")
    if T.shape != (S.shape[0], spec.q):
        raise ShapeError(f"T has shape {T.shape}, expected ({S.shape[0]}, {spec.q})")
    S = np.ascontiguousarray(S)
    T = np.ascontiguousarray(T)
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    workers = min(_backend.max_workers(), config.restarts)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda s: _run_restart(spec, S, T, config, s), seeds))
    else:
        results = [_run_restart(spec, S, T, config, s) for s in seeds]

    losses = [squared_loss(spec, rec.best_theta, S, T) for rec, _, _ in results]
    best_restart = int(np.argmin(losses))
    floor = config.rel_loss_floor * baseline_loss(T)
    at_floor = [i for i, L in enumerate(losses) if L <= floor]
    if at_floor:
        # Losses at the floor are zero to working precision; prefer small weights.
        norms = [float(np.linalg.norm(results[i][0].best_theta)) for i in at_floor]
        best_restart = at_floor[int(np.argmin(norms))]
    best_theta = results[best_restart][0].best_theta
    best_loss = losses[best_restart]
    base = _baseline_theta(spec, T)
    base_loss = squared_loss(spec, base, S, T)
    if base_loss < best_loss:
        best_theta, best_loss = base, base_loss

    trajectories = []
    for rec, _, _ in results:
        idx, lo = _subsample(rec.loss, config.record_points)
        _, no = _subsample(rec.norm, config.record_points)
        trajectories.append(Trajectory(idx, lo, no))
    init_norms = [r[2] for r in results]
    threshold = config.norm_divergence_threshold
    if threshold is None:
        threshold = 1e3 * float(np.median(init_norms))
    _, grad = _backend.kernels.loss_grad(np.ascontiguousarray(best_theta), np.asarray(
        spec.widths, dtype=np.intp), spec.activation.code, S, T)
    report = FitReport(
        spec=spec, best_loss=best_loss, best_theta=np.array(best_theta),
        best_restart=best_restart, restart_losses=losses,
        iterations=[r[1] for r in results], initial_norms=init_norms,
        trajectories=trajectories, grad_norm=float(np.linalg.norm(grad)),
        threshold=float(threshold), seed=config.seed)
    report.saturated_units = saturated_units(spec, best_theta, S)
    report.loss_floor = floor
    full = results[best_restart][0]
    report.best_trajectory = Trajectory(np.arange(len(full.loss)), np.asarray(full.loss),
                                        np.asarray(full.norm))
    report.classification = classify_attainment(report, config)
    return report


def saturated_units(spec, theta, S) -> int:
    """Hidden units whose activation derivative vanishes to working precision
    on every sample.  Always 0 for ReLU.

    Such a unit acts as a step function; its incoming weights can still grow
    toward a limit but the gradient no longer shows it.
    """
    if spec.activation is Activation.RELU or spec.depth < 2:
        return 0
    count = 0
    for Z in hidden_preactivations(spec, theta, S):
        D = activate_deriv(spec.activation, Z)
        count += int(np.sum(np.all(D <= np.finfo(float).eps, axis=0)))
    return count


def classify_attainment(report: FitReport, config: FitConfig | None = None) -> AttainmentClass:
    """Heuristic attainment verdict for a finished fit.

    * LIKELY_ATTAINED: gradient norm at the best iterate at most ``grad_tol``
      and ``||theta_best||`` at most the threshold.
    * SUSPECTED_NON_ATTAINED: ``||theta_best||`` above the threshold, the
      best restart's best-so-far norm grew by at least ``growth_tol``
      (relative) over the final ``window`` of its iterations while its
      best-so-far loss did not increase, and the budget was at least
      ``min_evidence`` iterations.  Iterations after the last strict
      visible change of the best iterate are ignored.  For smooth
      activations, ``||theta_best||`` above the threshold with a hidden unit
      saturated on every sample and the loss above the floating-point floor
      also counts: the growth is real but below working precision.
    * INCONCLUSIVE otherwise.
    """
    config = config or FitConfig()
    nrm = report.best_norm
    if report.grad_norm <= config.grad_tol and nrm <= report.threshold:
        return AttainmentClass.LIKELY_ATTAINED
    if nrm <= report.threshold or config.max_iters < config.min_evidence:
        return AttainmentClass.INCONCLUSIVE
    if report.saturated_units and report.best_loss > report.loss_floor:
        return AttainmentClass.SUSPECTED_NON_ATTAINED
    traj = report.best_trajectory
    if traj is None:
        traj = report.trajectories[report.best_restart]
    it, loss, norm = _active_part(traj)
    if len(norm) < 2:
        return AttainmentClass.INCONCLUSIVE
    span = it[-1] - it[0]
    first = it[-1] - max(np.ceil(config.window * span), config.min_window)
    start = min(int(np.searchsorted(it, first)), len(norm) - 2)
    n0, n1 = norm[start], norm[-1]
    grew = n1 - n0 >= config.growth_tol * max(n1, 1e-300)
    if grew and loss[-1] <= loss[start]:
        return AttainmentClass.SUSPECTED_NON_ATTAINED
    return AttainmentClass.INCONCLUSIVE


def _active_part(traj):
    """Trajectory up to the last visible change of the best iterate.

    Once the loss sits at the floating-point floor, further iterations
    leave the best iterate unchanged or improve the loss only in its last
    digits; the window is measured before that point.
    """
    loss = np.asarray(traj.loss)
    norm = np.asarray(traj.norm)
    moved = np.abs(norm[1:] - norm[:-1]) > 1e-9 * np.abs(norm[1:])
    # Relative loss gains below 1e-10 are rounding-level polishing.
    gained = loss[1:] < loss[:-1] * (1.0 - 1e-10)
    changed = np.flatnonzero(gained | moved)
    end = int(changed[-1]) + 2 if changed.size else 1
    return np.asarray(traj.iterations)[:end], loss[:end], norm[:end]


def replicate_nonclosed_sequence(k_values, S=None, T=None) -> list:
    """Distances and norms along the diverging two-layer ReLU sequence.

    ``theta_k = ([[-1, 2k+1], [1, k-1]], 0, [[1, -2], [0, 1/k]], 0)`` on the
    built-in 6 x 2 sample and response, for which ``||T - psi(theta_k)||_F``
    equals ``sqrt(5) / k``.

    Returns
    -------
    list of (k, distance, norm)
    """
    S = PAPER_S if S is None else np.asarray(S, dtype=float)
    T = PAPER_T if T is None else np.asarray(T, dtype=float)
    spec = NetworkSpec((2, 2, 2), Activation.RELU)
    out = []
    for k in k_values:
        k = int(k)
        if k < 1:
            raise ValueError("k must be >= 1")
        theta = nonclosed_theta(k)
        R = weight_map(spec, theta, S) - T
        out.append((k, float(np.sqrt(np.sum(R * R))), float(np.linalg.norm(theta))))
    return out


def nonclosed_theta(k: int) -> np.ndarray:
    """Flat weights of the k-th member of the diverging sequence."""
    k = float(k)
    return np.array([-1.0, 2.0 * k + 1.0, 1.0, k - 1.0, 0.0, 0.0,
                     1.0, -2.0, 0.0, 1.0 / k, 0.0, 0.0])
