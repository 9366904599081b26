"""Membership, distance and dimension for the image of two-layer networks.

For a two-layer ReLU network with ``d`` hidden units and one output, the
image of the weight map is

    { sum_i c_i relu(S a_i + b_i 1) + lam 1 }.

By positive homogeneity ``c relu(u) = sign(c) relu(|c| u)``, so each unit
contributes ``eps_i y_i`` with ``eps_i`` in {-1, 0, +1} and ``y_i`` in the
ReLU cone.  Fixing for every unit the set ``I_i`` of samples where it is
active turns the image into a finite union of polyhedral cones plus the line
spanned by ``1``.  Exact membership and distance are decided pattern by
pattern.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import nnls

from relugeo.cone import DEFAULT_CAP, EnumerationCapError, augmented, cone_dim, enumerate_faces
from relugeo.core import Activation, KinkError, NetworkSpec, jacobian, weight_map
from relugeo.linfeas import LinearSystem, numerical_rank, solve_feasibility


class Verdict(enum.Enum):
    MEMBER = "MEMBER"
    NON_MEMBER = "NON_MEMBER"
    MEMBER_NUMERIC = "MEMBER_NUMERIC"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class PatternAssignment:
    """Per hidden unit an index set (0-based) and a sign in {-1, 0, +1}."""

    units: tuple

    @property
    def support_size(self) -> int:
        return sum(len(I) for I, eps in self.units if eps != 0)

    def to_list(self) -> list:
        return [[sorted(int(i) for i in I), int(eps)] for I, eps in self.units]


@dataclass
class MembershipCertificate:
    verdict: Verdict
    theta: np.ndarray = None
    lam: float = None
    pattern: PatternAssignment = None
    residual: float = None
    path: str = "exact"
    patterns_tried: int = 0

    @property
    def member(self) -> bool:
        return self.verdict in (Verdict.MEMBER, Verdict.MEMBER_NUMERIC)


@dataclass
class DimensionReport:
    theoretical_upper: int
    generic_formula: int | None
    numerical_rank_max: int
    trials: int
    seed: int
    histogram: dict = field(default_factory=dict)
    skipped: int = 0
    generic_heuristic: bool = False


# -- pattern enumeration -------------------------------------------------------


def _unit_options(S, cap):
    """Nonzero ``(I, eps)`` options, smallest supports first, ``+`` before ``-``."""
    faces = enumerate_faces(S, cap=cap, with_dims=False)
    sets = [f.index_set for f in faces.faces if f.index_set]
    return [(I, eps) for I in sets for eps in (1, -1)]


def _assignments(options, d):
    """Assignments of at most ``d`` distinct options, in search order.

    Two units with the same option add up to one unit with that option (the
    closed face is a convex cone), and unit order is irrelevant, so subsets
    of distinct options cover every assignment.
    """
    combos = []
    for k in range(min(d, len(options)) + 1):
        combos.extend(itertools.combinations(range(len(options)), k))

    def key(c):
        return (sum(len(options[i][0]) for i in c), tuple(-options[i][1] for i in c), c)

    for c in sorted(combos, key=key):
        yield [options[i] for i in c]


def _pad(units, d):
    units = list(units)
    while len(units) < d:
        units.append((frozenset(), 0))
    return PatternAssignment(tuple(units))


def _theta_2layer(p, d, a, b, eps, lam):
    """Flat weights of a (p, d, 1) network from per-unit ``(a_i, b_i, eps_i)``."""
    A1 = np.zeros((d, p))
    b1 = np.zeros(d)
    c = np.zeros(d)
    for i in range(len(a)):
        A1[i] = a[i]
        b1[i] = b[i]
        c[i] = eps[i]
    return np.concatenate([A1.ravel(), b1, c, [lam]])


# -- exact q = 1 membership ----------------------------------------------------


def _pattern_lp(M, t, units):
    """Linear system in ``(a_1, b_1, ..., a_k, b_k, lam)`` for one assignment."""
    n, r = M.shape
    k = len(units)
    v = k * r + 1
    E = np.zeros((n, v))
    E[:, -1] = 1.0
    G = []
    for u, (I, eps) in enumerate(units):
        inside = np.zeros(n, dtype=bool)
        inside[list(I)] = True
        E[inside, u * r:(u + 1) * r] = eps * M[inside]
        block = np.zeros((n, v))
        block[:, u * r:(u + 1) * r] = np.where(inside[:, None], -M, M)
        G.append(block)
    G = np.vstack(G) if G else np.zeros((0, v))
    return LinearSystem(v, E=E, f=t, G=G, h=np.zeros(G.shape[0]))


def membership_2layer_q1(S, t, d: int, tol: float = 1e-9,
                         cap: int = DEFAULT_CAP) -> MembershipCertificate:
    """Exact membership of ``t`` in the image of a (p, d, 1) ReLU network.

    Assignments are searched by total support size, ``+`` before ``-``; the
    first feasible one gives a witness.  NON_MEMBER is returned only after
    every assignment was refuted.

    Raises
    ------
    EnumerationCapError
        When ``n`` exceeds ``cap``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    M = augmented(S)
    n, r = M.shape
    p = r - 1
    t = np.asarray(t, dtype=float).ravel()
    if t.size != n:
        raise ValueError(f"t has length {t.size}, S has {n} rows")
    if n > cap:
        raise EnumerationCapError(f"n={n} exceeds the enumeration cap {cap}")
    scale = 1.0 + float(np.max(np.abs(t), initial=0.0))
    lp_tol = tol * scale
    options = _unit_options(S, cap)
    spec = NetworkSpec((p, d, 1), Activation.RELU)
    tried = 0
    for units in _assignments(options, d):
        tried += 1
        res = solve_feasibility(_pattern_lp(M, t, units), lp_tol)
        if not res.feasible:
            continue
        x = res.witness
        a = [x[u * r:u * r + p] for u in range(len(units))]
        b = [x[u * r + p] for u in range(len(units))]
        eps = [e for _, e in units]
        theta = _theta_2layer(p, d, a, b, eps, x[-1])
        resid = float(np.max(np.abs(weight_map(spec, theta, np.asarray(S, dtype=float))[:, 0] - t)))
        return MembershipCertificate(Verdict.MEMBER, theta, float(x[-1]), _pad(units, d),
                                     resid, "exact", tried)
    return MembershipCertificate(Verdict.NON_MEMBER, pattern=None, path="exact",
                                 patterns_tried=tried)


# -- exact q = 1 distance ------------------------------------------------------


def _extreme_rays(M, I, rel_tol=1e-10):
    """Extreme rays of ``{w in col(M) : w_I >= 0, w_rest <= 0}``."""
    n = M.shape[0]
    U, sv, _ = np.linalg.svd(M, full_matrices=False)
    rank = int(np.sum(sv > rel_tol * max(sv[0], 1e-300))) if sv.size else 0
    Q = U[:, :rank]
    sign = -np.ones(n)
    sign[list(I)] = 1.0
    rays = []
    for J in itertools.combinations(range(n), rank - 1):
        N = scipy.linalg.null_space(Q[list(J)]) if J else np.eye(rank)
        if N.shape[1] != 1:
            continue
        w = Q @ N[:, 0]
        w[np.abs(w) < 1e-12] = 0.0
        for cand in (w, -w):
            if np.all(sign * cand >= 0) and np.any(cand != 0):
                cand = cand / np.linalg.norm(cand)
                if not any(np.allclose(cand, ray, atol=1e-10) for ray in rays):
                    rays.append(cand)
    return rays


def _cone_projection(G, v, ridge: float = 1e-10) -> np.ndarray:
    """Coefficients ``c >= 0`` minimizing ``||G c - v||``.

    After centering, generators can be positively dependent (the constant
    vector may lie in a cone), so the solution set is unbounded.  Columns
    are normalized and a tiny ridge picks a bounded minimizer; without it
    NNLS drifts to huge coefficients and misreports its residual.
    """
    norms = np.linalg.norm(G, axis=0)
    live = norms > 1e-12
    c = np.zeros(G.shape[1])
    if not live.any():
        return c
    Gn = G[:, live] / norms[live]
    k = Gn.shape[1]
    A = np.vstack([Gn, np.sqrt(ridge) * np.eye(k)])
    x, _ = nnls(A, np.concatenate([v, np.zeros(k)]), maxiter=50 * k + 100)
    c[live] = x / norms[live]
    return c


@dataclass
class DistanceResult:
    distance: float
    nearest: np.ndarray
    pattern: PatternAssignment
    theta: np.ndarray
    lam: float


def fit_distance_2layer_q1(S, t, d: int, tol: float = 1e-9,
                           cap: int = DEFAULT_CAP) -> DistanceResult:
    """Euclidean distance from ``t`` to the image of a (p, d, 1) ReLU network.

    For a fixed assignment the reachable set is the polyhedral cone spanned
    by ``eps_i D_I w`` over the extreme rays ``w`` of each unit's closed
    sign region of ``col([S, 1])``, plus the line through ``1``.  The
    distance to it is a nonnegative least-squares problem; the image is the
    finite union over assignments, so the minimum is attained.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    M = augmented(S)
    n, r = M.shape
    p = r - 1
    t = np.asarray(t, dtype=float).ravel()
    if t.size != n:
        raise ValueError(f"t has length {t.size}, S has {n} rows")
    if n > cap:
        raise EnumerationCapError(f"n={n} exceeds the enumeration cap {cap}")
    options = _unit_options(S, cap)
    rays = {}
    masks = {}
    for I, _ in options:
        if I not in rays:
            rays[I] = _extreme_rays(M, I)
            masks[I] = np.zeros(n)
            masks[I][list(I)] = 1.0
    Pt = t - t.mean()
    best = None
    for units in _assignments(options, d):
        gens, owner = [], []
        for u, (I, eps) in enumerate(units):
            for k, w in enumerate(rays[I]):
                gens.append(eps * masks[I] * w)
                owner.append((u, k))
        if gens:
            Gm = np.array(gens).T
            c = _cone_projection(Gm - Gm.mean(axis=0), Pt)
            y = Gm @ c
            res = float(np.linalg.norm((Gm - Gm.mean(axis=0)) @ c - Pt))
        else:
            c, y = np.zeros(0), np.zeros(n)
            res = float(np.linalg.norm(Pt))
        if best is None or res < best[0] - tol:
            best = (res, units, c, owner, y)
        if best[0] <= tol:
            break
    _, units, c, owner, y = best
    lam = float(np.mean(t - y))
    a, b, eps = [], [], []
    for u, (I, e) in enumerate(units):
        # The unit's pre-activation w lies in col([S, 1]); recover (a, b) from it.
        w = np.zeros(n)
        for ck, (uu, k) in zip(c, owner):
            if uu == u:
                w += ck * rays[I][k]
        coef = scipy.linalg.lstsq(M, w, lapack_driver="gelsy")[0]
        a.append(coef[:p])
        b.append(coef[p])
        eps.append(e)
    theta = _theta_2layer(p, d, a, b, eps, lam)
    nearest = y + lam
    return DistanceResult(float(np.linalg.norm(t - nearest)), nearest, _pad(units, d), theta, lam)


# -- numeric membership for several outputs ------------------------------------


def membership_2layer_general(S, T, d: int, config=None, tol: float = 1e-7) -> MembershipCertificate:
    """Numeric membership of ``T`` in the image of a (p, d, q) ReLU network.

    The output layer is eliminated by least squares and the hidden layer is
    optimized by the kink-aware solver under the norm cap of ``config``.
    MEMBER_NUMERIC when the Frobenius residual reaches ``tol``, INCONCLUSIVE
    otherwise; a numeric search never certifies non-membership.
    """
    from relugeo.erm import FitConfig, fit

    S = np.array(S, dtype=float, ndmin=2)
    T = np.array(T, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if config is None:
        config = FitConfig(restarts=8, max_iters=2000, norm_cap=1e3)
    spec = NetworkSpec((S.shape[1], d, T.shape[1]), Activation.RELU)
    report = fit(spec, S, T, config)
    resid = float(np.sqrt(report.best_loss))
    verdict = Verdict.MEMBER_NUMERIC if resid <= tol else Verdict.INCONCLUSIVE
    return MembershipCertificate(verdict, report.best_theta, float(report.best_theta[-1]),
                                 None, resid, "numeric", config.restarts)


# -- dimension -------------------------------------------------------------------


def dim_upper_bound(S, d: int, q: int = 1) -> int:
    """Upper bound on the dimension of the (p, d, q) ReLU image on ``S``.

    ``d * rk[S, 1] + 1`` for one output, ``(q + rk[S, 1]) * d + q`` otherwise.
    """
    r = cone_dim(S)
    if q == 1:
        return d * r + 1
    return (q + r) * d + q


def generic_dim_2layer(p: int, d: int, q: int, n: int):
    """Generic image dimension for large ``n``, or ``None`` when ``n`` is too small.

    ``d (p + 1) + 1`` for one output once ``n >= d (p + 1) + 1``.  For several
    outputs ``(p + q + 1) d + q`` once ``n`` reaches that value; that
    threshold is a heuristic (see :func:`generic_dim_is_heuristic`).
    """
    if q == 1:
        val = d * (p + 1) + 1
    else:
        val = (p + q + 1) * d + q
    return val if n >= val else None


def generic_dim_is_heuristic(q: int) -> bool:
    return q > 1


def numerical_image_dim(spec: NetworkSpec, S, trials: int = 20, seed: int = 0,
                        rel_tol: float = 1e-8) -> DimensionReport:
    """Largest numerical Jacobian rank of the weight map over random weights.

    Draws with a hidden pre-activation exactly at a ReLU kink are skipped.

    Raises
    ------
    ValueError
        When every draw touches a kink.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    S = np.array(S, dtype=float, ndmin=2)
    rng = np.random.default_rng(seed)
    hist = {}
    skipped = 0
    for _ in range(trials):
        theta = rng.normal(size=spec.param_count)
        try:
            J = jacobian(spec, theta, S)
        except KinkError:
            skipped += 1
            continue
        rk = numerical_rank(J, rel_tol)
        hist[rk] = hist.get(rk, 0) + 1
    if not hist:
        raise ValueError("every draw touched a ReLU kink; the sample is pathological")
    n, q = S.shape[0], spec.q
    upper = min(spec.param_count, n * q)
    generic = None
    heuristic = False
    if spec.depth == 2 and spec.activation is Activation.RELU:
        d = spec.widths[1]
        upper = min(upper, dim_upper_bound(S, d, q))
        generic = generic_dim_2layer(spec.p, d, q, n)
        heuristic = generic is not None and generic_dim_is_heuristic(q)
    return DimensionReport(upper, generic, max(hist), trials, seed,
                           dict(sorted(hist.items())), skipped, heuristic)


def generate_monotone_sample(n: int, p: int = 1, seed: int = 0) -> np.ndarray:
    """Random n x p sample whose columns are strictly increasing."""
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(seed)
    while True:
        S = np.sort(rng.normal(size=(n, p)), axis=0)
        if np.all(np.diff(S, axis=0) > 0):
            return S


# -- deep one-wide chains ----------------------------------------------------------


def _clip_affine(s, x, tol):
    """Is ``x = clip(alpha s + beta, x[0], x[-1])`` for some ``alpha >= 0``?"""
    lo, hi = x[0], x[-1]
    if np.any(np.diff(x) < -tol):
        return False
    if hi - lo <= tol:
        return bool(np.all(np.abs(x - lo) <= tol))
    E, f, G, h = [], [], [], []
    for sj, xj in zip(s, x):
        if xj <= lo + tol:
            G.append([sj, 1.0])
            h.append(lo)
        elif xj >= hi - tol:
            G.append([-sj, -1.0])
            h.append(-hi)
        else:
            E.append([sj, 1.0])
            f.append(xj)
    G.append([-1.0, 0.0])
    h.append(0.0)
    system = LinearSystem(2, E=E if E else None, f=f if f else None, G=G, h=h)
    return solve_feasibility(system, tol).feasible


def deep_chain_orientation(s, x, tol: float = 1e-9):
    """``"ascending"``, ``"descending"`` or ``None`` for a one-wide deep chain.

    ``x`` lies in the image of a one-wide ReLU chain of depth at least 3 on
    the sorted sample ``s`` iff it is an affine image of a clipped affine
    function of ``s``.  Both slope signs are accepted.
    """
    s = np.asarray(s, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if s.size != x.size:
        raise ValueError("s and x must have the same length")
    if np.any(np.diff(s) < 0):
        raise ValueError("s must be sorted in nondecreasing order")
    tol = tol * (1.0 + float(np.max(np.abs(x), initial=0.0)))
    if _clip_affine(s, x, tol):
        return "ascending"
    if _clip_affine(s, -x, tol):
        return "descending"
    return None


def deep_chain_membership(s, x, tol: float = 1e-9) -> bool:
    """Whether ``x`` is reachable by a one-wide ReLU chain on sorted ``s``."""
    return deep_chain_orientation(s, x, tol) is not None
