"""The ReLU cone of a sample matrix: dimension, membership and faces.

The ReLU cone of ``S`` is the set of vectors ``relu(S a + b 1)`` over all
affine parameters ``(a, b)``.  Its face ``F_I`` collects the members whose
strictly positive coordinates are exactly ``I``.  Index sets are 0-based.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from relugeo.linfeas import LinearSystem, numerical_rank, solve_feasibility

DEFAULT_CAP = 16


class EnumerationCapError(ValueError):
    """Raised when a face enumeration would exceed the sample cap."""


class NotRealizableError(ValueError):
    """Raised when an index set is not the support pattern of any face."""


@dataclass(frozen=True)
class ConeFace:
    """A realizable support pattern with a strictly feasible witness."""

    index_set: frozenset
    dimension: int
    a: np.ndarray
    b: float


@dataclass(frozen=True)
class FaceDecomposition:
    faces: tuple

    @property
    def index_sets(self) -> list:
        return [f.index_set for f in self.faces]

    def __len__(self):
        return len(self.faces)


@dataclass(frozen=True)
class ConeMembership:
    member: bool
    a: np.ndarray = None
    b: float = None
    residual: float = None
    support: frozenset = None


def augmented(S) -> np.ndarray:
    """The n x (p+1) matrix ``[S, 1]``."""
    S = np.array(S, dtype=float, ndmin=2)
    return np.hstack([S, np.ones((S.shape[0], 1))])


def cone_dim(S, rel_tol: float = 1e-8) -> int:
    """Dimension of the ReLU cone, the numerical rank of ``[S, 1]``."""
    return numerical_rank(augmented(S), rel_tol)


def default_support_tol(x) -> float:
    return 1e-9 * (1.0 + float(np.max(np.abs(x), initial=0.0)))


def cone_membership(S, x, tol: float | None = None) -> ConeMembership:
    """Decide whether ``x`` lies in the ReLU cone of ``S``.

    Coordinates above ``tol`` form the support; the witness ``(a, b)``
    satisfies ``S_i a + b = x_i`` on the support and ``<= 0`` elsewhere.
    """
    M = augmented(S)
    x = np.asarray(x, dtype=float).ravel()
    if x.size != M.shape[0]:
        raise ValueError(f"x has length {x.size}, S has {M.shape[0]} rows")
    if tol is None:
        tol = default_support_tol(x)
    if np.any(x < -tol):
        return ConeMembership(False)
    supp = x > tol
    system = LinearSystem(M.shape[1], E=M[supp], f=x[supp], G=M[~supp], h=np.zeros(int((~supp).sum())))
    res = solve_feasibility(system, tol)
    if not res.feasible:
        return ConeMembership(False, support=frozenset(np.flatnonzero(supp).tolist()))
    w = res.witness
    recon = np.maximum(M @ w, 0.0)
    return ConeMembership(True, w[:-1], float(w[-1]), float(np.max(np.abs(recon - x))),
                          frozenset(np.flatnonzero(supp).tolist()))


def _pattern_system(M, inside, extra_rows=None, extra_rhs=None) -> LinearSystem:
    """``M_i w >= 1`` for ``i`` inside, ``M_j w <= 0`` otherwise, plus extras."""
    inside = np.asarray(inside, dtype=bool)
    G = np.vstack([-M[inside], M[~inside]])
    h = np.concatenate([-np.ones(int(inside.sum())), np.zeros(int((~inside).sum()))])
    if extra_rows is not None:
        G = np.vstack([G, extra_rows])
        h = np.concatenate([h, extra_rhs])
    return LinearSystem(M.shape[1], G=G, h=h)


def pattern_witness(S, index_set, tol: float = 1e-9):
    """Strict witness ``(a, b)`` for ``index_set`` or ``None`` if not realizable."""
    M = augmented(S)
    inside = np.zeros(M.shape[0], dtype=bool)
    inside[list(index_set)] = True
    res = solve_feasibility(_pattern_system(M, inside), tol)
    if not res.feasible:
        return None
    return res.witness[:-1], float(res.witness[-1])


def _row_groups(M):
    """Group identical rows; returns a list of index arrays."""
    _, inverse = np.unique(M, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    return [np.flatnonzero(inverse == g) for g in range(inverse.max() + 1)]


def enumerate_faces(S, cap: int = DEFAULT_CAP, with_dims: bool = True) -> FaceDecomposition:
    """All realizable strict support patterns of the ReLU cone.

    Breadth-first search over the chambers of the central arrangement
    ``{(a, b) : s_i a + b = 0}`` starting from ``(a, b) = (0, 1)``; adjacent
    chambers differ by flipping one group of identical samples.  Every
    realizable pattern is the positive set of some chamber.
    """
    M = augmented(S)
    n = M.shape[0]
    if n > cap:
        raise EnumerationCapError(f"n={n} exceeds the enumeration cap {cap}")
    groups = _row_groups(M)
    start = frozenset(range(n))
    seen = {start: (np.zeros(M.shape[1] - 1), 1.0)}
    queue = deque([start])
    while queue:
        current = queue.popleft()
        for g in groups:
            if g[0] in current:
                nxt = current.difference(g.tolist())
            else:
                nxt = current.union(g.tolist())
            if nxt in seen:
                continue
            wit = pattern_witness(S, nxt)
            if wit is not None:
                seen[nxt] = wit
                queue.append(nxt)
    order = sorted(seen, key=lambda I: (len(I), sorted(I)))
    faces = []
    for I in order:
        a, b = seen[I]
        dim = face_dim(S, I) if with_dims else -1
        faces.append(ConeFace(I, dim, np.asarray(a), b))
    return FaceDecomposition(tuple(faces))


def face_dim(S, index_set, rel_tol: float = 1e-8, tol: float = 1e-9) -> int:
    """Dimension of the linear span of the face ``F_I``.

    Off-support constraints that hold with equality on every strict witness
    are detected one by one; the span is the image of their common null
    space under ``[S_I, 1]``.
    """
    M = augmented(S)
    n = M.shape[0]
    I = sorted(set(int(i) for i in index_set))
    if any(i < 0 or i >= n for i in I):
        raise NotRealizableError(f"index set {I} out of range for n={n}")
    inside = np.zeros(n, dtype=bool)
    inside[I] = True
    if not solve_feasibility(_pattern_system(M, inside), tol).feasible:
        raise NotRealizableError(f"index set {I} is not realizable")
    if not I:
        return 0
    implicit = []
    for j in np.flatnonzero(~inside):
        probe = _pattern_system(M, inside, M[j][None, :], np.array([-1.0]))
        if not solve_feasibility(probe, tol).feasible:
            implicit.append(j)
    if implicit:
        N = scipy.linalg.null_space(M[implicit])
        if N.shape[1] == 0:
            return 0
        return numerical_rank(M[inside] @ N, rel_tol)
    return numerical_rank(M[inside], rel_tol)


def threshold_shift(x, k: int) -> float:
    """Shift ``lam`` such that ``relu(x - lam)`` is supported on the k largest entries.

    For ``k < n`` the midpoint between the relevant order statistics is
    returned; for ``k = n`` the result is ``min(x) - 1``.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    xs = np.sort(x)
    if np.any(np.diff(xs) == 0):
        raise ValueError("entries of x must be pairwise distinct")
    if k == n:
        return float(xs[0] - 1.0)
    return float(0.5 * (xs[n - k - 1] + xs[n - k]))
