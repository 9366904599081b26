"""Dense linear feasibility, least squares and numerical rank.

Feasibility uses a phase-1 simplex on a tableau with Bland's rule.  Strict
inequalities are not representable; callers on homogeneous systems encode
``g x > 0`` as ``g x >= 1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class Status(enum.Enum):
    FEASIBLE = "FEASIBLE"
    INFEASIBLE = "INFEASIBLE"


class IllConditionedError(ArithmeticError):
    """The simplex found a basis but its witness violates the raw system.

    Attributes
    ----------
    condition : float
        2-norm condition estimate of the final basis matrix.
    violation : float
        Maximum raw constraint violation of the best witness found.
    """

    def __init__(self, condition, violation):
        self.condition = float(condition)
        self.violation = float(violation)
        super().__init__(
            f"witness violation {violation:.3g} exceeds tolerance "
            f"(basis condition estimate {condition:.3g}); rescale the system"
        )


@dataclass
class LinearSystem:
    """Constraints ``E x = f`` and ``G x <= h`` on ``v`` free variables."""

    v: int
    E: np.ndarray = None
    f: np.ndarray = None
    G: np.ndarray = None
    h: np.ndarray = None

    def __post_init__(self):
        self.v = int(self.v)
        self.E, self.f = self._block(self.E, self.f, "E")
        self.G, self.h = self._block(self.G, self.h, "G")

    def _block(self, M, rhs, label):
        if M is None:
            return np.zeros((0, self.v)), np.zeros(0)
        M = np.array(M, dtype=float, ndmin=2)
        rhs = np.array(rhs, dtype=float, ndmin=1)
        if M.size == 0:
            M = M.reshape(0, self.v)
        if M.shape[1] != self.v or M.shape[0] != rhs.shape[0]:
            raise ValueError(f"{label} has shape {M.shape}, rhs {rhs.shape}, v={self.v}")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(rhs))):
            raise ValueError(f"{label} block has non-finite entries")
        return M, rhs

    def violation(self, x) -> float:
        """Largest violation of the raw constraints at ``x``."""
        x = np.asarray(x, dtype=float)
        viol = 0.0
        if self.E.shape[0]:
            viol = max(viol, float(np.max(np.abs(self.E @ x - self.f))))
        if self.G.shape[0]:
            viol = max(viol, float(np.max(self.G @ x - self.h)))
        return max(viol, 0.0)


@dataclass
class FeasibilityResult:
    status: Status
    witness: np.ndarray = None
    violation: float = 0.0
    phase1_objective: float = 0.0
    pivots: int = 0

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


def _standard_form(sys: LinearSystem):
    """Rows of ``[E, -E, 0] z = f`` and ``[G, -G, I] z = h`` with ``z >= 0``."""
    v, me, mg = sys.v, sys.E.shape[0], sys.G.shape[0]
    M = np.zeros((me + mg, 2 * v + mg))
    M[:me, :v] = sys.E
    M[:me, v:2 * v] = -sys.E
    M[me:, :v] = sys.G
    M[me:, v:2 * v] = -sys.G
    M[me:, 2 * v:] = np.eye(mg)
    rhs = np.concatenate([sys.f, sys.h])
    scale = np.maximum(np.max(np.abs(M), axis=1, initial=0.0), np.abs(rhs))
    scale[scale == 0] = 1.0
    M /= scale[:, None]
    rhs = rhs / scale
    neg = rhs < 0
    M[neg] *= -1
    rhs[neg] *= -1
    return M, rhs


def _phase1(M, rhs, pivot_tol=1e-12):
    """Minimize the sum of artificials; return (objective, basis, tableau, pivots)."""
    rows, cols = M.shape
    T = np.zeros((rows + 1, cols + rows + 1))
    T[:rows, :cols] = M
    T[:rows, cols:cols + rows] = np.eye(rows)
    T[:rows, -1] = rhs
    T[rows, :cols] = -M.sum(axis=0)
    T[rows, -1] = -rhs.sum()
    basis = list(range(cols, cols + rows))
    pivots = 0
    max_pivots = 50 * (rows + cols + 1)
    while pivots < max_pivots:
        reduced = T[rows, :-1]
        candidates = np.nonzero(reduced < -1e-11)[0]
        if candidates.size == 0:
            break
        j = int(candidates[0])
        col = T[:rows, j]
        ok = col > pivot_tol
        if not np.any(ok):
            # Phase 1 is bounded below, so this column is numerical noise.
            T[rows, j] = 0.0
            continue
        ratios = np.full(rows, np.inf)
        ratios[ok] = T[:rows, -1][ok] / col[ok]
        rmin = ratios.min()
        ties = np.nonzero(ratios <= rmin + 1e-12 * (1.0 + abs(rmin)))[0]
        i = int(min(ties, key=lambda r: basis[r]))
        T[i] /= T[i, j]
        others = np.arange(rows + 1) != i
        T[others] -= np.outer(T[others, j], T[i])
        basis[i] = j
        pivots += 1
    return -T[rows, -1], basis, T, pivots


def solve_feasibility(sys: LinearSystem, tol: float = 1e-9) -> FeasibilityResult:
    """Decide whether the system has a solution and return a witness.

    Raises
    ------
    IllConditionedError
        When the phase-1 optimum is feasible but the recovered witness
        violates the raw constraints by more than ``tol``.

    Examples
    --------
    >>> res = solve_feasibility(LinearSystem(1, G=[[1.0], [-1.0]], h=[1.0, 0.0]))
    >>> res.status.value, 0.0 <= res.witness[0] <= 1.0
    ('FEASIBLE', True)
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = sys.v
    if sys.E.shape[0] + sys.G.shape[0] == 0:
        return FeasibilityResult(Status.FEASIBLE, np.zeros(v), 0.0)
    M, rhs = _standard_form(sys)
    rows, cols = M.shape
    obj, basis, T, pivots = _phase1(M, rhs)
    if obj > tol:
        return FeasibilityResult(Status.INFEASIBLE, None, 0.0, float(obj), pivots)
    z = np.zeros(cols + rows)
    z[basis] = T[:rows, -1]
    x = z[:v] - z[v:2 * v]
    viol = sys.violation(x)
    if viol > tol:
        # Refine by solving the basis system exactly on the scaled matrix.
        Mfull = np.hstack([M, np.eye(rows)])
        B = Mfull[:, basis]
        try:
            zb = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError:
            zb = scipy.linalg.lstsq(B, rhs)[0]
        z = np.zeros(cols + rows)
        z[basis] = np.maximum(zb, 0.0)
        x2 = z[:v] - z[v:2 * v]
        viol2 = sys.violation(x2)
        if viol2 < viol:
            x, viol = x2, viol2
        if viol > tol:
            raise IllConditionedError(np.linalg.cond(B), viol)
    return FeasibilityResult(Status.FEASIBLE, x, viol, float(max(obj, 0.0)), pivots)


def least_squares(A, b) -> np.ndarray:
    """Minimum-norm minimizer of ``||A x - b||`` (complete orthogonal factorization).

    Examples
    --------
    >>> least_squares([[1.0], [1.0]], [0.0, 2.0])
    array([1.])
    """
    A = np.array(A, dtype=float, ndmin=2)
    b = np.asarray(b, dtype=float)
    if A.size == 0:
        raise ValueError("A must be nonempty")
    return scipy.linalg.lstsq(A, b, lapack_driver="gelsy")[0]


def numerical_rank(A, rel_tol: float = 1e-8) -> int:
    """Number of singular values above ``rel_tol`` times the largest one."""
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    A = np.array(A, dtype=float, ndmin=2)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))
