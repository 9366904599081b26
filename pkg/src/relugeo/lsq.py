"""Inequality-constrained linear least squares via least-distance programming.

Solves ``min ||J x + r||^2 + mu ||D x||^2`` subject to ``G x <= h`` where
``D`` is the column-norm scaling of ``J``.  The problem is reduced to a
least-distance program and solved through one NNLS call (Lawson-Hanson),
which also yields the Lagrange multipliers of the inequalities.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import nnls


def column_scale(J) -> np.ndarray:
    d = np.sqrt(np.sum(J * J, axis=0))
    return np.where(d > 0, d, 1.0)


def constrained_lstsq(J, r, G=None, h=None, mu: float = 0.0, scale=None):
    """Damped, inequality-constrained least squares.

    Parameters
    ----------
    J : (k, m) array
    r : (k,) array
    G, h : constraints ``G x <= h``; may be omitted.
    mu : float
        Damping on the scaled variables; a floor of ``1e-14`` keeps the
        reduced problem nonsingular.
    scale : (m,) array, optional
        Variable scaling ``D``; defaults to the column norms of ``J``.

    Returns
    -------
    x : (m,) array or None
        ``None`` when the constraints are infeasible.
    lam : (c,) array or None
        Multipliers of ``G x <= h`` (nonnegative).
    """
    J = np.asarray(J, dtype=float)
    r = np.asarray(r, dtype=float)
    m = J.shape[1]
    D = column_scale(J) if scale is None else np.asarray(scale, dtype=float)
    Js = J / D
    mu = max(float(mu), 1e-14)
    Jh = np.vstack([Js, np.sqrt(mu) * np.eye(m)])
    rh = np.concatenate([r, np.zeros(m)])
    Q, R = np.linalg.qr(Jh)
    f = Q.T @ rh
    if G is None or len(G) == 0:
        y = np.linalg.solve(R, -f)
        return y / D, np.zeros(0)
    G = np.asarray(G, dtype=float) / D
    h = np.asarray(h, dtype=float)
    # Substituting w = R y + f turns the problem into min ||w|| s.t. E w <= c.
    E = np.linalg.solve(R.T, G.T).T
    c = h + E @ f
    norms = np.sqrt(np.sum(E * E, axis=1))
    norms = np.where(norms > 0, norms, 1.0)
    E = E / norms[:, None]
    c = c / norms
    M = np.vstack([-E.T, -c[None, :]])
    e = np.zeros(M.shape[0])
    e[-1] = 1.0
    u, _ = nnls(M, e, maxiter=50 * M.shape[1] + 100)
    rho = M @ u - e
    if rho[-1] > -1e-14:
        return None, None
    w = -rho[:-1] / rho[-1]
    lam = u / (-rho[-1]) / norms
    y = np.linalg.solve(R, w - f)
    return y / D, lam
