"""Kink-aware separable Levenberg-Marquardt for the squared-loss fit.

The output layer is affine in its own weights, so for fixed hidden weights
the best output layer is a linear least-squares solution.  The solver works
on the hidden weights only and eliminates the output layer exactly at every
evaluation (variable projection, Kaufman's Jacobian).  Cancellations between
large output weights, which drive minimizing sequences off to infinity, are
thereby resolved to working precision at every iterate.

Inside a fixed ReLU activation pattern the network is smooth and the hidden
pre-activations are locally linear in the weights.  Each step solves the
damped Gauss-Newton model subject to the linearized constraint that every
hidden pre-activation stays on its current side of the kink.  Units sitting
on a kink start on the inactive side and move across when the multiplier of
their constraint asks for it.  For smooth activations the constraints are
dropped.

Sequences that run off to infinity are followed by a doubling line search on
each accepted step and by a periodic extrapolation in log-coordinates,
``h * |h / h_old|**alpha``, on the hidden weights.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from relugeo import _backend
from relugeo.core import activate
from relugeo.lsq import constrained_lstsq

MU_INIT = 1e-3
MU_MAX = 1e8
MU_MIN = 1e-20
KINK_TOL = 1e-12


def _layer_slices(widths):
    """``(A slice, b slice, rows, cols)`` per layer of the flat weights."""
    out = []
    pos = 0
    for i in range(len(widths) - 1):
        rows, cols = widths[i + 1], widths[i]
        out.append((slice(pos, pos + rows * cols), slice(pos + rows * cols, pos + rows * cols + rows),
                    rows, cols))
        pos += rows * cols + rows
    return out


def balance_relu(widths, theta, sweeps: int = 20) -> np.ndarray:
    """Norm-minimizing representative under per-unit positive rescaling.

    For ReLU, scaling the incoming weights of a hidden unit by ``t > 0`` and
    its outgoing weights by ``1 / t`` leaves the network unchanged.  Each
    unit is balanced so that incoming and outgoing norms agree, sweeping the
    layers until the scales settle.
    """
    theta = np.array(theta, dtype=float)
    layers = _layer_slices(widths)
    for _ in range(sweeps):
        moved = 0.0
        for l in range(len(layers) - 1):
            sa, sb, rows, cols = layers[l]
            na, _, nrows, ncols = layers[l + 1]
            A = theta[sa].reshape(rows, cols)
            b = theta[sb]
            A2 = theta[na].reshape(nrows, ncols)
            inc = np.sqrt(np.sum(A * A, axis=1) + b * b)
            out = np.sqrt(np.sum(A2 * A2, axis=0))
            ok = (inc > 0) & (out > 0)
            t = np.ones(rows)
            t[ok] = np.sqrt(out[ok] / inc[ok])
            A *= t[:, None]
            b *= t
            A2 /= t[None, :]
            theta[sa] = A.ravel()
            theta[sb] = b
            theta[na] = A2.ravel()
            moved = max(moved, float(np.max(np.abs(np.log(t)))))
        if moved < 1e-12:
            break
    return theta


class KinkAwareLM:
    """Stateful solver for one fitting problem.

    Parameters
    ----------
    spec : NetworkSpec
    S, T : sample and response matrices
    norm_cap : float, optional
        Iterates with ``||theta|| > norm_cap`` are rejected.
    extrapolate_every : int
        Accepted steps between log-coordinate extrapolations; 0 disables.
    line_search : bool
        Try doubling each accepted step.
    max_growth : float, optional
        Steps longer than ``max_growth * (1 + ||h||)`` are damped further, so
        a diverging run grows its norm gradually instead of in one leap.
    """

    def __init__(self, spec, S, T, norm_cap=None, extrapolate_every=10, line_search=True,
                 max_growth=None):
        self.spec = spec
        self.S = np.ascontiguousarray(S, dtype=float)
        self.T = np.ascontiguousarray(T, dtype=float)
        self.widths = np.asarray(spec.widths, dtype=np.intp)
        self.code = spec.activation.code
        self.relu = self.code == 0 and spec.depth > 1
        self.norm_cap = norm_cap
        self.extrapolate_every = extrapolate_every
        self.line_search = line_search
        self.max_growth = max_growth
        self.n_out = (spec.widths[-2] + 1) * spec.q
        self.n_hidden = spec.param_count - self.n_out
        self.evaluations = 0

    # -- separable structure -------------------------------------------------

    def features(self, h) -> np.ndarray:
        """``[H, 1]`` where ``H`` holds the last hidden layer's activations."""
        X = self.S
        pos = 0
        widths = self.spec.widths
        for i in range(len(widths) - 2):
            rows, cols = widths[i + 1], widths[i]
            A = h[pos:pos + rows * cols].reshape(rows, cols)
            pos += rows * cols
            b = h[pos:pos + rows]
            pos += rows
            X = activate(self.spec.activation, X @ A.T + b)
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def evaluate(self, h):
        """Optimal output layer ``C`` ((d+1) x q) and the loss at ``h``."""
        self.evaluations += 1
        Phi = self.features(h)
        if not np.all(np.isfinite(Phi)):
            return None, np.inf
        C = scipy.linalg.lstsq(Phi, self.T, lapack_driver="gelsy")[0]
        R = Phi @ C - self.T
        L = float(np.sum(R * R))
        return C, (L if np.isfinite(L) else np.inf)

    def _raw(self, h, C) -> np.ndarray:
        return np.concatenate([h, C[:-1].T.ravel(), C[-1]])

    def join(self, h, C) -> np.ndarray:
        """Full flat weights; ReLU weights are returned norm-balanced."""
        theta = self._raw(h, C)
        if self.relu:
            theta = balance_relu(self.spec.widths, theta)
        return theta

    def split(self, theta):
        return np.array(theta[:self.n_hidden], dtype=float)

    def _allowed(self, h, C) -> bool:
        if self.norm_cap is None:
            return True
        return np.linalg.norm(self.join(h, C)) <= self.norm_cap

    # -- steps ---------------------------------------------------------------

    def _projected(self, theta, state):
        r, J, _, _ = _backend.kernels.residual_jacobian(theta, self.widths, self.code, self.S,
                                                        self.T, state, False)
        Q, _ = np.linalg.qr(J[:, self.n_hidden:])
        Jh = J[:, :self.n_hidden]
        return r, Jh - Q @ (Q.T @ Jh)

    def step(self, h, C, L, mu):
        """One damped step; returns ``(h, C, L, mu, accepted)``."""
        theta = self._raw(h, C)
        if self.n_hidden == 0:
            return h, C, L, mu, False
        if not self.relu:
            r, J = self._projected(theta, None)
            while mu < MU_MAX:
                step, _ = constrained_lstsq(J, r, None, None, mu)
                if (self.max_growth is not None
                        and np.linalg.norm(step) > self.max_growth * (1.0 + np.linalg.norm(h))):
                    mu *= 4.0
                    continue
                out = self._try(h, step, L)
                if out is not None:
                    return out[0], out[1], out[2], max(mu / 3.0, MU_MIN), True
                mu *= 4.0
            return h, C, L, mu, False

        _, _, Z, Gz = _backend.kernels.residual_jacobian(theta, self.widths, self.code, self.S,
                                                         self.T, None, True)
        Gz = Gz[:, :self.n_hidden]
        z = Z.ravel()
        tau = KINK_TOL * (1.0 + np.max(np.abs(z), initial=0.0))
        pinned = np.abs(z) <= tau
        side = np.where(z > tau, 1.0, -1.0)
        flipped = np.zeros(z.size, dtype=bool)
        equal = np.zeros(z.size, dtype=bool)
        cache = {}
        while mu < MU_MAX:
            step = None
            for _ in range(4):
                state = (side > 0).reshape(Z.shape).astype(np.int8)
                key = state.tobytes()
                if key not in cache:
                    cache[key] = self._projected(theta, state)
                r, J = cache[key]
                G = -side[:, None] * Gz
                rhs = side * z
                if equal.any():
                    G = np.vstack([G, -G[equal]])
                    rhs = np.concatenate([rhs, -rhs[equal]])
                step, lam = constrained_lstsq(J, r, G, rhs, mu)
                if step is None:
                    break
                want = pinned & (lam[:z.size] > 1e-12) & ~equal
                if not want.any():
                    break
                equal |= want & flipped
                swap = want & ~flipped
                side[swap] = -side[swap]
                flipped |= swap
            out = self._try(h, step, L)
            if out is not None:
                return out[0], out[1], out[2], max(mu / 3.0, MU_MIN), True
            mu *= 4.0
        return h, C, L, mu, False

    def _try(self, h, step, L):
        """Accept ``h + a step`` for the best doubling ``a`` or return None."""
        if step is None or not np.all(np.isfinite(step)):
            return None
        cand = h + step
        C, Ln = self.evaluate(cand)
        if not (Ln < L and self._allowed(cand, C)):
            return None
        a = 1.0
        while self.line_search and a < 64.0:
            c2 = h + 2.0 * a * step
            C2, L2 = self.evaluate(c2)
            if L2 < Ln and self._allowed(c2, C2):
                a *= 2.0
                cand, C, Ln = c2, C2, L2
            else:
                break
        return cand, C, Ln

    def _extrapolate(self, h, C, L, mu, old, budget):
        """Log-coordinate extrapolation with a short polish."""
        nh = np.linalg.norm(h)
        used = 0
        if nh <= np.linalg.norm(old) * (1.0 + 1e-6) or budget < 2:
            return h, C, L, mu, used
        ok = (np.sign(h) == np.sign(old)) & (np.abs(h) > 1e-9 * nh) & (old != 0)
        ratio = np.ones_like(h)
        ratio[ok] = np.abs(h[ok] / old[ok])
        best = (h, C, L, mu)
        a = 1.0
        while a <= 1e6 and used + 2 <= budget:
            cand = h * ratio ** a
            if not np.all(np.isfinite(cand)) or np.linalg.norm(cand) > 10.0 * nh:
                break
            Cc, Lc = self.evaluate(cand)
            if not self._allowed(cand, Cc):
                break
            m2 = mu
            for _ in range(2):
                cand, Cc, Lc, m2, acc = self.step(cand, Cc, Lc, m2)
                used += 1
                if not acc:
                    break
            if Lc < best[2] * (1.0 - 1e-3):
                best = (cand, Cc, Lc, m2)
                a *= 2.0
            else:
                break
        return best[0], best[1], best[2], best[3], used

    def run(self, theta, iters, loss_floor=0.0):
        """Iterate until stalled, below ``loss_floor`` or out of ``iters`` steps.

        Returns
        -------
        theta, loss, used, stalled, losses, norms
            ``losses`` and ``norms`` hold one entry per iteration used.
        """
        h = self.split(theta)
        C, L = self.evaluate(h)
        if C is None:
            raise FloatingPointError("non-finite hidden features at the starting point")
        mu = MU_INIT
        old = h.copy()
        losses, norms = [], []
        used = 0
        accepted = 0
        stalled = False
        while used < iters and L > loss_floor:
            h, C, L, mu, ok = self.step(h, C, L, mu)
            used += 1
            losses.append(L)
            norms.append(float(np.linalg.norm(self.join(h, C))))
            if not ok:
                stalled = True
                break
            accepted += 1
            if self.extrapolate_every and accepted % self.extrapolate_every == 0:
                h, C, L, mu, extra = self._extrapolate(h, C, L, mu, old, iters - used)
                if extra:
                    nrm = float(np.linalg.norm(self.join(h, C)))
                    losses.extend([L] * extra)
                    norms.extend([nrm] * extra)
                    used += extra
                old = h.copy()
        return self.join(h, C), L, used, stalled, np.asarray(losses), np.asarray(norms)
