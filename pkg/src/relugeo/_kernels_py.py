"""Pure numpy implementations of the hot kernels.

These mirror ``relugeo._kernels`` (Cython) function for function and are used
when the compiled extension is unavailable or ``RELUGEO_PURE_PYTHON`` is set.
Activation codes: 0 relu, 1 tanh, 2 sigmoid.
"""

import numpy as np


def _unpack(theta, widths):
    layers, pos = [], 0
    for i in range(len(widths) - 1):
        rows, cols = widths[i + 1], widths[i]
        A = theta[pos:pos + rows * cols].reshape(rows, cols)
        pos += rows * cols
        layers.append((A, theta[pos:pos + rows], pos - rows * cols))
        pos += rows
    return layers


def _act(code, Z):
    if code == 0:
        return np.maximum(Z, 0.0)
    if code == 1:
        return np.tanh(Z)
    e = np.exp(-np.abs(Z))
    return np.where(Z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _deriv(code, Z):
    if code == 0:
        return (Z > 0).astype(float)
    if code == 1:
        e = np.exp(-2.0 * np.abs(Z))
        return 4.0 * e / (1.0 + e) ** 2
    e = np.exp(-np.abs(Z))
    return e / (1.0 + e) ** 2


def _forward_trace(theta, widths, code, S, state):
    layers = _unpack(theta, widths)
    Hs, Ds, Zs = [S], [], []
    H = S
    col = 0
    for A, b, _ in layers[:-1]:
        Z = H @ A.T + b
        Zs.append(Z)
        if state is not None:
            D = state[:, col:col + Z.shape[1]].astype(float)
        else:
            D = _deriv(code, Z)
        col += Z.shape[1]
        H = _act(code, Z)
        Hs.append(H)
        Ds.append(D)
    A, b, _ = layers[-1]
    Y = H @ A.T + b
    return layers, Hs, Ds, Zs, Y


def forward(theta, widths, code, S):
    return _forward_trace(theta, widths, code, S, None)[-1]


def _backprop(layers, Hs, Ds, top, delta, out):
    """Accumulate d(quantity)/d(theta) into ``out`` (n, r, m).

    ``delta`` (n, r, width) is the derivative of the r tracked quantities with
    respect to the pre-activations of layer ``top``.
    """
    for layer in range(top, -1, -1):
        A, b, off = layers[layer]
        rows, cols = A.shape
        H = Hs[layer]
        out[:, :, off:off + rows * cols] = (delta[:, :, :, None] * H[:, None, None, :]).reshape(
            delta.shape[0], delta.shape[1], rows * cols)
        out[:, :, off + rows * cols:off + rows * cols + rows] = delta
        if layer > 0:
            delta = (delta @ A) * Ds[layer - 1][:, None, :]


def residual_jacobian(theta, widths, code, S, T, state=None, want_gz=False):
    """Residuals, Jacobian, hidden pre-activations and their Jacobian.

    Parameters
    ----------
    state : (n, H) int8 array, optional
        ReLU activity override (1 active, 0 inactive) used for derivatives.

    Returns
    -------
    r : (n*q,) residuals ``psi(theta) - T`` in sample-major order
    J : (n*q, m)
    Z : (n, H) hidden pre-activations, layers concatenated
    Gz : (n*H, m) or None
    """
    theta = np.asarray(theta, dtype=float)
    widths = [int(w) for w in widths]
    layers, Hs, Ds, Zs, Y = _forward_trace(theta, widths, code, S, state)
    n, q, m = S.shape[0], widths[-1], theta.size
    k = len(layers)
    r = (Y - T).ravel()
    J = np.zeros((n, q, m))
    _backprop(layers, Hs, Ds, k - 1, np.broadcast_to(np.eye(q), (n, q, q)), J)
    Z = np.concatenate(Zs, axis=1) if Zs else np.zeros((n, 0))
    Gz = None
    if want_gz:
        Hn = Z.shape[1]
        G = np.zeros((n, Hn, m))
        col = 0
        for layer in range(k - 1):
            w = widths[layer + 1]
            sub = np.zeros((n, w, m))
            _backprop(layers, Hs, Ds, layer, np.broadcast_to(np.eye(w), (n, w, w)), sub)
            G[:, col:col + w] = sub
            col += w
        Gz = G.reshape(n * Hn, m)
    return r, J.reshape(n * q, m), Z, Gz


def loss_grad(theta, widths, code, S, T):
    """Squared Frobenius loss and its gradient."""
    theta = np.asarray(theta, dtype=float)
    widths = [int(w) for w in widths]
    layers, Hs, Ds, _, Y = _forward_trace(theta, widths, code, S, None)
    R = Y - T
    grad = np.zeros(theta.size)
    delta = 2.0 * R
    for layer in range(len(layers) - 1, -1, -1):
        A, b, off = layers[layer]
        rows, cols = A.shape
        grad[off:off + rows * cols] = (delta.T @ Hs[layer]).ravel()
        grad[off + rows * cols:off + rows * cols + rows] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ A) * Ds[layer - 1]
    return float(np.sum(R * R)), grad


def rprop(theta, widths, code, S, T, iters, step0, step_min, step_max,
          eta_plus, eta_minus, record_every):
    """iRprop+ with best-iterate tracking (ties go to the later iterate).

    Returns
    -------
    best_theta, best_loss, rec_loss, rec_norm
        ``rec_*`` hold the best-so-far loss and the norm of the best iterate
        after every ``record_every`` iterations.
    """
    theta = np.array(theta, dtype=float)
    m = theta.size
    step = np.full(m, step0)
    g_prev = np.zeros(m)
    upd = np.zeros(m)
    loss, g = loss_grad(theta, widths, code, S, T)
    best_loss, best = loss, theta.copy()
    prev_loss = loss
    nrec = iters // record_every if record_every > 0 else 0
    rec_loss = np.empty(nrec)
    rec_norm = np.empty(nrec)
    for it in range(iters):
        prod = g * g_prev
        grow = prod > 0
        shrink = prod < 0
        step[grow] = np.minimum(step[grow] * eta_plus, step_max)
        step[shrink] = np.maximum(step[shrink] * eta_minus, step_min)
        new_upd = -np.sign(g) * step
        if loss > prev_loss:
            new_upd[shrink] = -upd[shrink]
        else:
            new_upd[shrink] = 0.0
        g = np.where(shrink, 0.0, g)
        theta += new_upd
        upd = new_upd
        g_prev = g
        prev_loss = loss
        loss, g = loss_grad(theta, widths, code, S, T)
        if loss <= best_loss:
            best_loss = loss
            best[:] = theta
        if record_every > 0 and (it + 1) % record_every == 0 and (it + 1) // record_every <= nrec:
            j = (it + 1) // record_every - 1
            rec_loss[j] = best_loss
            rec_norm[j] = np.sqrt(np.dot(best, best))
    return best, best_loss, rec_loss, rec_norm


def pair_min_residual(U, P, stop):
    """Smallest squared distance from ``P`` to ``span{u_i, u_j}`` over pairs of rows.

    Rows of ``U`` are unit vectors.  Returns ``(best_sq, i, j)``; the scan
    stops early once ``best_sq <= stop``.
    """
    U = np.asarray(U, dtype=float)
    P = np.asarray(P, dtype=float)
    pp = float(P @ P)
    r = U @ P
    best, bi, bj = pp, -1, -1
    for i in range(U.shape[0]):
        g = U[i + 1:] @ U[i]
        r2 = r[i + 1:]
        den = 1.0 - g * g
        with np.errstate(divide="ignore", invalid="ignore"):
            proj = (r[i] ** 2 + r2 * r2 - 2.0 * g * r[i] * r2) / den
        par = den < 1e-12
        proj[par] = np.maximum(r[i] ** 2, r2[par] ** 2)
        res = pp - proj
        if res.size:
            j = int(np.argmin(res))
            if res[j] < best:
                best, bi, bj = float(res[j]), i, i + 1 + j
                if best <= stop:
                    break
    return max(best, 0.0), bi, bj
