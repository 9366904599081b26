# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: forward pass, Jacobians, iRprop+ loop, pair scan.

Function signatures and semantics match ``relugeo._kernels_py``.
Activation codes: 0 relu, 1 tanh, 2 sigmoid.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, tanh
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline double _act(int code, double z) noexcept nogil:
    cdef double e
    if code == 0:
        return z if z > 0.0 else 0.0
    if code == 1:
        return tanh(z)
    e = exp(-fabs(z))
    if z >= 0.0:
        return 1.0 / (1.0 + e)
    return e / (1.0 + e)


cdef inline double _deriv(int code, double z) noexcept nogil:
    cdef double e
    if code == 0:
        return 1.0 if z > 0.0 else 0.0
    if code == 1:
        e = exp(-2.0 * fabs(z))
        return 4.0 * e / ((1.0 + e) * (1.0 + e))
    e = exp(-fabs(z))
    return e / ((1.0 + e) * (1.0 + e))


cdef struct Net:
    int k
    int code
    Py_ssize_t *w        # widths, k+1 entries
    Py_ssize_t *aoff     # offset of A_l in theta
    Py_ssize_t *hoff     # offset of layer l input in the activation buffer
    Py_ssize_t *zoff     # offset of hidden layer l (1-based) in the Z row
    Py_ssize_t hidden
    Py_ssize_t maxw


cdef int _net_init(Net *net, Py_ssize_t[::1] widths, int code) except -1:
    cdef Py_ssize_t l, k = widths.shape[0] - 1
    net.k = <int>k
    net.code = code
    net.w = <Py_ssize_t *>malloc((k + 1) * sizeof(Py_ssize_t))
    net.aoff = <Py_ssize_t *>malloc((k + 1) * sizeof(Py_ssize_t))
    net.hoff = <Py_ssize_t *>malloc((k + 1) * sizeof(Py_ssize_t))
    net.zoff = <Py_ssize_t *>malloc((k + 1) * sizeof(Py_ssize_t))
    if net.w == NULL or net.aoff == NULL or net.hoff == NULL or net.zoff == NULL:
        raise MemoryError()
    net.maxw = 0
    for l in range(k + 1):
        net.w[l] = widths[l]
        if widths[l] > net.maxw:
            net.maxw = widths[l]
    net.aoff[0] = 0
    net.hoff[0] = 0
    net.zoff[0] = 0
    for l in range(k):
        net.aoff[l + 1] = net.aoff[l] + (net.w[l] + 1) * net.w[l + 1]
        net.hoff[l + 1] = net.hoff[l] + net.w[l]
    net.hidden = 0
    for l in range(1, k):
        net.zoff[l] = net.hidden
        net.hidden += net.w[l]
    return 0


cdef void _net_free(Net *net) noexcept nogil:
    free(net.w)
    free(net.aoff)
    free(net.hoff)
    free(net.zoff)


cdef void _forward_sample(Net *net, const double *theta, const double *s,
                          double *h, double *d, double *z, double *y,
                          const signed char *state) noexcept nogil:
    """Forward pass for one sample.

    ``h`` receives the input of every layer (layer 0 is ``s``), ``d`` the
    activation derivative of every hidden unit, ``z`` the hidden
    pre-activations and ``y`` the output.
    """
    cdef Py_ssize_t l, a, c, rows, cols
    cdef const double *A
    cdef const double *b
    cdef double acc
    cdef double *hin
    for c in range(net.w[0]):
        h[c] = s[c]
    for l in range(net.k):
        rows = net.w[l + 1]
        cols = net.w[l]
        A = theta + net.aoff[l]
        b = A + rows * cols
        hin = h + net.hoff[l]
        for a in range(rows):
            acc = b[a]
            for c in range(cols):
                acc = acc + A[a * cols + c] * hin[c]
            if l < net.k - 1:
                z[net.zoff[l + 1] + a] = acc
                h[net.hoff[l + 1] + a] = _act(net.code, acc)
                if state != NULL:
                    d[net.zoff[l + 1] + a] = <double>state[net.zoff[l + 1] + a]
                else:
                    d[net.zoff[l + 1] + a] = _deriv(net.code, acc)
            else:
                y[a] = acc


cdef void _backprop(Net *net, const double *theta, const double *h, const double *d,
                    int top, double *delta, double *work, double *out) noexcept nogil:
    """Write the gradient of a scalar into ``out`` given its derivative
    ``delta`` with respect to the pre-activations of layer ``top``.
    Contents of ``delta`` and ``work`` are clobbered.
    """
    cdef Py_ssize_t l, a, c, rows, cols, off
    cdef const double *A
    cdef const double *hin
    cdef double acc
    cdef double *tmp
    l = top
    while l >= 0:
        rows = net.w[l + 1]
        cols = net.w[l]
        off = net.aoff[l]
        A = theta + off
        hin = h + net.hoff[l]
        for a in range(rows):
            for c in range(cols):
                out[off + a * cols + c] = delta[a] * hin[c]
            out[off + rows * cols + a] = delta[a]
        if l > 0:
            for c in range(cols):
                acc = 0.0
                for a in range(rows):
                    acc = acc + delta[a] * A[a * cols + c]
                work[c] = acc * d[net.zoff[l] + c]
            tmp = delta
            delta = work
            work = tmp
        l -= 1


def forward(const double[::1] theta, Py_ssize_t[::1] widths, int code, S):
    cdef const double[:, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef Net net
    _net_init(&net, widths, code)
    cdef Py_ssize_t n = Sv.shape[0], i, q = widths[widths.shape[0] - 1]
    Y = np.empty((n, q))
    cdef double[:, ::1] Yv = Y
    cdef double *h = <double *>malloc((net.hoff[net.k] + net.w[net.k] + 1) * sizeof(double))
    cdef double *d = <double *>malloc((net.hidden + 1) * sizeof(double))
    cdef double *z = <double *>malloc((net.hidden + 1) * sizeof(double))
    try:
        with nogil:
            for i in range(n):
                _forward_sample(&net, &theta[0], &Sv[i, 0], h, d, z, &Yv[i, 0], NULL)
    finally:
        free(h)
        free(d)
        free(z)
        _net_free(&net)
    return Y


def residual_jacobian(const double[::1] theta, Py_ssize_t[::1] widths, int code, S, T,
                      state=None, bint want_gz=False):
    cdef const double[:, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef const double[:, ::1] Tv = np.ascontiguousarray(T, dtype=np.float64)
    cdef Net net
    _net_init(&net, widths, code)
    cdef Py_ssize_t n = Sv.shape[0], m = theta.shape[0], q = widths[widths.shape[0] - 1]
    cdef Py_ssize_t H = net.hidden, i, o, u, l, hc, w
    cdef const signed char[:, ::1] st
    cdef const signed char *stp = NULL
    cdef bint has_state = state is not None
    if has_state:
        st = np.ascontiguousarray(state, dtype=np.int8)
    r = np.empty(n * q)
    J = np.zeros((n * q, m))
    Z = np.empty((n, H))
    Gz = np.zeros((n * H, m)) if want_gz else None
    cdef double[::1] rv = r
    cdef double[:, ::1] Jv = J
    cdef double[:, ::1] Zv = Z
    cdef double[:, ::1] Gv
    if want_gz:
        Gv = Gz
    cdef double *h = <double *>malloc((net.hoff[net.k] + net.w[net.k] + 1) * sizeof(double))
    cdef double *d = <double *>malloc((H + 1) * sizeof(double))
    cdef double *z = <double *>malloc((H + 1) * sizeof(double))
    cdef double *y = <double *>malloc((q + 1) * sizeof(double))
    cdef double *delta = <double *>malloc((net.maxw + 1) * sizeof(double))
    cdef double *work = <double *>malloc((net.maxw + 1) * sizeof(double))
    try:
        with nogil:
            for i in range(n):
                if has_state and H > 0:
                    stp = &st[i, 0]
                _forward_sample(&net, &theta[0], &Sv[i, 0], h, d, z, y, stp)
                for u in range(H):
                    Zv[i, u] = z[u]
                for o in range(q):
                    rv[i * q + o] = y[o] - Tv[i, o]
                    for u in range(q):
                        delta[u] = 0.0
                    delta[o] = 1.0
                    _backprop(&net, &theta[0], h, d, net.k - 1, delta, work, &Jv[i * q + o, 0])
                if want_gz:
                    for l in range(1, net.k):
                        w = net.w[l]
                        for u in range(w):
                            hc = net.zoff[l] + u
                            for o in range(w):
                                delta[o] = 0.0
                            delta[u] = 1.0
                            _backprop(&net, &theta[0], h, d, <int>(l - 1), delta, work,
                                      &Gv[i * H + hc, 0])
    finally:
        free(h)
        free(d)
        free(z)
        free(y)
        free(delta)
        free(work)
        _net_free(&net)
    return r, J, Z, Gz


cdef double _loss_grad(Net *net, const double *theta, Py_ssize_t m, const double[:, ::1] Sv,
                       const double[:, ::1] Tv, double *grad, double *gi, double *h, double *d,
                       double *z, double *y, double *delta, double *work) noexcept nogil:
    cdef Py_ssize_t i, o, j, n = Sv.shape[0], q = net.w[net.k]
    cdef double loss = 0.0, res
    for j in range(m):
        grad[j] = 0.0
    for i in range(n):
        _forward_sample(net, theta, &Sv[i, 0], h, d, z, y, NULL)
        for o in range(q):
            res = y[o] - Tv[i, o]
            loss = loss + res * res
            delta[o] = 2.0 * res
        _backprop(net, theta, h, d, net.k - 1, delta, work, gi)
        for j in range(m):
            grad[j] = grad[j] + gi[j]
    return loss


def loss_grad(const double[::1] theta, Py_ssize_t[::1] widths, int code, S, T):
    cdef const double[:, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef const double[:, ::1] Tv = np.ascontiguousarray(T, dtype=np.float64)
    cdef Net net
    _net_init(&net, widths, code)
    cdef Py_ssize_t m = theta.shape[0]
    grad = np.empty(m)
    cdef double[::1] gv = grad
    cdef double loss
    cdef double *gi = <double *>malloc((m + 1) * sizeof(double))
    cdef double *h = <double *>malloc((net.hoff[net.k] + net.w[net.k] + 1) * sizeof(double))
    cdef double *d = <double *>malloc((net.hidden + 1) * sizeof(double))
    cdef double *z = <double *>malloc((net.hidden + 1) * sizeof(double))
    cdef double *y = <double *>malloc((net.w[net.k] + 1) * sizeof(double))
    cdef double *delta = <double *>malloc((net.maxw + 1) * sizeof(double))
    cdef double *work = <double *>malloc((net.maxw + 1) * sizeof(double))
    try:
        with nogil:
            loss = _loss_grad(&net, &theta[0], m, Sv, Tv, &gv[0], gi, h, d, z, y, delta, work)
    finally:
        free(gi)
        free(h)
        free(d)
        free(z)
        free(y)
        free(delta)
        free(work)
        _net_free(&net)
    return loss, grad


def rprop(theta0, Py_ssize_t[::1] widths, int code, S, T, Py_ssize_t iters,
          double step0, double step_min, double step_max, double eta_plus, double eta_minus,
          Py_ssize_t record_every):
    cdef const double[:, ::1] Sv = np.ascontiguousarray(S, dtype=np.float64)
    cdef const double[:, ::1] Tv = np.ascontiguousarray(T, dtype=np.float64)
    theta = np.array(theta0, dtype=np.float64)
    cdef double[::1] th = theta
    cdef Py_ssize_t m = th.shape[0], it, j, nrec
    nrec = iters // record_every if record_every > 0 else 0
    best = theta.copy()
    rec_loss = np.empty(nrec)
    rec_norm = np.empty(nrec)
    cdef double[::1] bv = best
    cdef double[::1] rl = rec_loss
    cdef double[::1] rn = rec_norm
    cdef Net net
    _net_init(&net, widths, code)
    cdef double *g = <double *>malloc((m + 1) * sizeof(double))
    cdef double *gp = <double *>malloc((m + 1) * sizeof(double))
    cdef double *step = <double *>malloc((m + 1) * sizeof(double))
    cdef double *upd = <double *>malloc((m + 1) * sizeof(double))
    cdef double *gi = <double *>malloc((m + 1) * sizeof(double))
    cdef double *h = <double *>malloc((net.hoff[net.k] + net.w[net.k] + 1) * sizeof(double))
    cdef double *d = <double *>malloc((net.hidden + 1) * sizeof(double))
    cdef double *z = <double *>malloc((net.hidden + 1) * sizeof(double))
    cdef double *y = <double *>malloc((net.w[net.k] + 1) * sizeof(double))
    cdef double *delta = <double *>malloc((net.maxw + 1) * sizeof(double))
    cdef double *work = <double *>malloc((net.maxw + 1) * sizeof(double))
    cdef double loss, prev_loss, best_loss, prod, u, nrm
    try:
        with nogil:
            for j in range(m):
                step[j] = step0
                gp[j] = 0.0
                upd[j] = 0.0
            loss = _loss_grad(&net, &th[0], m, Sv, Tv, g, gi, h, d, z, y, delta, work)
            best_loss = loss
            prev_loss = loss
            for it in range(iters):
                for j in range(m):
                    prod = g[j] * gp[j]
                    if prod > 0.0:
                        step[j] = step[j] * eta_plus
                        if step[j] > step_max:
                            step[j] = step_max
                        u = -step[j] if g[j] > 0.0 else step[j]
                    elif prod < 0.0:
                        step[j] = step[j] * eta_minus
                        if step[j] < step_min:
                            step[j] = step_min
                        u = -upd[j] if loss > prev_loss else 0.0
                        g[j] = 0.0
                    else:
                        if g[j] > 0.0:
                            u = -step[j]
                        elif g[j] < 0.0:
                            u = step[j]
                        else:
                            u = 0.0
                    th[j] = th[j] + u
                    upd[j] = u
                    gp[j] = g[j]
                prev_loss = loss
                loss = _loss_grad(&net, &th[0], m, Sv, Tv, g, gi, h, d, z, y, delta, work)
                if loss <= best_loss:
                    best_loss = loss
                    for j in range(m):
                        bv[j] = th[j]
                if record_every > 0 and (it + 1) % record_every == 0 and (it + 1) // record_every <= nrec:
                    nrm = 0.0
                    for j in range(m):
                        nrm = nrm + bv[j] * bv[j]
                    rl[(it + 1) // record_every - 1] = best_loss
                    rn[(it + 1) // record_every - 1] = sqrt(nrm)
    finally:
        free(g)
        free(gp)
        free(step)
        free(upd)
        free(gi)
        free(h)
        free(d)
        free(z)
        free(y)
        free(delta)
        free(work)
        _net_free(&net)
    return best, best_loss, rec_loss, rec_norm


def pair_min_residual(U, P, double stop):
    cdef const double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef const double[::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef Py_ssize_t N = Uv.shape[0], n = Uv.shape[1], i, j, t
    cdef double pp = 0.0, g, r1, r2, den, proj, res, best
    cdef Py_ssize_t bi = -1, bj = -1
    cdef bint done = False
    r = np.empty(N)
    cdef double[::1] rv = r
    with nogil:
        for t in range(n):
            pp = pp + Pv[t] * Pv[t]
        for i in range(N):
            g = 0.0
            for t in range(n):
                g = g + Uv[i, t] * Pv[t]
            rv[i] = g
        best = pp
        for i in range(N):
            if done:
                break
            r1 = rv[i]
            for j in range(i + 1, N):
                g = 0.0
                for t in range(n):
                    g = g + Uv[i, t] * Uv[j, t]
                r2 = rv[j]
                den = 1.0 - g * g
                if den < 1e-12:
                    proj = r1 * r1 if r1 * r1 > r2 * r2 else r2 * r2
                else:
                    proj = (r1 * r1 + r2 * r2 - 2.0 * g * r1 * r2) / den
                res = pp - proj
                if res < best:
                    best = res
                    bi = i
                    bj = j
                    if best <= stop:
                        done = True
                        break
    if best < 0.0:
        best = 0.0
    return best, bi, bj
