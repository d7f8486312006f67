"""Compiled inner loops.

Every kernel processes one sample at a time with a fixed summation order, so
a sample's result never depends on which batch it was computed in. Groups are
passed in CSR form: group ``r`` is ``idx[ptr[r]:ptr[r+1]]``.
"""

import numpy as np
from numba import njit

ZERO_NORM = 1e-300


@njit(cache=True)
def prox_into(b, t, s, ptr, idx, out):
    """``out = group_shrink(soft_threshold(b, t), s)``."""
    for r in range(ptr.size - 1):
        sq = 0.0
        for q in range(ptr[r], ptr[r + 1]):
            j = idx[q]
            a = abs(b[j]) - t[j]
            if not a <= 0.0:  # written so NaN propagates instead of becoming 0
                u = a if b[j] > 0.0 else -a
            else:
                u = 0.0
            out[j] = u
            sq += u * u
        n = np.sqrt(sq)
        if n > ZERO_NORM:
            f = max(n - s[r], 0.0) / n
        else:
            f = 0.0
        for q in range(ptr[r], ptr[r + 1]):
            out[idx[q]] *= f


@njit(cache=True)
def select_group(e, ptr, idx):
    """Index and norm of the group of ``e`` with the largest norm (lowest index on ties)."""
    best = -1.0
    g = 0
    for r in range(ptr.size - 1):
        sq = 0.0
        for q in range(ptr[r], ptr[r + 1]):
            sq += e[idx[q]] * e[idx[q]]
        if sq > best:
            best = sq
            g = r
    return g, np.sqrt(best)


@njit(cache=True)
def _objective(A, x, z, lam, mu, ptr, idx):
    m, p = A.shape
    fit = 0.0
    for i in range(m):
        acc = x[i]
        for j in range(p):
            acc -= A[i, j] * z[j]
        fit += acc * acc
    reg = 0.0
    for j in range(p):
        reg += lam[j] * abs(z[j])
    for r in range(ptr.size - 1):
        sq = 0.0
        for q in range(ptr[r], ptr[r + 1]):
            sq += z[idx[q]] * z[idx[q]]
        reg += mu[r] * np.sqrt(sq)
    return 0.5 * fit + reg


@njit(cache=True)
def ista(S, Wx, t, s, ptr, idx, max_iter, tol, A, x, lam, mu, want_hist, want_iter):
    p = Wx.size
    z = np.zeros(p)
    v = np.empty(p)
    zn = np.empty(p)
    hist = np.empty(max_iter + 1 if want_hist else 0)
    iters = np.empty((max_iter if want_iter else 0, p))
    if want_hist:
        hist[0] = _objective(A, x, z, lam, mu, ptr, idx)
    it = 0
    converged = False
    finite = True
    while it < max_iter:
        for i in range(p):
            acc = Wx[i]
            for j in range(p):
                acc += S[i, j] * z[j]
            v[i] = acc
        prox_into(v, t, s, ptr, idx, zn)
        step = 0.0
        for j in range(p):
            d = zn[j] - z[j]
            step += d * d
            z[j] = zn[j]
        if want_iter:
            iters[it] = z
        it += 1
        if not np.isfinite(step):
            finite = False
            break
        if want_hist:
            hist[it] = _objective(A, x, z, lam, mu, ptr, idx)
        if np.sqrt(step) < tol:
            converged = True
            break
    return z, it, converged, finite, hist[: it + 1 if want_hist else 0], iters[:it]


@njit(cache=True)
def bcofb(ST, b0, t, s, ptr, idx, max_iter, tol, A, x, lam, mu, want_hist, want_iter):
    """Greedy block-coordinate iterations; ``ST`` holds the transpose of ``S``."""
    p = b0.size
    b = b0.copy()
    z = np.zeros(p)
    y = np.empty(p)
    e = np.empty(p)
    hist = np.empty(max_iter + 1 if want_hist else 0)
    iters = np.empty((max_iter if want_iter else 0, p))
    if want_hist:
        hist[0] = _objective(A, x, z, lam, mu, ptr, idx)
    it = 0
    converged = False
    finite = True
    while it < max_iter:
        prox_into(b, t, s, ptr, idx, y)
        for j in range(p):
            e[j] = y[j] - z[j]
        g, en = select_group(e, ptr, idx)
        if en < tol:
            converged = True
            break
        for q in range(ptr[g], ptr[g + 1]):
            j = idx[q]
            ej = e[j]
            for i in range(p):
                b[i] += ST[j, i] * ej
            z[j] = y[j]
        if want_iter:
            iters[it] = z
        it += 1
        if not np.isfinite(en):
            finite = False
            break
        if want_hist:
            hist[it] = _objective(A, x, z, lam, mu, ptr, idx)
    prox_into(b, t, s, ptr, idx, y)
    return y, it, converged, finite, hist[: it + 1 if want_hist else 0], iters[:it]


@njit(cache=True)
def encoder_forward(WT, STs, ts, ss, layer_of, ptr, idx, X, want_trace):
    """Unrolled forward pass for every row of ``X`` (samples as rows).

    Returns codes ``N x p`` and, when requested, the per-layer trace:
    pre-prox ``b``, proposal ``y``, change ``e``, selected group, final ``b``.
    """
    n_samp, m = X.shape
    p = WT.shape[1]
    T = layer_of.size
    Z = np.empty((n_samp, p))
    nt = n_samp if want_trace else 0
    tb = np.empty((nt, T, p))
    ty = np.empty((nt, T, p))
    te = np.empty((nt, T, p))
    tg = np.empty((nt, T), dtype=np.int64)
    tbf = np.empty((nt, p))
    b = np.empty(p)
    z = np.empty(p)
    y = np.empty(p)
    e = np.empty(p)
    for n in range(n_samp):
        for i in range(p):
            b[i] = 0.0
            z[i] = 0.0
        for j in range(m):
            xj = X[n, j]
            for i in range(p):
                b[i] += WT[j, i] * xj
        for k in range(T):
            l = layer_of[k]
            prox_into(b, ts[l], ss[l], ptr, idx, y)
            for j in range(p):
                e[j] = y[j] - z[j]
            g, _ = select_group(e, ptr, idx)
            if want_trace:
                tb[n, k] = b
                ty[n, k] = y
                te[n, k] = e
                tg[n, k] = g
            ST = STs[l]
            for q in range(ptr[g], ptr[g + 1]):
                j = idx[q]
                ej = e[j]
                for i in range(p):
                    b[i] += ST[j, i] * ej
                z[j] = y[j]
        l = layer_of[T - 1]
        prox_into(b, ts[l], ss[l], ptr, idx, y)
        Z[n] = y
        if want_trace:
            tbf[n] = b
    return Z, tb, ty, te, tg, tbf


@njit(cache=True)
def _prox_group_backward(b, t, s_r, lo, hi, idx, vbar, bbar, dt, scratch):
    """Adjoint of one group of the prox. Returns the gradient wrt ``s_r``."""
    sq = 0.0
    for q in range(lo, hi):
        j = idx[q]
        a = abs(b[j]) - t[j]
        if a > 0.0:
            u = a if b[j] > 0.0 else -a
        else:
            u = 0.0
        scratch[j] = u
        sq += u * u
    n = np.sqrt(sq)
    if not (n > ZERO_NORM and n > s_r):
        return 0.0
    dot = 0.0
    for q in range(lo, hi):
        j = idx[q]
        dot += scratch[j] * vbar[j]
    f = (n - s_r) / n
    c = s_r / (n * n * n)
    for q in range(lo, hi):
        j = idx[q]
        if abs(b[j]) > t[j]:
            ub = f * vbar[j] + c * scratch[j] * dot
            bbar[j] += ub
            dt[j] -= ub if b[j] > 0.0 else -ub
    return -dot / n


@njit(cache=True)
def encoder_backward(WT, STs, ts, ss, layer_of, ptr, idx, X, tb, te, tg, tbf, U, want_dx):
    """Accumulate parameter gradients over samples (in row order) given ``U = dL/dZ``."""
    n_samp, m = X.shape
    p = WT.shape[1]
    T = layer_of.size
    L = STs.shape[0]
    n_groups = ptr.size - 1
    dW = np.zeros((p, m))
    dS = np.zeros((L, p, p))
    dt = np.zeros((L, p))
    ds = np.zeros((L, n_groups))
    dX = np.zeros((n_samp if want_dx else 0, m))
    bbar = np.empty(p)
    zbar = np.empty(p)
    ybar = np.empty(p)
    scratch = np.empty(p)
    for n in range(n_samp):
        for i in range(p):
            bbar[i] = 0.0
            zbar[i] = 0.0
        l = layer_of[T - 1]
        bf = tbf[n]
        ub = U[n]
        for r in range(n_groups):
            ds[l, r] += _prox_group_backward(bf, ts[l], ss[l, r], ptr[r], ptr[r + 1],
                                             idx, ub, bbar, dt[l], scratch)
        for k in range(T - 1, -1, -1):
            l = layer_of[k]
            g = tg[n, k]
            lo = ptr[g]
            hi = ptr[g + 1]
            ST = STs[l]
            for q in range(lo, hi):
                j = idx[q]
                ej = te[n, k, j]
                eb = 0.0
                for i in range(p):
                    dS[l, i, j] += bbar[i] * ej
                    eb += ST[j, i] * bbar[i]
                # z_k[G] = y[G] and e[G] = y[G] - z_{k-1}[G]
                ybar[j] = zbar[j] + eb
                zbar[j] = -eb
            ds[l, g] += _prox_group_backward(tb[n, k], ts[l], ss[l, g], lo, hi,
                                             idx, ybar, bbar, dt[l], scratch)
        for j in range(m):
            xj = X[n, j]
            for i in range(p):
                dW[i, j] += bbar[i] * xj
        if want_dx:
            for j in range(m):
                acc = 0.0
                for i in range(p):
                    acc += WT[j, i] * bbar[i]
                dX[n, j] = acc
    return dW, dS, dt, ds, dX


@njit(cache=True)
def input_stage(WT, t, s, ptr, idx, X):
    """``prox(W x)`` for every row of ``X``: the encoder with its layers removed."""
    n_samp, m = X.shape
    p = WT.shape[1]
    Z = np.empty((n_samp, p))
    b = np.empty(p)
    y = np.empty(p)
    for n in range(n_samp):
        for i in range(p):
            b[i] = 0.0
        for j in range(m):
            xj = X[n, j]
            for i in range(p):
                b[i] += WT[j, i] * xj
        prox_into(b, t, s, ptr, idx, y)
        Z[n] = y
    return Z
