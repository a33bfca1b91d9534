"""Compiled inner loops. Everything here releases the GIL so window fits can run on threads."""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _cell(G, s, d, c, t):
    R = G.shape[0]
    out = 0.0
    for a in range(R):
        for b in range(R):
            sd = s[a] * d[b]
            for e in range(R):
                sdc = sd * c[e]
                for f in range(R):
                    out += G[a, b, e, f] * sdc * t[f]
    return out


@njit(cache=True, nogil=True)
def recon_cells(G, S, D, C, T, idx):
    out = np.empty(idx.shape[0])
    for p in range(idx.shape[0]):
        out[p] = _cell(G, S[idx[p, 0]], D[idx[p, 1]], C[idx[p, 2]], T[idx[p, 3]])
    return out


@njit(cache=True, nogil=True)
def _mode_grad(G, s, d, c, t, mode, out):
    R = G.shape[0]
    for r in range(R):
        out[r] = 0.0
    for a in range(R):
        for b in range(R):
            for e in range(R):
                for f in range(R):
                    g = G[a, b, e, f]
                    if mode == 0:
                        out[a] += g * d[b] * c[e] * t[f]
                    elif mode == 1:
                        out[b] += g * s[a] * c[e] * t[f]
                    elif mode == 2:
                        out[e] += g * s[a] * d[b] * t[f]
                    else:
                        out[f] += g * s[a] * d[b] * c[e]


@njit(cache=True, nogil=True)
def sgd_epoch_kernel(G, S, D, C, T, idx, vals, order, X, Y, LZ, IU, eta, w):
    """One pass of per-cell updates, in place.

    ``w`` = (reg, sda, nma, mc, ts) effective weights; ``IU`` = I - U.
    Returns -1, or the position in ``order`` of the first cell whose update
    produced a non-finite value.
    """
    R = G.shape[0]
    N = S.shape[0]
    M = C.shape[0]
    Q = T.shape[0]
    w_reg, w_sda, w_nma, w_mc, w_ts = w[0], w[1], w[2], w[3], w[4]
    g = np.empty(R)
    step = np.empty(R)
    v = np.empty(R)
    for pos in range(order.shape[0]):
        p = order[pos]
        i, j, k, l = idx[p, 0], idx[p, 1], idx[p, 2], idx[p, 3]
        err = _cell(G, S[i], D[j], C[k], T[l]) - vals[p]
        if not np.isfinite(err):
            return pos

        # source row
        _mode_grad(G, S[i], D[j], C[k], T[l], 0, g)
        for r in range(R):
            step[r] = w_reg * S[i, r] + err * g[r]
        if w_sda != 0.0:
            for q in range(N):
                res = -X[i, q]
                for r in range(R):
                    res += S[i, r] * D[q, r]
                for r in range(R):
                    step[r] += w_sda * res * D[q, r]
        for r in range(R):
            S[i, r] -= eta * step[r]

        # destination row
        _mode_grad(G, S[i], D[j], C[k], T[l], 1, g)
        for r in range(R):
            step[r] = w_reg * D[j, r] + err * g[r]
        if w_sda != 0.0:
            for q in range(N):
                res = -X[q, j]
                for r in range(R):
                    res += S[q, r] * D[j, r]
                for r in range(R):
                    step[r] += w_sda * res * S[q, r]
        if w_nma != 0.0:
            for q in range(M):
                res = -Y[j, q]
                for r in range(R):
                    res += D[j, r] * C[q, r]
                for r in range(R):
                    step[r] += w_nma * res * C[q, r]
        for r in range(R):
            D[j, r] -= eta * step[r]

        # meme row
        _mode_grad(G, S[i], D[j], C[k], T[l], 2, g)
        for r in range(R):
            step[r] = w_reg * C[k, r] + err * g[r]
        if w_nma != 0.0:
            for q in range(N):
                res = -Y[q, k]
                for r in range(R):
                    res += D[q, r] * C[k, r]
                for r in range(R):
                    step[r] += w_nma * res * D[q, r]
        if w_mc != 0.0:
            for q in range(M):
                lz = LZ[k, q]
                if lz != 0.0:
                    for r in range(R):
                        step[r] += w_mc * lz * C[q, r]
        for r in range(R):
            C[k, r] -= eta * step[r]

        # time row: row l of (I-U)^T (I-U) T
        _mode_grad(G, S[i], D[j], C[k], T[l], 3, g)
        for r in range(R):
            step[r] = w_reg * T[l, r] + err * g[r]
        if w_ts != 0.0:
            for q in range(Q):
                a = IU[q, l]
                if a != 0.0:
                    for r in range(R):
                        v[r] = 0.0
                    for u in range(Q):
                        b = IU[q, u]
                        if b != 0.0:
                            for r in range(R):
                                v[r] += b * T[u, r]
                    for r in range(R):
                        step[r] += w_ts * a * v[r]
        for r in range(R):
            T[l, r] -= eta * step[r]

        # core
        check = 0.0
        for a in range(R):
            for b in range(R):
                sd = S[i, a] * D[j, b]
                for e in range(R):
                    sdc = sd * C[k, e]
                    for f in range(R):
                        G[a, b, e, f] -= eta * (w_reg * G[a, b, e, f] + err * sdc * T[l, f])
                        check += G[a, b, e, f]
        for r in range(R):
            check += S[i, r] + D[j, r] + C[k, r] + T[l, r]
        if not np.isfinite(check):
            return pos
    return -1
