"""Compiled kernels. Signatures mirror ``_kernels_numpy`` one-for-one."""
import numpy as np
from numba import njit, prange

_opts = dict(cache=True, nogil=True)


@njit(**_opts)
def chol_inplace(G):
    """Overwrite the lower triangle of ``G`` with its Cholesky factor.

    Returns -1 on success, otherwise the index of the failing pivot.
    """
    n = G.shape[0]
    for j in range(n):
        s = G[j, j]
        for k in range(j):
            s -= G[j, k] * G[j, k]
        if not s > 0.0:
            return j
        ljj = np.sqrt(s)
        G[j, j] = ljj
        for i in range(j + 1, n):
            t = G[i, j]
            for k in range(j):
                t -= G[i, k] * G[j, k]
            G[i, j] = t / ljj
    for i in range(n):
        for j in range(i + 1, n):
            G[i, j] = 0.0
    return -1


@njit(**_opts)
def chol_solve_inplace(L, y):
    n = L.shape[0]
    for i in range(n):
        t = y[i]
        for k in range(i):
            t -= L[i, k] * y[k]
        y[i] = t / L[i, i]
    for i in range(n - 1, -1, -1):
        t = y[i]
        for k in range(i + 1, n):
            t -= L[k, i] * y[k]
        y[i] = t / L[i, i]


@njit(**_opts)
def _ratio(num, den):
    if den > 0.0:
        return num / den
    if num == 0.0:
        return 0.0
    return np.inf


@njit(parallel=True, **_opts)
def admm_rows(indptr, idx, coef, vals, other, cur, dual, extra, shift, rho, max_iter, eps):
    n, r = cur.shape
    out = cur.copy()
    out_dual = dual.copy()
    iters = np.zeros(n, dtype=np.int64)
    pres = np.zeros(n)
    dres = np.zeros(n)
    failed = np.full(n, -1, dtype=np.int64)
    for i in prange(n):
        G = np.zeros((r, r))
        F = extra[i].copy()
        for e in range(indptr[i], indptr[i + 1]):
            j = idx[e]
            c = coef[e]
            x = vals[e]
            for a in range(r):
                va = c * other[j, a]
                F[a] += va * x
                for b in range(a + 1):
                    G[a, b] += va * c * other[j, b]
        for a in range(r):
            G[a, a] += shift
            for b in range(a):
                G[b, a] = G[a, b]
        piv = chol_inplace(G)
        if piv >= 0:
            failed[i] = piv
            continue
        a_row = out[i]
        u_row = out_dual[i]
        at = np.empty(r)
        for k in range(max_iter):
            for a in range(r):
                at[a] = F[a] + rho * (a_row[a] + u_row[a])
            chol_solve_inplace(G, at)
            dnum = 0.0
            pnum = 0.0
            anorm = 0.0
            unorm = 0.0
            for a in range(r):
                prev = a_row[a]
                v = at[a] - u_row[a]
                if v < 0.0:
                    v = 0.0
                a_row[a] = v
                u_row[a] += v - at[a]
                dnum += (v - prev) * (v - prev)
                pnum += (v - at[a]) * (v - at[a])
                anorm += v * v
                unorm += u_row[a] * u_row[a]
            iters[i] = k + 1
            pres[i] = _ratio(np.sqrt(pnum), np.sqrt(anorm))
            dres[i] = _ratio(np.sqrt(dnum), np.sqrt(unorm))
            if pres[i] < eps and dres[i] < eps:
                break
    return out, out_dual, iters, pres, dres, failed


@njit(**_opts)
def entry_predictions(rows, cols, A, B, d):
    m = rows.shape[0]
    r = A.shape[1]
    out = np.empty(m)
    for e in range(m):
        i = rows[e]
        j = cols[e]
        s = 0.0
        for a in range(r):
            s += A[i, a] * B[j, a]
        out[e] = s * d[j]
    return out


@njit(**_opts)
def masked_sse(rows, cols, vals, A, B, d):
    r = A.shape[1]
    total = 0.0
    for e in range(rows.shape[0]):
        i = rows[e]
        j = cols[e]
        s = 0.0
        for a in range(r):
            s += A[i, a] * B[j, a]
        res = vals[e] - s * d[j]
        total += res * res
    return total


@njit(parallel=True, **_opts)
def column_scales(indptr, idx, vals, A, B, d_prev, tiny):
    m, r = B.shape
    out = d_prev.copy()
    for j in prange(m):
        num = 0.0
        den = 0.0
        for e in range(indptr[j], indptr[j + 1]):
            i = idx[e]
            h = 0.0
            for a in range(r):
                h += A[i, a] * B[j, a]
            num += h * vals[e]
            den += h * h
        if den >= tiny:
            out[j] = num / den
    return out
