"""Pure-numpy kernels, vectorized across rows where the algebra allows."""
import numpy as np


def _ratio(num, den):
    out = np.zeros_like(num)
    pos = den > 0
    out[pos] = num[pos] / den[pos]
    out[~pos & (num != 0)] = np.inf
    return out


def admm_rows(indptr, idx, coef, vals, other, cur, dual, extra, shift, rho, max_iter, eps):
    n, r = cur.shape
    design = coef[:, None] * other[idx]
    G = np.empty((n, r, r))
    F = extra.copy()
    for i in range(n):
        blk = design[indptr[i]:indptr[i + 1]]
        G[i] = blk.T @ blk
        F[i] += blk.T @ vals[indptr[i]:indptr[i + 1]]
    G[:, np.arange(r), np.arange(r)] += shift
    failed = np.full(n, -1, dtype=np.int64)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        # locate the offending rows one at a time
        L = np.empty_like(G)
        for i in range(n):
            try:
                L[i] = np.linalg.cholesky(G[i])
            except np.linalg.LinAlgError:
                failed[i] = 0
                L[i] = np.eye(r)
    # the factor is fixed across iterations, so invert the triangle once
    Linv = np.linalg.inv(L)

    A = cur.copy()
    U = dual.copy()
    iters = np.zeros(n, dtype=np.int64)
    pres = np.zeros(n)
    dres = np.zeros(n)
    active = failed < 0
    for k in range(max_iter):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        rhs = F[rows] + rho * (A[rows] + U[rows])
        y = np.einsum("nij,nj->ni", Linv[rows], rhs)
        at = np.einsum("nji,nj->ni", Linv[rows], y)
        prev = A[rows]
        a_new = np.maximum(at - U[rows], 0.0)
        u_new = U[rows] + a_new - at
        A[rows] = a_new
        U[rows] = u_new
        iters[rows] = k + 1
        p = _ratio(np.sqrt(((a_new - at) ** 2).sum(1)), np.sqrt((a_new**2).sum(1)))
        d = _ratio(np.sqrt(((a_new - prev) ** 2).sum(1)), np.sqrt((u_new**2).sum(1)))
        pres[rows] = p
        dres[rows] = d
        active[rows[(p < eps) & (d < eps)]] = False
    return A, U, iters, pres, dres, failed


def entry_predictions(rows, cols, A, B, d):
    return np.einsum("ij,ij->i", A[rows], B[cols]) * d[cols]


def masked_sse(rows, cols, vals, A, B, d):
    res = vals - entry_predictions(rows, cols, A, B, d)
    return float(res @ res)


def column_scales(indptr, idx, vals, A, B, d_prev, tiny):
    m = B.shape[0]
    counts = np.diff(indptr)
    cols = np.repeat(np.arange(m), counts)
    h = np.einsum("ij,ij->i", A[idx], B[cols])
    num = np.bincount(cols, weights=h * vals, minlength=m)
    den = np.bincount(cols, weights=h * h, minlength=m)
    out = d_prev.copy()
    ok = den >= tiny
    out[ok] = num[ok] / den[ok]
    return out
