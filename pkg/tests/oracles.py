"""Independent reference computations used by the tests.

Nothing here imports the package's numerical code: every oracle is a plain
loop, an enumeration or an explicit inverse.
"""
import itertools
import math

import numpy as np


def double_loop_objective(dense, mask, A, B1, d):
    """1/2 sum over observed (i, j) of (x_ij - d_j * A_i . B1_j)^2, one entry at a time."""
    total = 0.0
    n, m = dense.shape
    for i in range(n):
        for j in range(m):
            if mask[i, j]:
                pred = 0.0
                for k in range(A.shape[1]):
                    pred += A[i, k] * B1[j, k]
                total += (dense[i, j] - d[j] * pred) ** 2
    return 0.5 * total


def double_loop_surrogate(dense, mask, A, d, B, parents, Z, mu, eta, lam):
    """Surrogate objective built term by term with explicit one-hot matrices."""
    val = double_loop_objective(dense, mask, A, B[0], d)
    for q, p in enumerate(parents):
        S = np.zeros((len(p), B[q + 1].shape[0]))
        for i, k in enumerate(p):
            S[i, k] = 1.0
        diff = B[q] - S @ B[q + 1]
        val += 0.5 * mu * sum(float(v) ** 2 for v in diff.ravel())
    for q, Zq in enumerate(Z):
        diff = B[q] - Zq
        val += 0.5 * eta * sum(float(v) ** 2 for v in diff.ravel())
    val += 0.5 * lam * sum(float(v) ** 2 for v in A.ravel())
    return val


def nnls_enumerate(G, f):
    """argmin_{x >= 0} 1/2 x'Gx - f'x for SPD ``G`` by enumerating supports.

    For each support the unconstrained solution on that support is checked for
    primal feasibility and for a nonnegative gradient off the support (KKT).
    Among KKT points the lowest objective wins (there is exactly one for SPD G).
    """
    r = len(f)
    best, best_val = None, math.inf
    for mask in itertools.product([False, True], repeat=r):
        sup = np.flatnonzero(mask)
        x = np.zeros(r)
        if sup.size:
            x[sup] = np.linalg.solve(G[np.ix_(sup, sup)], f[sup])
        if np.any(x < -1e-13):
            continue
        grad = G @ x - f
        off = np.setdiff1d(np.arange(r), sup)
        if off.size and np.any(grad[off] < -1e-10):
            continue
        val = 0.5 * x @ G @ x - f @ x
        if val < best_val:
            best, best_val = np.maximum(x, 0.0), val
    return best


def row_problem(dense, mask, i, other, scale, reg, extra_row):
    """Gram matrix and linear term of row ``i`` of a masked ridge problem."""
    cols = np.flatnonzero(mask[i])
    Bt = other[cols] * scale[cols, None]
    G = Bt.T @ Bt + reg * np.eye(other.shape[1])
    f = Bt.T @ dense[i, cols] + extra_row
    return G, f


def naive_admm_row(dense, mask, i, other, scale, reg, extra_row, a0, u0, rho, max_iter, eps):
    """ADMM for one row, rebuilding the Gram matrix and inverting it every iteration."""
    r = other.shape[1]
    a, u = a0.astype(float).copy(), u0.astype(float).copy()
    iters = 0
    for _ in range(max_iter):
        cols = np.flatnonzero(mask[i])
        Bt = np.array([[other[j, k] * scale[j] for k in range(r)] for j in cols]).reshape(len(cols), r)
        G = Bt.T @ Bt + (reg + rho) * np.eye(r)
        F = Bt.T @ dense[i, cols] + extra_row
        at = np.linalg.inv(G) @ (F + rho * (a + u))
        prev = a
        a = np.maximum(at - u, 0.0)
        u = u + a - at
        iters += 1
        p = _ratio(math.sqrt(np.sum((a - at) ** 2)), math.sqrt(np.sum(a**2)))
        d = _ratio(math.sqrt(np.sum((a - prev) ** 2)), math.sqrt(np.sum(u**2)))
        if p < eps and d < eps:
            break
    return a, u, iters


def _ratio(num, den):
    if den > 0:
        return num / den
    return 0.0 if num == 0 else math.inf


def brute_kmeans(points, k):
    """Minimum inertia over all assignments of points to k labelled clusters."""
    n = len(points)
    best = math.inf
    for labels in itertools.product(range(k), repeat=n):
        labels = np.array(labels)
        total = 0.0
        for c in range(k):
            members = points[labels == c]
            if len(members):
                total += float(np.sum((members - members.mean(axis=0)) ** 2))
        best = min(best, total)
    return best


def brute_match(est, truth):
    """Best mean column cosine over all permutations; returns (score, perm)."""
    R = est.shape[1]

    def cos(a, b):
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        return 0.0 if na == 0 or nb == 0 else float(a @ b / (na * nb))

    best, best_perm = -math.inf, None
    for perm in itertools.permutations(range(R)):
        s = sum(cos(truth[:, k], est[:, perm[k]]) for k in range(R)) / R
        if s > best:
            best, best_perm = s, perm
    return best, np.array(best_perm)


def linear_scan_nearest(children, parents):
    out = []
    for c in children:
        best, arg = math.inf, -1
        for k, p in enumerate(parents):
            dist = sum((a - b) ** 2 for a, b in zip(c, p))
            if dist < best:
                best, arg = dist, k
        out.append(arg)
    return np.array(out)


def analytic_grad_A(dense, mask, A, B1, d, lam):
    """Gradient of the masked fit plus (lam/2)|A|^2 with respect to A."""
    W = mask.astype(float)
    Bt = B1 * d[:, None]
    R = W * (A @ Bt.T - dense)
    return R @ Bt + lam * A


def fd_grad(fun, A, h=1e-5):
    g = np.zeros_like(A)
    for idx in np.ndindex(*A.shape):
        Ap, Am = A.copy(), A.copy()
        Ap[idx] += h
        Am[idx] -= h
        g[idx] = (fun(Ap) - fun(Am)) / (2 * h)
    return g


def chance_tree_accuracy(sizes, trials, rng):
    """Monte-Carlo tree accuracy of uniformly random trees against a random truth,
    scored with the same relabeling rule (Hungarian on overlap counts per layer)."""
    from scipy.optimize import linear_sum_assignment

    def random_tree():
        parents = []
        for a, b in zip(sizes, sizes[1:]):
            while True:
                p = rng.integers(0, b, size=a)
                if np.bincount(p, minlength=b).min() > 0:
                    break
            parents.append(p)
        return parents

    def paths(parents):
        cur = np.arange(sizes[0])
        cols = []
        for p in parents:
            cur = p[cur]
            cols.append(cur)
        return np.stack(cols, 1)

    accs = []
    for _ in range(trials):
        t, e = paths(random_tree()), paths(random_tree())
        hits = np.ones(sizes[0], bool)
        for q in range(len(sizes) - 1):
            m = sizes[q + 1]
            ov = np.zeros((m, m))
            for a, b in zip(e[:, q], t[:, q]):
                ov[a, b] += 1
            r, c = linear_sum_assignment(-ov)
            mp = np.full(m, -1)
            mp[r] = c
            hits &= mp[e[:, q]] == t[:, q]
        accs.append(hits.mean())
    return float(np.mean(accs)), float(np.std(accs))
