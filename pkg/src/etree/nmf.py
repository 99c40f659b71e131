"""Baselines: regularized masked NMF, k-means, and the two-stage NMF + recursive k-means."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import admm, kernels
from ._monitor import Monitor
from .data import ObservedMatrix, rng_for
from .errors import ContractError, DivergenceError, NumericError
from .linalg import masked_objective, normalize_rows
from .model import FactorModel, NmfModel

logger = logging.getLogger(__name__)


def init_factors(X: ObservedMatrix, rank, seed):
    """Absolute standard normals scaled by ``sqrt(mean(X) / rank)``."""
    rng = rng_for(seed, 10)
    scale = np.sqrt(max(float(np.mean(X.vals)) if X.nnz else 1.0, 1e-12) / rank)
    A = np.abs(rng.standard_normal((X.n_rows, rank))) * scale
    B = np.abs(rng.standard_normal((X.n_cols, rank))) * scale
    return A, B


def nmf_objective(X, A, B, lam) -> float:
    ones = np.ones(B.shape[0])
    return masked_objective(X, A, B, ones) + 0.5 * lam * (np.sum(A * A) + np.sum(B * B))


def nmf_fit(
    X: ObservedMatrix,
    rank: int,
    lam: float = 0.0,
    seed: int = 0,
    max_epochs: int = 1000,
    *,
    admm_iters: int = 5,
    eps: float = 1e-4,
    tol: float = 1e-6,
    patience: int = 10,
    validation: ObservedMatrix | None = None,
    init=None,
) -> NmfModel:
    """Fit ``X ~ A @ B.T`` with ``A, B >= 0`` and ridge weight ``lam`` on both factors.

    Alternates the row-wise ADMM updates of ``A`` and ``B``. With a
    ``validation`` matrix the best epoch by validation RMSE is returned,
    otherwise training stops on a relative objective change below ``tol``.
    The trace holds ``(epoch, objective, val_rmse)`` tuples.
    """
    if not 1 <= rank <= min(X.n_rows, X.n_cols):
        raise ContractError(f"rank {rank} must lie in [1, min({X.n_rows}, {X.n_cols})]")
    if lam < 0:
        raise ContractError(f"lambda must be >= 0, got {lam}")
    A, B = init if init is not None else init_factors(X, rank, seed)
    A, B = A.copy(), B.copy()
    UA = np.zeros_like(A)
    UB = np.zeros_like(B)
    ones_m = np.ones(X.n_cols)
    mon = Monitor(tol, patience, validation is not None)
    trace = []
    for epoch in range(1, max_epochs + 1):
        A, UA, _ = admm.solve_rows(
            X, A, UA, B, ones_m, lam,
            rho=admm.scaled_rho(B, X.n_rows, rank), max_iter=admm_iters, eps=eps,
        )
        B, UB, _ = admm.solve_cols(
            X, B, UB, A, ones_m, lam,
            rho=admm.scaled_rho(A, X.n_cols, rank), max_iter=admm_iters, eps=eps,
        )
        try:
            obj = nmf_objective(X, A, B, lam)
        except NumericError as e:
            raise DivergenceError(epoch, float("nan")) from e
        val = _rmse_on(validation, A, B, ones_m) if validation is not None else float("nan")
        trace.append((epoch, obj, val))
        if mon.update(epoch, obj, val, lambda: (A.copy(), B.copy(), UA.copy(), UB.copy())):
            break
    if mon.snapshot is not None:
        A, B, UA, UB = mon.snapshot
    return NmfModel(A, B, lam, UA, UB, trace)


def _rmse_on(V, A, B, d):
    return float(np.sqrt(kernels.masked_sse(V.rows, V.cols, V.vals, A, B, d) / V.nnz))


# --------------------------------------------------------------------------
# k-means


@dataclass
class KmeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    history: list = field(default_factory=list)


def nearest(points, centers) -> np.ndarray:
    """Index of the closest center per point; ties go to the lowest index."""
    diff = points[:, None, :] - centers[None, :, :]
    dist = np.einsum("ijk,ijk->ij", diff, diff)
    return np.argmin(dist, axis=1)


def _inertia(points, centers, assign):
    diff = points - centers[assign]
    return float(np.einsum("ij,ij->", diff, diff))


def _farthest_point_init(points, k, first):
    centers = [first]
    dmin = np.sum((points - points[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dmin))
        centers.append(nxt)
        dmin = np.minimum(dmin, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[centers].copy()


def lloyd(points, centers, max_iters=300):
    """Lloyd iterations from given centers; empty clusters grab the worst-fit point.

    Stops when the assignment is stable or the inertia stops decreasing. The
    history holds the inertia after every centroid step.
    """
    centers = centers.copy()
    k = centers.shape[0]
    assign = nearest(points, centers)
    history = []
    for _ in range(max_iters):
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
        for c in np.flatnonzero(np.bincount(assign, minlength=k) == 0):
            far = _worst_fit(points, centers, assign)
            if np.bincount(assign, minlength=k)[assign[far]] <= 1:
                break
            centers[c] = points[far]
            assign[far] = c
        history.append(_inertia(points, centers, assign))
        new = nearest(points, centers)
        if np.array_equal(new, assign) or (len(history) > 1 and history[-1] >= history[-2]):
            break
        assign = new
    return centers, assign, history


def transfer_pass(points, centers, assign):
    """Single-point moves between clusters that lower the inertia (Hartigan's rule).

    Moving point ``x`` from cluster ``a`` (size ``n_a > 1``) to ``b`` changes the
    inertia by ``n_b/(n_b+1) |x - c_b|^2 - n_a/(n_a-1) |x - c_a|^2``. The most
    improving move of each point is applied in index order, with centroids kept
    as exact means. Returns the number of moves made.
    """
    k = centers.shape[0]
    counts = np.bincount(assign, minlength=k)
    moved = 0
    for i in range(points.shape[0]):
        a = assign[i]
        if counts[a] <= 1:
            continue
        x = points[i]
        d = np.sum((centers - x) ** 2, axis=1)
        gain = counts / (counts + 1.0) * d
        gain[a] = np.inf
        b = int(np.argmin(gain))
        if gain[b] < counts[a] / (counts[a] - 1.0) * d[a] * (1 - 1e-12):
            centers[a] = (centers[a] * counts[a] - x) / (counts[a] - 1)
            centers[b] = (centers[b] * counts[b] + x) / (counts[b] + 1)
            counts[a] -= 1
            counts[b] += 1
            assign[i] = b
            moved += 1
    return moved


def _worst_fit(points, centers, assign):
    """Point farthest from its own centroid, among clusters with >1 member."""
    counts = np.bincount(assign, minlength=centers.shape[0])
    dist = np.sum((points - centers[assign]) ** 2, axis=1)
    dist[counts[assign] <= 1] = -1.0
    return int(np.argmax(dist))


def kmeans(points, k, seed=0, max_iters=300, restarts=5) -> KmeansResult:
    """Lloyd's k-means with farthest-point seeding and ``restarts`` seeded restarts.

    Each restart alternates Lloyd iterations with single-point transfer passes
    until neither changes the partition; the lowest-inertia restart wins.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"k={k} must lie in [1, {n}]")
    rng = rng_for(seed, 20)
    firsts = rng.choice(n, size=min(restarts, n), replace=False)
    best = None
    for first in firsts:
        centers, assign, hist = lloyd(points, _farthest_point_init(points, k, int(first)), max_iters)
        for _ in range(max_iters):
            if not transfer_pass(points, centers, assign):
                break
            # recompute exact means, then let Lloyd settle the new partition
            for c in range(k):
                centers[c] = points[assign == c].mean(axis=0)
            hist.append(_inertia(points, centers, assign))
            centers, assign, more = lloyd(points, centers, max_iters)
            hist.extend(more)
        res = KmeansResult(centers, assign, _inertia(points, centers, assign), hist)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


# --------------------------------------------------------------------------
# two-stage baseline


def nmf_km(X, rank, lam, layer_sizes, seed=0, nmf_model=None, **nmf_kw) -> FactorModel:
    """NMF, then recursive k-means of item embeddings up the given layer sizes.

    Items are represented by their root centroid, i.e. ``B1 = S_1 ... S_{Q-1} B_Q``.
    With a single layer this is plain NMF.
    """
    sizes = tuple(int(m) for m in layer_sizes)
    if sizes[0] != X.n_cols:
        raise ContractError(f"first layer size {sizes[0]} must equal the column count {X.n_cols}")
    if any(b >= a for a, b in zip(sizes, sizes[1:])):
        raise ContractError(f"layer sizes must be strictly decreasing, got {sizes}")
    base = nmf_model if nmf_model is not None else nmf_fit(X, rank, lam, seed, **nmf_kw)
    B = [base.B]
    parents = []
    for q, m in enumerate(sizes[1:], start=1):
        km = kmeans(B[-1], m, seed=seed + 7919 * q)
        B.append(km.centroids)
        parents.append(km.assignment.astype(np.int64))
    B1 = B[-1]
    for p in reversed(parents):
        B1 = B1[p]
    B[0] = B1
    return FactorModel(
        A=base.A,
        d=np.ones(X.n_cols),
        B=B,
        parents=parents,
        Z=[normalize_rows(b) for b in B[:-1]],
        dual_A=base.dual_A if base.dual_A is not None else np.zeros_like(base.A),
        dual_B1=np.zeros_like(B1),
        trace=list(base.trace),
    )
