"""Alternating optimization for tree-structured nonnegative embeddings.

The model factors a partially observed ``X`` (N x M_1) as
``X ~ A @ B_1.T @ diag(d)`` and ties the item rows of ``B_1`` to a learned
hierarchy ``B_q ~ S_q @ B_{q+1}`` with one-hot assignments ``S_q``. Unit-norm
rows of ``B_q`` (q < Q) are handled through slack copies ``Z_q`` coupled with
weight ``eta``. One epoch updates, in order: ``A`` and ``B_1`` (row-wise
ADMM), ``d`` and ``Z_1`` (closed form), then ``tree_iters`` passes of the tree
loop over the intermediate layers, the assignments and the root centroids.
"""
from __future__ import annotations

import logging

import numpy as np

from . import admm, kernels
from ._monitor import Monitor
from .data import ObservedMatrix, rng_for
from .errors import ContractError, DivergenceError, NumericError
from .linalg import cholesky_factor, cholesky_solve, masked_objective, normalize_rows
from .model import FactorModel, Hyperparams, NmfModel, TreeSpec
from .nmf import nearest, nmf_fit

logger = logging.getLogger(__name__)

D_TINY = 1e-12


# --------------------------------------------------------------------------
# block updates


def update_A_admm(X: ObservedMatrix, model: FactorModel, hp: Hyperparams):
    """ADMM pass for ``A`` with ``B_1`` and ``d`` held fixed.

    Returns ``(A, dual_A, AdmmStatus)``; the model is not modified.
    """
    Bt = model.item_embeddings()
    rho = admm.scaled_rho(Bt, X.n_rows, model.rank)
    return admm.solve_rows(
        X, model.A, model.dual_A, model.B[0], model.d, hp.lam,
        rho=rho, max_iter=hp.admm_iters, eps=hp.eps,
    )


def update_B1_admm(X: ObservedMatrix, model: FactorModel, hp: Hyperparams):
    """ADMM pass for ``B_1`` including the tree pull and the slack coupling.

    Row ``j`` minimizes its data term plus ``mu/2 |b - (S_1 B_2)_j|^2`` and
    ``eta/2 |b - Z_1[j]|^2`` over ``b >= 0``.
    """
    A, d = model.A, model.d
    extra = hp.eta * model.Z[0] if model.Z else np.zeros_like(model.B[0])
    reg = hp.eta if model.Z else 0.0
    if model.Q > 1:
        extra = extra + hp.mu * model.B[1][model.parents[0]]
        reg += hp.mu
    scale2 = float(np.mean(d * d)) if d.size else 1.0
    rho = max(float(np.einsum("ij,ij->", A, A)) * scale2 / (X.n_cols * model.rank), admm.RHO_FLOOR)
    return admm.solve_cols(
        X, model.B[0], model.dual_B1, A, d, reg, extra,
        rho=rho, max_iter=hp.admm_iters, eps=hp.eps,
    )


def update_D(X: ObservedMatrix, A, B1, d_prev) -> np.ndarray:
    """Per-column least-squares scale ``d_j = h_j.x_j / h_j.h_j``.

    Columns without observations or with ``h_j.h_j < 1e-12`` keep ``d_prev``.
    """
    return kernels.column_scales(X.col_ptr, X.csc_rows, X.csc_vals, A, B1, np.asarray(d_prev, float), D_TINY)


def update_Z(B) -> np.ndarray:
    return normalize_rows(B)


def update_S(B_child, B_parent) -> np.ndarray:
    """Nearest parent row for every child row (lowest index on ties)."""
    return nearest(np.asarray(B_child, float), np.asarray(B_parent, float)).astype(np.int64)


def child_sums(B_child, parent, n_parents) -> np.ndarray:
    """``S.T @ B_child`` for the one-hot ``S`` encoded by ``parent``."""
    out = np.zeros((n_parents, B_child.shape[1]))
    np.add.at(out, parent, B_child)
    return out


def solve_intermediate(B_child, parent_child, B_next, parent_self, Z, mu, eta) -> np.ndarray:
    """Exact minimizer over an intermediate layer ``B_q``.

    Solves ``(mu S_{q-1}^T S_{q-1} + (mu + eta) I) B_q =
    mu S_{q-1}^T B_{q-1} + mu S_q B_{q+1} + eta Z_q`` with one factorization
    shared by all columns. ``S^T S`` is diagonal (child counts) since the rows
    of ``S`` are one-hot.
    """
    m = Z.shape[0]
    counts = np.bincount(parent_child, minlength=m).astype(float)
    H = np.diag(mu * counts + (mu + eta))
    L = cholesky_factor(H)
    rhs = mu * child_sums(B_child, parent_child, m) + mu * B_next[parent_self] + eta * Z
    return cholesky_solve(L, rhs)


def update_centroids(B_child, parent, B_prev) -> np.ndarray:
    """Root rows as means of their children.

    A root with no children takes the child row farthest from its current
    parent (each such child used once), which leaves the objective unchanged
    for this step.
    """
    m = B_prev.shape[0]
    counts = np.bincount(parent, minlength=m)
    out = B_prev.copy()
    sums = child_sums(B_child, parent, m)
    has = counts > 0
    out[has] = sums[has] / counts[has, None]
    empty = np.flatnonzero(~has)
    if empty.size:
        dist = np.sum((B_child - out[parent]) ** 2, axis=1)
        order = np.argsort(-dist, kind="stable")
        for c, i in zip(empty, order):
            out[c] = B_child[i]
    return out


def leaf_counts(parents, sizes) -> list:
    """Number of leaf descendants of every node, for layers 2..Q."""
    out = []
    cur = np.arange(sizes[0])
    for q, p in enumerate(parents, start=1):
        cur = p[cur]
        out.append(np.bincount(cur, minlength=sizes[q]))
    return out


def reseed_leafless_roots(B_child, parent, B_root, child_leaves) -> np.ndarray:
    """Move every root without leaf descendants onto a live child far from its root.

    A root whose subtree holds no leaf leaves its composite assignment column
    empty. Such a root is placed on the child row (among children that do have
    leaves) farthest from its current root, each child used at most once.
    """
    m = B_root.shape[0]
    live = child_leaves > 0
    counts = np.bincount(parent[live], minlength=m)
    dead = np.flatnonzero(counts == 0)
    if dead.size == 0:
        return B_root
    out = B_root.copy()
    dist = np.sum((B_child - B_root[parent]) ** 2, axis=1)
    dist[~live] = -np.inf
    order = np.argsort(-dist, kind="stable")
    for c, i in zip(dead, order[: live.sum()]):
        out[c] = B_child[i]
    return out


def tree_loop(model: FactorModel, hp: Hyperparams, on_step=None) -> FactorModel:
    """``tree_iters`` passes over intermediate layers, assignments and roots (in place)."""
    Q = model.Q
    B, P, Z = model.B, model.parents, model.Z
    for _ in range(hp.tree_iters):
        for k in range(1, Q - 1):
            B[k] = solve_intermediate(B[k - 1], P[k - 1], B[k + 1], P[k], Z[k], hp.mu, hp.eta)
            _emit(on_step, "B_q", model)
            P[k - 1] = update_S(B[k - 1], B[k])
            _emit(on_step, "S", model)
            Z[k] = update_Z(B[k])
            _emit(on_step, "Z", model)
        B[Q - 1] = update_centroids(B[Q - 2], P[Q - 2], B[Q - 1])
        _emit(on_step, "B_Q", model)
        if Q > 2:
            below = leaf_counts(P[:-1], model.layer_sizes)[-1]
            B[Q - 1] = reseed_leafless_roots(B[Q - 2], P[Q - 2], B[Q - 1], below)
            _emit(on_step, "reseed", model)
        P[Q - 2] = update_S(B[Q - 2], B[Q - 1])
        _emit(on_step, "S", model)
    return model


def _emit(hook, name, model):
    if hook is not None:
        hook(name, model)


def surrogate_objective(model: FactorModel, X: ObservedMatrix, hp: Hyperparams) -> float:
    """Data fit plus tree, slack and ridge penalties of the current state."""
    val = masked_objective(X, model.A, model.B[0], model.d)
    for q, p in enumerate(model.parents):
        r = model.B[q] - model.B[q + 1][p]
        val += 0.5 * hp.mu * float(np.einsum("ij,ij->", r, r))
    for q, Zq in enumerate(model.Z):
        r = model.B[q] - Zq
        val += 0.5 * hp.eta * float(np.einsum("ij,ij->", r, r))
    return val + 0.5 * hp.lam * float(np.einsum("ij,ij->", model.A, model.A))


def rmse_on(model: FactorModel, V: ObservedMatrix, clip=None) -> float:
    pred = kernels.entry_predictions(V.rows, V.cols, model.A, model.B[0], model.d)
    if clip is not None:
        pred = np.clip(pred, clip[0], clip[1])
    res = V.vals - pred
    return float(np.sqrt(res @ res / V.nnz))


# --------------------------------------------------------------------------
# initialization and the outer loop


def random_assignment(n_child, n_parent, rng, attempts=100) -> np.ndarray:
    """Uniform one-hot assignment in which every parent gets at least one child."""
    if n_parent > n_child:
        raise ContractError(f"cannot cover {n_parent} parents with {n_child} children")
    for _ in range(attempts):
        p = rng.integers(0, n_parent, size=n_child)
        if np.bincount(p, minlength=n_parent).min() > 0:
            return p.astype(np.int64)
    # round-robin over a random child order guarantees coverage
    p = np.empty(n_child, dtype=np.int64)
    p[rng.permutation(n_child)] = np.arange(n_child) % n_parent
    return p


def init_model(X: ObservedMatrix, hp: Hyperparams, tree: TreeSpec, A, B1) -> FactorModel:
    """Start state: given ``A, B_1``, random upper layers and assignments, ``d = 1``, zero duals."""
    rng = rng_for(hp.seed, 30)
    sizes = tree.layer_sizes
    B = [np.array(B1, dtype=float)]
    for m in sizes[1:]:
        B.append(normalize_rows(np.abs(rng.standard_normal((m, hp.rank)))))
    parents = [random_assignment(a, b, rng) for a, b in zip(sizes, sizes[1:])]
    Z = [normalize_rows(b) for b in B[:-1]]
    return FactorModel(
        A=np.array(A, dtype=float),
        d=np.ones(sizes[0]),
        B=B,
        parents=parents,
        Z=Z,
        dual_A=np.zeros((X.n_rows, hp.rank)),
        dual_B1=np.zeros((sizes[0], hp.rank)),
        hyper=hp,
    )


def etree_fit(
    X: ObservedMatrix,
    hp: Hyperparams,
    tree: TreeSpec,
    validation: ObservedMatrix | None = None,
    init: NmfModel | None = None,
    callback=None,
    on_step=None,
) -> FactorModel:
    """Fit the tree-structured factorization by alternating block updates.

    Parameters
    ----------
    X : ObservedMatrix
        Training entries.
    hp, tree : Hyperparams, TreeSpec
    validation : ObservedMatrix, optional
        Enables early stopping on validation RMSE (best epoch is returned).
    init : NmfModel, optional
        Starting ``A, B_1``; by default a masked NMF with the same rank,
        ridge weight and seed is run for ``hp.init_epochs`` epochs.
    callback : callable, optional
        ``callback(epoch, model)`` after every epoch.
    on_step : callable, optional
        ``on_step(name, model)`` after every block update, for auditing.

    Returns
    -------
    FactorModel
        With ``trace`` holding ``(epoch, surrogate, val_rmse)`` tuples.
    """
    N, M1 = X.shape
    if tree.layer_sizes[0] != M1:
        raise ContractError(f"first layer size {tree.layer_sizes[0]} must equal the column count {M1}")
    if hp.rank > min(N, M1):
        raise ContractError(f"rank {hp.rank} exceeds min({N}, {M1})")
    if init is None:
        init = nmf_fit(
            X, hp.rank, hp.lam, hp.seed, max(hp.init_epochs, 1),
            admm_iters=hp.admm_iters, eps=hp.eps, tol=hp.tol, patience=hp.patience, validation=validation,
        )
    model = init_model(X, hp, tree, init.A, init.B)
    _emit(on_step, "init", model)
    mon = Monitor(hp.tol, hp.patience, validation is not None)
    trace = []
    for epoch in range(1, hp.max_epochs + 1):
        run_epoch(X, model, hp, on_step)
        try:
            obj = surrogate_objective(model, X, hp)
        except NumericError as e:
            raise DivergenceError(epoch, float("nan")) from e
        val = rmse_on(model, validation) if validation is not None else float("nan")
        trace.append((epoch, obj, val))
        if callback is not None:
            callback(epoch, model)
        if mon.update(epoch, obj, val, model.copy):
            break
    if mon.snapshot is not None:
        model = mon.snapshot
    model.trace = trace
    model.hyper = hp
    logger.debug("etree_fit stopped after %d epochs (best %d)", len(trace), mon.best_epoch)
    return model


def run_epoch(X, model: FactorModel, hp: Hyperparams, on_step=None):
    model.A, model.dual_A, _ = update_A_admm(X, model, hp)
    _emit(on_step, "A", model)
    model.B[0], model.dual_B1, _ = update_B1_admm(X, model, hp)
    _emit(on_step, "B1", model)
    model.d = update_D(X, model.A, model.B[0], model.d)
    _emit(on_step, "D", model)
    model.Z[0] = update_Z(model.B[0])
    _emit(on_step, "Z", model)
    tree_loop(model, hp, on_step)
    return model
