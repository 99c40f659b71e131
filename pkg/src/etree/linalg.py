"""Dense kernels shared by the solvers: masked loss, Cholesky, projections.

Diagonal matrices are passed as 1-D arrays of their diagonal.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ContractError, FactorizationError, NumericError


def masked_objective(X, A, B1, d) -> float:
    """Half the squared error over observed entries of ``X`` against ``A @ B1.T @ diag(d)``."""
    A = np.asarray(A, dtype=float)
    B1 = np.asarray(B1, dtype=float)
    d = np.asarray(d, dtype=float)
    if A.ndim != 2 or B1.ndim != 2 or A.shape[1] != B1.shape[1]:
        raise ContractError(f"factor shapes {A.shape} and {B1.shape} do not share a rank")
    if A.shape[0] != X.n_rows or B1.shape[0] != X.n_cols or d.shape != (X.n_cols,):
        raise ContractError(
            f"factors ({A.shape}, {B1.shape}, diag {d.shape}) do not match a {X.n_rows}x{X.n_cols} matrix"
        )
    val = 0.5 * kernels.masked_sse(X.rows, X.cols, X.vals, A, B1, d)
    if not np.isfinite(val):
        raise NumericError(f"masked objective is {val!r}")
    return val


def masked_grad_A(X, A, B1, d, lam=0.0) -> np.ndarray:
    """Gradient of ``masked_objective + lam/2 |A|^2`` with respect to ``A``.

    Row ``i`` is ``sum_j (d_j A_i.B1_j - x_ij) d_j B1_j + lam A_i`` over observed ``j``.
    """
    A = np.asarray(A, dtype=float)
    Bt = np.asarray(B1, dtype=float) * np.asarray(d, dtype=float)[:, None]
    resid = kernels.entry_predictions(X.rows, X.cols, A, B1, d) - X.vals
    grad = lam * A
    np.add.at(grad, X.rows, resid[:, None] * Bt[X.cols])
    return grad


def cholesky_factor(G) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == G``.

    Raises
    ------
    FactorizationError
        If a pivot is not strictly positive; ``.pivot`` holds its index.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {G.shape}")
    n = G.shape[0]
    L = np.zeros_like(G)
    for j in range(n):
        s = G[j, j] - L[j, :j] @ L[j, :j]
        if not s > 0:
            raise FactorizationError(j, float(s))
        L[j, j] = np.sqrt(s)
        L[j + 1:, j] = (G[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def cholesky_solve(L, rhs) -> np.ndarray:
    """Solve ``(L @ L.T) y = rhs`` by forward then backward substitution."""
    L = np.asarray(L, dtype=float)
    y = np.array(rhs, dtype=float)
    n = L.shape[0]
    if L.shape != (n, n) or y.shape[0] != n:
        raise ContractError(f"factor of order {L.shape} cannot solve rhs of shape {y.shape}")
    for i in range(n):
        y[i] = (y[i] - L[i, :i] @ y[:i]) / L[i, i]
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - L[i + 1:, i] @ y[i + 1:]) / L[i, i]
    return y


def normalize_rows(B) -> np.ndarray:
    """Scale each row to unit l2 norm; all-zero rows become ``e_1``."""
    B = np.asarray(B, dtype=float)
    out = np.zeros_like(B)
    if B.shape[1] == 0:
        return out
    # pre-scale by the row max so tiny rows do not underflow when squared
    peak = np.abs(B).max(axis=1)
    nz = peak > 0
    S = B[nz] / peak[nz, None]
    out[nz] = S / np.sqrt(np.einsum("ij,ij->i", S, S))[:, None]
    if B.shape[1]:
        out[~nz, 0] = 1.0
    return out


def project_nonneg(M) -> np.ndarray:
    return np.maximum(np.asarray(M, dtype=float), 0.0)
