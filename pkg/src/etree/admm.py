"""Row-wise AO-ADMM block updates for the two nonnegative factors.

Both factor updates reduce to, for every row ``i`` of the factor being
updated, a nonnegative ridge problem over the observed entries of that row
(or column) of ``X``. The Gram matrix of each row is factored once per block
call and reused across the inner iterations; the primal and dual iterates are
warm-started from the previous outer epoch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

RHO_FLOOR = 1e-8


@dataclass
class AdmmStatus:
    primal: np.ndarray
    dual: np.ndarray
    iterations: np.ndarray
    rho: float

    @property
    def max_iterations(self) -> int:
        return int(self.iterations.max(initial=0))


def scaled_rho(other, n_rows, rank) -> float:
    """Step size ``|other|_F^2 / (n_rows * rank)``, floored to stay positive."""
    rho = float(np.einsum("ij,ij->", other, other)) / (n_rows * rank)
    return max(rho, RHO_FLOOR)


def solve_rows(X, cur, dual, other, scale, reg, extra=None, *, rho, max_iter, eps):
    """Update the row factor of ``X ~ cur @ other.T @ diag(scale)``.

    ``reg`` is the ridge weight added to each Gram matrix (on top of ``rho``)
    and ``extra`` a per-row linear term added to the right-hand side.
    """
    if extra is None:
        extra = np.zeros_like(cur)
    coef = scale[X.cols]
    A, U, iters, p, d = kernels.admm_rows(
        X.row_ptr, X.cols, coef, X.vals, other, cur, dual, extra, reg + rho, rho, max_iter, eps
    )
    return A, U, AdmmStatus(p, d, iters, rho)


def solve_cols(X, cur, dual, other, scale, reg, extra=None, *, rho, max_iter, eps):
    """Update the column factor of ``X ~ other @ cur.T @ diag(scale)``.

    Column ``j`` of ``X`` is modelled as ``scale[j] * other @ cur[j]``.
    """
    if extra is None:
        extra = np.zeros_like(cur)
    coef = np.repeat(scale, np.diff(X.col_ptr))
    B, U, iters, p, d = kernels.admm_rows(
        X.col_ptr, X.csc_rows, coef, X.csc_vals, other, cur, dual, extra, reg + rho, rho, max_iter, eps
    )
    return B, U, AdmmStatus(p, d, iters, rho)
