"""Dispatch layer over the numba and numpy kernel implementations.

Every kernel takes plain numpy arrays; index arrays are int64 and values are
float64. ``use_backend`` switches implementations for a block of code, which
is how the tests and the benchmark compare the two paths.
"""
from __future__ import annotations

import contextlib
import importlib

import numpy as np

from ._accel import BACKENDS, default_backend
from .errors import FactorizationError

_active = default_backend()
_modules = {}


def _impl():
    mod = _modules.get(_active)
    if mod is None:
        mod = importlib.import_module(f"etree._kernels_{_active}")
        _modules[_active] = mod
    return mod


def backend() -> str:
    return _active


@contextlib.contextmanager
def use_backend(name: str):
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}")
    prev = _active
    _active = name
    try:
        yield
    finally:
        _active = prev


def admm_rows(indptr, idx, coef, vals, other, cur, dual, extra, shift, rho, max_iter, eps):
    """Row-separable ADMM for nonnegative ridge problems with cached factors.

    Row ``i`` solves ``min_{a >= 0} 1/2 sum_e (vals[e] - coef[e] * other[idx[e]] @ a)**2
    + (shift - rho)/2 |a|^2 - extra[i] @ a`` with the Gram matrix factored once
    and ``max_iter`` ADMM sweeps warm-started from ``cur`` and ``dual``.

    Returns ``(A, U, iterations, primal_residual, dual_residual)``.
    """
    out = _impl().admm_rows(
        indptr, idx, coef, vals, other, cur, dual, extra, float(shift), float(rho), int(max_iter), float(eps)
    )
    A, U, iters, pres, dres, failed = out
    bad = np.flatnonzero(failed >= 0)
    if bad.size:
        raise FactorizationError(int(failed[bad[0]]), row=int(bad[0]))
    return A, U, iters, pres, dres


def entry_predictions(rows, cols, A, B, d):
    return _impl().entry_predictions(rows, cols, A, B, d)


def masked_sse(rows, cols, vals, A, B, d):
    return float(_impl().masked_sse(rows, cols, vals, A, B, d))


def column_scales(indptr, idx, vals, A, B, d_prev, tiny=1e-12):
    return _impl().column_scales(indptr, idx, vals, A, B, d_prev, float(tiny))
