import numpy as np
import pytest

from conftest import random_masked
from etree import _accel, admm, kernels
from etree.data import ObservedMatrix
from etree.model import FactorModel, Hyperparams
from etree.solver import update_A_admm, update_B1_admm
from oracles import naive_admm_row, nnls_enumerate, row_problem


def _solve(X, A0, B, d, lam, rho=1.0, K=200, eps=1e-10, U0=None, extra=None):
    U0 = np.zeros_like(A0) if U0 is None else U0
    return admm.solve_rows(X, A0, U0, B, d, lam, extra, rho=rho, max_iter=K, eps=eps)


def test_scalar_least_squares(backend):
    X = ObservedMatrix.from_dense(np.array([[6.0]]))
    A, _, st = _solve(X, np.zeros((1, 1)), np.array([[2.0]]), np.ones(1), 0.0, rho=4.0, K=500, eps=1e-14)
    assert A[0, 0] == pytest.approx(3.0, abs=1e-8)


def test_scalar_projection_binds(backend):
    X = ObservedMatrix.from_dense(np.array([[-4.0]]))
    A, _, _ = _solve(X, np.ones((1, 1)), np.array([[2.0]]), np.ones(1), 0.0, rho=4.0, K=500)
    assert A[0, 0] == pytest.approx(0.0, abs=1e-10)


def _nnls_instance(rng, n=5, m=4, R=2):
    dense = rng.standard_normal((n, m)) * 2
    mask = np.ones((n, m), bool)
    B = np.abs(rng.standard_normal((m, R)))
    d = rng.random(m) + 0.5
    return dense, mask, ObservedMatrix.from_dense(dense, mask), B, d


def test_admm_matches_enumeration_oracle(backend):
    rng = np.random.default_rng(2024)
    for _ in range(10):
        dense, mask, X, B, d = _nnls_instance(rng)
        lam = float(rng.choice([0.0, 0.1, 1.0]))
        rho = admm.scaled_rho(B * d[:, None], X.n_rows, 2)
        A, _, _ = _solve(X, np.zeros((5, 2)), B, d, lam, rho=rho, K=200, eps=1e-10)
        for i in range(5):
            G, f = row_problem(dense, mask, i, B, d, lam, np.zeros(2))
            np.testing.assert_allclose(A[i], nnls_enumerate(G, f), atol=1e-6)


def test_b1_update_matches_offset_oracle(backend):
    """Rows of B1 solve an NNLS problem with the tree and slack offsets."""
    rng = np.random.default_rng(8)
    n, m, R = 6, 4, 2
    dense = rng.random((n, m)) * 3
    mask = rng.random((n, m)) < 0.8
    mask[0] = True
    X = ObservedMatrix.from_dense(dense, mask)
    hp = Hyperparams(rank=R, mu=0.7, eta=2.0, admm_iters=200, eps=1e-10)
    B2 = np.abs(rng.standard_normal((2, R)))
    Z1 = np.abs(rng.standard_normal((m, R)))
    Z1 /= np.linalg.norm(Z1, axis=1, keepdims=True)
    model = FactorModel(
        A=np.abs(rng.standard_normal((n, R))), d=rng.random(m) + 0.5,
        B=[np.zeros((m, R)), B2], parents=[np.array([0, 1, 1, 0])], Z=[Z1],
        dual_A=np.zeros((n, R)), dual_B1=np.zeros((m, R)), hyper=hp,
    )
    B1, _, _ = update_B1_admm(X, model, hp)
    for j in range(m):
        extra = hp.mu * B2[model.parents[0][j]] + hp.eta * Z1[j]
        # column j of X as a row problem of X.T
        G, f = row_problem(dense.T, mask.T, j, model.A, np.full(n, model.d[j]), hp.mu + hp.eta, extra)
        np.testing.assert_allclose(B1[j], nnls_enumerate(G, f), atol=1e-6)


def test_b1_without_tree_is_transposed_a_update(backend):
    rng = np.random.default_rng(4)
    dense, mask, X = random_masked(rng, 7, 5)
    R = 3
    A = np.abs(rng.standard_normal((7, R)))
    d = rng.random(5) + 0.5
    hp = Hyperparams(rank=R, mu=0.0, eta=0.0)
    model = FactorModel(A, d, [np.abs(rng.standard_normal((5, R))), np.ones((1, R))], [np.zeros(5, np.int64)],
                        [np.zeros((5, R))], np.zeros((7, R)), np.zeros((5, R)), hp)
    B1, U1, _ = update_B1_admm(X, model, hp)
    rho = max(float(np.sum(A * A)) * float(np.mean(d * d)) / (5 * R), admm.RHO_FLOOR)
    ref = np.zeros_like(B1)
    for j in range(5):
        # column j of X is row j of X.T with the factor A scaled by d_j
        sub = ObservedMatrix.from_dense(dense.T[j:j + 1], mask.T[j:j + 1])
        r, _, _ = admm.solve_rows(sub, model.B[0][j:j + 1], np.zeros((1, R)), A * d[j], np.ones(7), 0.0,
                                  rho=rho, max_iter=hp.admm_iters, eps=hp.eps)
        ref[j] = r[0]
    np.testing.assert_allclose(B1, ref, rtol=1e-9, atol=1e-12)


def test_cached_path_equals_naive_rebuild(backend):
    rng = np.random.default_rng(77)
    for _ in range(5):
        dense, mask, X = random_masked(rng, 6, 5)
        R = 3
        B = np.abs(rng.standard_normal((5, R)))
        d = rng.random(5) + 0.5
        A0 = np.abs(rng.standard_normal((6, R)))
        U0 = rng.standard_normal((6, R)) * 0.1
        extra = rng.random((6, R)) * 0.2
        lam, rho, K, eps = 0.3, 0.9, 7, 1e-4
        A, U, it, _, _ = kernels.admm_rows(X.row_ptr, X.cols, d[X.cols], X.vals, B, A0, U0, extra,
                                           lam + rho, rho, K, eps)
        for i in range(6):
            a, u, k = naive_admm_row(dense, mask, i, B, d, lam, extra[i], A0[i], U0[i], rho, K, eps)
            np.testing.assert_allclose(A[i], a, rtol=0, atol=1e-10)
            np.testing.assert_allclose(U[i], u, rtol=0, atol=1e-10)
            assert it[i] == k


def test_warm_start_at_fixed_point_exits_in_one_iteration(backend):
    rng = np.random.default_rng(9)
    dense, mask, X = random_masked(rng, 8, 6)
    B = np.abs(rng.standard_normal((6, 2)))
    d = np.ones(6)
    A, U, _ = _solve(X, np.zeros((8, 2)), B, d, 0.1, rho=1.0, K=5000, eps=1e-15)
    A2, U2, st = _solve(X, A, B, d, 0.1, rho=1.0, K=5, eps=1e-4, U0=U)
    assert np.all(st.iterations == 1)
    assert np.all(st.primal < 1e-4) and np.all(st.dual < 1e-4)


def test_empty_row_goes_to_zero(backend):
    dense = np.array([[1.0, 2.0], [0.0, 0.0]])
    mask = np.array([[True, True], [False, False]])
    X = ObservedMatrix.from_dense(dense, mask)
    A, _, _ = _solve(X, np.ones((2, 2)), np.eye(2), np.ones(2), 0.1, rho=1.0, K=500)
    np.testing.assert_allclose(A[1], 0.0, atol=1e-8)


def test_rho_floor():
    assert admm.scaled_rho(np.zeros((3, 2)), 4, 2) == admm.RHO_FLOOR
    assert admm.scaled_rho(np.ones((3, 2)), 3, 2) == pytest.approx(1.0)


def test_backends_agree():
    rng = np.random.default_rng(12)
    dense, mask, X = random_masked(rng, 40, 30, rate=0.3)
    B = np.abs(rng.standard_normal((30, 4)))
    d = rng.random(30) + 0.5
    A0 = np.abs(rng.standard_normal((40, 4)))
    args = (X.row_ptr, X.cols, d[X.cols], X.vals, B, A0, np.zeros_like(A0), np.zeros_like(A0), 1.3, 1.0, 5, 1e-4)
    with kernels.use_backend("numba"):
        a = kernels.admm_rows(*args)
        s1 = kernels.masked_sse(X.rows, X.cols, X.vals, A0, B, d)
        c1 = kernels.column_scales(X.col_ptr, X.csc_rows, X.csc_vals, A0, B, np.ones(30))
    with kernels.use_backend("numpy"):
        b = kernels.admm_rows(*args)
        s2 = kernels.masked_sse(X.rows, X.cols, X.vals, A0, B, d)
        c2 = kernels.column_scales(X.col_ptr, X.csc_rows, X.csc_vals, A0, B, np.ones(30))
    np.testing.assert_allclose(a[0], b[0], rtol=1e-9, atol=1e-12)
    assert s1 == pytest.approx(s2, rel=1e-12)
    np.testing.assert_allclose(c1, c2, rtol=1e-12)


@pytest.mark.skipif(_accel.max_workers() < 2, reason="needs NUMBA_NUM_THREADS >= 2")
def test_worker_count_does_not_change_results():
    rng = np.random.default_rng(13)
    dense, mask, X = random_masked(rng, 60, 40, rate=0.3)
    B = np.abs(rng.standard_normal((40, 5)))
    A0 = np.abs(rng.standard_normal((60, 5)))
    out = []
    with kernels.use_backend("numba"):
        for w in (1, _accel.max_workers()):
            _accel.set_workers(w)
            out.append(kernels.admm_rows(X.row_ptr, X.cols, np.ones(X.nnz), X.vals, B, A0, np.zeros_like(A0),
                                         np.zeros_like(A0), 1.0, 0.5, 5, 1e-4))
    _accel.set_workers(None)
    for x, y in zip(out[0], out[1]):
        np.testing.assert_array_equal(x, y)


def test_update_a_uses_scaled_rho(backend):
    rng = np.random.default_rng(1)
    dense, mask, X = random_masked(rng, 5, 4)
    hp = Hyperparams(rank=2)
    B1 = np.abs(rng.standard_normal((4, 2)))
    d = rng.random(4) + 0.5
    model = FactorModel(np.ones((5, 2)), d, [B1, np.ones((1, 2))], [np.zeros(4, np.int64)], [B1],
                        np.zeros((5, 2)), np.zeros((4, 2)), hp)
    _, _, st = update_A_admm(X, model, hp)
    Bt = B1 * d[:, None]
    assert st.rho == pytest.approx(np.sum(Bt * Bt) / (5 * 2))
