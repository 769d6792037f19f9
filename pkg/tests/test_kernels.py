import warnings

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import random_factored, rel
from lodei.errors import NonFiniteError, SpectralCollisionError, WidthCapError
from lodei.kernels import (
    FactoredMatrix,
    OuterProductSum,
    SymmetricOperator,
    exp_action,
    exp_sylvester_factored,
    phi1,
    phi2,
    phi_sylvester_action,
    recompress,
    solve_small_sylvester,
    truncate_rank,
)


def _rand_sum(rng, m, n, widths, complex_=False):
    terms = []
    for w in widths:
        L = rng.standard_normal((m, w))
        R = rng.standard_normal((n, w))
        if complex_:
            L = L + 1j * rng.standard_normal((m, w))
            R = R + 1j * rng.standard_normal((n, w))
        terms.append((L, R))
    return OuterProductSum(terms)


def _svd_oracle(A, r):
    u, s, vh = la.svd(A, full_matrices=False)
    return (u[:, :r] * s[:r]) @ vh[:r]


@pytest.mark.parametrize("complex_", [False, True])
def test_truncate_matches_dense_svd(rng, complex_):
    for _ in range(10):
        X = _rand_sum(rng, 40, 30, [3, 5, 4], complex_)
        T = truncate_rank(X, 6)
        assert rel(T.dense(), _svd_oracle(X.dense(), 6)) < 1e-12
        assert max(T.orthonormality_error()) < 1e-12
        s = np.diag(T.S).real
        assert np.all(np.diff(s) <= 0)


def test_truncate_sign_convention(rng):
    X = _rand_sum(rng, 20, 15, [4])
    T = truncate_rank(X, 3)
    for j in range(3):
        k = np.argmax(np.abs(T.U[:, j]))
        assert T.U[k, j] > 0


def test_truncate_identity_on_rank_r_input(rng):
    Y = random_factored(rng, 25, 20, 4)
    T = truncate_rank(Y, 4)
    assert rel(T.dense(), Y.dense()) < 1e-13


def test_truncate_rank_deficient_pads(rng):
    X = _rand_sum(rng, 20, 20, [2])
    T = truncate_rank(X, 4)
    assert T.rank_deficient
    assert max(T.orthonormality_error()) < 1e-12
    assert rel(T.dense(), X.dense()) < 1e-13


def test_width_cap_enforced(rng):
    X = _rand_sum(rng, 10, 10, [3, 3])
    with pytest.raises(WidthCapError):
        truncate_rank(X, 2, cap=5)
    with pytest.raises(WidthCapError):
        OuterProductSum(X.terms, cap=4)


def test_truncate_rejects_nonfinite(rng):
    L = rng.standard_normal((6, 2))
    L[1, 1] = np.nan
    with pytest.raises(NonFiniteError):
        truncate_rank(OuterProductSum([(L, rng.standard_normal((6, 2)))]), 1)


def test_outer_sum_arithmetic(rng):
    X = _rand_sum(rng, 8, 7, [2])
    Y = _rand_sum(rng, 8, 7, [3], complex_=True)
    assert rel((X + Y).dense(), X.dense() + Y.dense()) < 1e-14
    assert rel((X - Y).dense(), X.dense() - Y.dense()) < 1e-14
    assert rel(X.scaled(2.5).dense(), 2.5 * X.dense()) < 1e-14


def test_recompress_exact(rng):
    X = _rand_sum(rng, 30, 25, [2, 2, 2])
    Y = X + X.scaled(-0.5)
    Z = recompress(Y)
    assert Z.width <= 6
    assert rel(Z.dense(), X.dense() * 0.5) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_truncation_is_best_approximation(r, seed):
    rng = np.random.default_rng(seed)
    X = _rand_sum(rng, 12, 9, [3, 4])
    T = truncate_rank(X, r)
    s = la.svdvals(X.dense())
    assert np.linalg.norm(X.dense() - T.dense()) == pytest.approx(np.sqrt(np.sum(s[r:] ** 2)), rel=1e-9, abs=1e-12)


def _lap(n, periodic=True):
    D = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="lil")
    if periodic:
        D[0, n - 1] = D[n - 1, 0] = 1.0
    return D.tocsr()


@pytest.mark.parametrize("n,thr", [(40, None), (300, 100)])
def test_exp_action_matches_expm(rng, n, thr):
    D = SymmetricOperator(_lap(n) * 5.0)
    W = rng.standard_normal((n, 3))
    ref = la.expm(0.1 * D.matrix.toarray()) @ W
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = exp_action(D, 0.1, W, dense_threshold=thr)
    assert rel(out, ref) < 1e-9


def test_phi_scalar_functions():
    x = np.array([-30.0, -1.0, -1e-3, 0.0, 1e-7, 0.5, 2.0])
    with np.errstate(divide="ignore", invalid="ignore"):
        ref1 = np.where(x == 0, 1.0, np.expm1(x) / x)
        ref2 = np.where(x == 0, 0.5, (np.exp(x) - 1 - x) / x**2)
    ref2[2] = 0.5 - 1e-3 / 6 + 1e-6 / 24
    ref2[4] = 0.5 + 1e-7 / 6
    assert np.allclose(phi1(x), ref1, rtol=1e-12)
    assert np.allclose(phi2(x), ref2, rtol=1e-9)


def _phi_oracle(Dd, h, K, weight):
    """h phi_k(h L)[K] through the Kronecker form of L (small n only)."""
    n = Dd.shape[0]
    L = np.kron(np.eye(n), Dd) + np.kron(Dd.T, np.eye(n))
    w, E = la.eigh(L)
    f = phi1 if weight == "phi1" else phi2
    vec = K.reshape(-1, order="F")
    out = E @ (h * f(h * w) * (E.T @ vec))
    return out.reshape(n, n, order="F")


@pytest.mark.parametrize("method", ["quadrature", "krylov", "sylvester"])
@pytest.mark.parametrize("weight", ["phi1", "phi2"])
def test_phi_sylvester_action(rng, method, weight):
    n = 24
    D = SymmetricOperator(_lap(n) * 3.0)
    K = _rand_sum(rng, n, n, [2])
    ref = _phi_oracle(D.matrix.toarray(), 0.1, K.dense(), weight)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = phi_sylvester_action(D, 0.1, K, weight, method=method, krylov_blocks=12)
    assert rel(out.dense(), ref) < 1e-8


def test_phi_zero_operator_is_scaling(rng):
    D = SymmetricOperator(sp.csr_matrix((10, 10)))
    K = _rand_sum(rng, 10, 10, [2])
    assert rel(phi_sylvester_action(D, 0.2, K, "phi1").dense(), 0.2 * K.dense()) < 1e-15
    assert rel(phi_sylvester_action(D, 0.2, K, "phi2").dense(), 0.1 * K.dense()) < 1e-15


def test_exp_sylvester_factored(rng):
    n = 30
    D = SymmetricOperator(_lap(n) * 2.0)
    Y = random_factored(rng, n, n, 3)
    E = la.expm(0.05 * D.matrix.toarray())
    out = exp_sylvester_factored(D, 0.05, Y)
    assert rel(out.dense(), E @ Y.dense() @ E) < 1e-12
    assert out.rank == 3


def test_small_sylvester_and_collision(rng):
    A = np.diag([1.0, 2.0])
    B = np.diag([3.0, 4.0])
    C = rng.standard_normal((2, 2))
    X = solve_small_sylvester(A, B, C)
    assert np.allclose(A @ X + X @ B, C)
    with pytest.raises(SpectralCollisionError):
        solve_small_sylvester(np.diag([1.0, 2.0]), np.diag([-1.0, 5.0]), C)


def test_factored_from_dense_roundtrip(rng):
    A = rng.standard_normal((10, 4)) @ rng.standard_normal((4, 8))
    Y = FactoredMatrix.from_dense(A, 4)
    assert rel(Y.dense(), A) < 1e-13
    assert not Y.rank_deficient
    with pytest.raises(ValueError):
        FactoredMatrix(Y.U, np.eye(3), Y.V)
