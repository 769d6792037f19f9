import numpy as np
import pytest

from conftest import rel
from lodei.kernels import FactoredMatrix
from lodei.steppers import rk_dense_solve
from lodei.problems import PROBLEMS, Stencil1D, allencahn2d, allencahn3d, get_problem, nls2d, nls3d, zero2d
from lodei.tucker import hosvd_truncate, unfold

MATRIX = [nls2d(24), allencahn2d(24), zero2d(24)]
TENSOR = [nls3d(10), allencahn3d(10)]


def _point(p, rng, r):
    A = p.initial_state()
    noise = rng.standard_normal(A.shape)
    if np.iscomplexobj(A):
        noise = noise + 1j * rng.standard_normal(A.shape)
    A = A + 0.05 * np.linalg.norm(A) / np.sqrt(A.size) * noise + 0.01 * noise
    return FactoredMatrix.from_dense(A, r) if A.ndim == 2 else hosvd_truncate(A, r)


@pytest.mark.parametrize("p", MATRIX, ids=lambda p: p.name)
def test_matrix_queries_match_dense(rng, p):
    Y = _point(p, rng, 4)
    F = p.field.dense(Y)
    rows, cols = [0, 5, 23], [23, 1, 7]
    assert rel(p.field.rows(Y, rows), F[rows]) < 1e-13
    assert rel(p.field.cols(Y, cols), F[:, cols]) < 1e-13
    assert rel(p.field.entries(Y, rows, cols), F[np.ix_(rows, cols)]) < 1e-13
    if p.field.supports("factored"):
        assert rel(p.field.factored(Y).dense(), F) < 1e-12


@pytest.mark.parametrize("p", TENSOR, ids=lambda p: p.name)
def test_tensor_queries_match_dense(rng, p):
    Y = _point(p, rng, 3)
    F = p.field.dense(Y)
    flat = [0, 11, 99]
    for mode in range(3):
        assert rel(p.field.fibers(Y, mode, flat), unfold(F, mode)[:, flat]) < 1e-13
    I = ([1, 9], [0, 4, 5], [2])
    assert rel(p.field.block(Y, *I), F[np.ix_(*I)]) < 1e-13


def test_nls2d_formula(rng):
    p = nls2d(16, alpha=0.1)
    A = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    B = np.diag(np.ones(15), 1) + np.diag(np.ones(15), -1)
    ref = 0.5j * (B @ A + A @ B) + 0.1j * np.abs(A) ** 2 * A
    assert rel(p.field.evaluate(A), ref) < 1e-14


def test_allencahn2d_split(rng):
    n = 16
    p = allencahn2d(n, kappa=0.01)
    A = rng.standard_normal((n, n))
    D = p.linear.matrix.toarray()
    w = 0.01 / (2 * np.pi / n) ** 2
    assert D[0, n - 1] == pytest.approx(w) and D[0, 0] == pytest.approx(-2 * w)
    assert rel(p.field.evaluate(A), D @ A + A @ D + A - A**3) < 1e-13
    assert rel(p.nonlinear.evaluate(A), A - A**3) < 1e-14


def test_nls3d_formula(rng):
    n = 8
    p = nls3d(n)
    A = rng.standard_normal((n, n, n)) + 1j * rng.standard_normal((n, n, n))
    B = np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
    lap = np.einsum("ia,ajk->ijk", B, A) + np.einsum("ja,iak->ijk", B, A) + np.einsum("ka,ija->ijk", B, A)
    ref = 0.5j * lap - 0.1j * np.abs(A) ** 2 * A
    assert rel(p.field.evaluate(A), ref) < 1e-14


def test_initial_states():
    for name in PROBLEMS:
        p = get_problem(name, n=16) if name != "zero2d" else get_problem(name)
        A = p.initial_state()
        assert A.shape == p.shape and np.all(np.isfinite(A))
        assert np.linalg.norm(A) > 0


def test_nls2d_initial_two_bumps():
    n = 40
    A = nls2d(n).initial_state()
    j = np.arange(1, n + 1)
    g = lambda c: np.exp(-((j - c) ** 2) / (0.1 * n) ** 2)
    assert rel(A, np.outer(g(0.6 * n), g(0.5 * n)) + np.outer(g(0.5 * n), g(0.4 * n))) < 1e-14


def test_query_counter(rng):
    p = allencahn2d(20)
    Y = _point(p, rng, 3)
    p.field.reset_counter()
    p.field.rows(Y, [1, 2])
    p.field.cols(Y, [3])
    assert p.field.queries == 2 * 20 + 20
    assert p.field.calls == {"rows": 2, "cols": 1}


def test_stencil_apply_periodic():
    st = Stencil1D(5, -2.0, 1.0, True)
    x = np.arange(5.0)
    assert np.allclose(st.apply(x, 0), st.matrix @ x)
    assert st.neighbors(0) == [0, 1, 4]


def test_bad_sizes():
    with pytest.raises(ValueError):
        nls2d(4)
    with pytest.raises(ValueError):
        get_problem("nope")


def test_nls2d_real_symmetric_structure(rng):
    X = rng.standard_normal((20, 20))
    F = nls2d(20).field.evaluate(X + X.T)
    assert np.abs(F.real).max() == 0
    assert np.allclose(F.imag, F.imag.T, atol=1e-14)
    Y = FactoredMatrix.from_dense(X, 3)
    G = nls2d(20).field.evaluate(Y.dense())
    assert rel(nls2d(20).field.rows(Y, [0, 7]), G[[0, 7]]) < 1e-13


def test_constant_states_are_equilibria():
    assert np.abs(allencahn2d(16).field.evaluate(np.ones((16, 16)))).max() < 1e-10
    assert np.abs(allencahn3d(8).field.evaluate(np.ones((8, 8, 8)))).max() < 1e-10
    c = 0.3 * np.ones((8, 8, 8))
    assert np.allclose(allencahn3d(8).field.evaluate(c), c - c**3, atol=1e-10)
    assert np.abs(nls3d(8).field.evaluate(np.zeros((8, 8, 8), complex))).max() == 0


def test_nls2d_flow_conserves_norm():
    p = nls2d(32)
    A0 = p.initial_state()
    A = rk_dense_solve(A0, 1e-4, 1000, p.field.evaluate)
    assert abs(np.linalg.norm(A) - np.linalg.norm(A0)) <= 1e-6 * np.linalg.norm(A0)
