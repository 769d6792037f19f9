"""Benchmark vector fields with sampling oracles and their initial states.

Every field here has the form

    F(A) = a * Lap(A) + b * A + c * A * conj(A) * A        (elementwise products)

where ``Lap`` applies the same symmetric three-point stencil ``D`` along every
axis (``D A + A D`` for matrices).  This covers the 2D/3D nonlinear
Schroedinger lattices and the 2D/3D Allen-Cahn equations.  Fields answer
full, row, column, entry and mode-fiber queries at factored points and count
how many scalar entries of F they produced.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .kernels import FactoredMatrix, OuterProductSum, SymmetricOperator
from .tucker import TuckerTensor, unfold

__all__ = [
    "Stencil1D",
    "SampledField",
    "CallableField",
    "CubicStencilField",
    "ProblemSpec",
    "nls2d",
    "allencahn2d",
    "nls3d",
    "allencahn3d",
    "zero2d",
    "get_problem",
    "PROBLEMS",
]


@dataclass(frozen=True)
class Stencil1D:
    """Symmetric three-point stencil ``off * (x[i-1] + x[i+1]) + center * x[i]``."""

    n: int
    center: float
    off: float
    periodic: bool

    @cached_property
    def matrix(self):
        n = self.n
        D = sp.diags([self.off, self.center, self.off], [-1, 0, 1], shape=(n, n), format="lil")
        if self.periodic:
            D[0, n - 1] = self.off
            D[n - 1, 0] = self.off
        return D.tocsr()

    def operator(self):
        return SymmetricOperator(self.matrix)

    def neighbors(self, i):
        """Indices coupled to ``i`` (including ``i``), in increasing order."""
        out = {i}
        for j in (i - 1, i + 1):
            if 0 <= j < self.n:
                out.add(j)
            elif self.periodic:
                out.add(j % self.n)
        return sorted(out)

    def apply(self, A, axis, out=None):
        """Apply the stencil along ``axis`` of a dense array (accumulating into ``out`` if given)."""
        A = np.asarray(A)
        if out is None:
            out = np.zeros(A.shape, dtype=np.result_type(A, self.center, self.off))
        if self.center != 0:
            out += self.center * A
        if self.off == 0:
            return out
        A = np.moveaxis(A, axis, 0)
        o = np.moveaxis(out, axis, 0)
        o[1:] += self.off * A[:-1] if self.off != 1 else A[:-1]
        o[:-1] += self.off * A[1:] if self.off != 1 else A[1:]
        if self.periodic:
            o[0] += self.off * A[-1]
            o[-1] += self.off * A[0]
        return out


class SampledField:
    """Vector field oracle with a thread-safe scalar-evaluation counter."""

    capabilities = frozenset()

    def __init__(self, shape, is_complex):
        self.shape = tuple(shape)
        self.is_complex = bool(is_complex)
        self._lock = threading.Lock()
        self.queries = 0
        self.calls = {}

    def _count(self, kind, entries, n_calls=1):
        with self._lock:
            self.queries += int(entries)
            self.calls[kind] = self.calls.get(kind, 0) + n_calls

    def reset_counter(self):
        with self._lock:
            self.queries = 0
            self.calls = {}

    def supports(self, cap):
        return cap in self.capabilities


def _rowkron3(X):
    """Row-wise ``X (.) conj(X) (.) X``: row i is kron(x_i, conj(x_i), x_i)."""
    m, r = X.shape
    return np.einsum("ia,ib,ic->iabc", X, X.conj(), X, optimize=True).reshape(m, r**3)


def _as_dense(Y):
    if isinstance(Y, (FactoredMatrix, TuckerTensor)):
        return Y.dense()
    return np.asarray(Y)


class CallableField(SampledField):
    """Dense-only field from a Python callable; sampled queries slice the dense value.

    Used for synthetic test fields.  ``F`` receives the dense matrix (or
    tensor) and the base point itself as a second argument when
    ``pass_point`` is set.
    """

    capabilities = frozenset({"dense", "rows", "cols", "entries", "fibers"})

    def __init__(self, F: Callable, shape, is_complex=False, pass_point=False):
        super().__init__(shape, is_complex)
        self._F = F
        self._pass_point = pass_point

    def _eval(self, Y):
        A = _as_dense(Y)
        return self._F(A, Y) if self._pass_point else self._F(A)

    def evaluate(self, A):
        return self._F(A, A) if self._pass_point else self._F(A)

    def dense(self, Y):
        out = self._eval(Y)
        self._count("dense", out.size)
        return out

    def rows(self, Y, idx):
        out = self._eval(Y)[list(idx)]
        self._count("rows", out.size, len(idx))
        return out

    def cols(self, Y, idx):
        out = self._eval(Y)[:, list(idx)]
        self._count("cols", out.size, len(idx))
        return out

    def entries(self, Y, I, J):
        out = self._eval(Y)[np.ix_(list(I), list(J))]
        self._count("entries", out.size)
        return out

    def fibers(self, Y, mode, flat):
        Z = unfold(self._eval(Y), mode)[:, list(flat)]
        self._count("fibers", Z.size, len(flat))
        return Z

    def block(self, Y, I1, I2, I3):
        out = self._eval(Y)[np.ix_(list(I1), list(I2), list(I3))]
        self._count("block", out.size)
        return out


class CubicStencilField(SampledField):
    """``F(A) = a*Lap(A) + b*A + c*|A|^2 A`` on matrices (ndim=2) or 3-tensors (ndim=3)."""

    capabilities = frozenset({"dense", "rows", "cols", "entries", "fibers", "factored"})

    def __init__(self, stencil: Stencil1D | None, a, b, c, ndim, is_complex):
        n = stencil.n if stencil is not None else None
        super().__init__((n,) * ndim, is_complex)
        self.stencil = stencil
        self.a, self.b, self.c = a, b, c
        self.ndim = ndim
        if a != 0 and stencil is None:
            raise ValueError("linear coefficient needs a stencil")

    def with_shape(self, n):
        self.shape = (n,) * self.ndim
        return self

    # pointwise part -------------------------------------------------------
    def _pointwise(self, A):
        if self.is_complex:
            A = A.astype(complex, copy=False)
        if self.c != 0:
            if np.iscomplexobj(A):
                mod2 = A.real**2
                mod2 += A.imag**2
            else:
                mod2 = A * A
            out = A * mod2
            out *= self.c
            if self.b != 0:
                out += self.b * A
            return out
        return self.b * A if self.b != 0 else np.zeros_like(A)

    def _lap(self, A):
        out = np.zeros(A.shape, dtype=np.result_type(A, self.stencil.center, self.stencil.off, self.a))
        for ax in range(A.ndim):
            self.stencil.apply(A, ax, out)
        return out

    def evaluate(self, A):
        """Full-order evaluation on a dense array (no query accounting)."""
        A = np.asarray(A)
        out = self._pointwise(A)
        if self.a != 0:
            lap = self._lap(A)
            lap *= self.a
            if np.result_type(out, lap) == out.dtype:
                out += lap
            else:
                out = out + lap
        return out

    def dense(self, Y):
        out = self.evaluate(_as_dense(Y))
        self._count("dense", out.size)
        return out

    def factored(self, Y: FactoredMatrix) -> OuterProductSum:
        """F(Y) as an outer-product sum, without forming any n x n array.

        The cubic term of a rank-r matrix has rank at most r^3:
        ``Y * conj(Y) * Y = L R^H`` with ``L = W (.) conj(W) (.) W`` and
        ``R = V (.) conj(V) (.) V`` (row-wise Kronecker products, ``W = U S``).
        The query counter is charged for the full m x n result.
        """
        W = Y.U @ Y.S
        V = Y.V
        terms = []
        if self.a != 0:
            D = self._dmat()
            terms += [(self.a * (D @ W), V), (self.a * W, D @ V)]
        if self.b != 0:
            terms.append((self.b * W, V))
        if self.c != 0:
            terms.append((self.c * _rowkron3(W), _rowkron3(V)))
        self._count("factored", W.shape[0] * V.shape[0])
        return OuterProductSum(terms)

    # matrix sampling --------------------------------------------------------
    def _support(self, idx):
        if self.a == 0:
            return sorted(set(int(i) for i in idx))
        s = set()
        for i in idx:
            s.update(self.stencil.neighbors(int(i)))
        return sorted(s)

    def _dmat(self):
        return self.stencil.matrix

    def rows(self, Y, idx):
        idx = [int(i) for i in idx]
        if not isinstance(Y, FactoredMatrix):
            out = self.evaluate(np.asarray(Y))[idx]
            self._count("rows", out.size, len(idx))
            return out
        sup = self._support(idx)
        A_sup = Y.rows(sup)
        pos = {j: k for k, j in enumerate(sup)}
        A_idx = A_sup[[pos[i] for i in idx]]
        out = self._pointwise(A_idx)
        if self.a != 0:
            D = self._dmat()
            lin = D[idx][:, sup] @ A_sup + self.stencil.apply(A_idx, 1)
            out = out + self.a * lin
        self._count("rows", out.size, len(idx))
        return out

    def cols(self, Y, idx):
        idx = [int(i) for i in idx]
        if not isinstance(Y, FactoredMatrix):
            out = self.evaluate(np.asarray(Y))[:, idx]
            self._count("cols", out.size, len(idx))
            return out
        sup = self._support(idx)
        A_sup = Y.cols(sup)
        pos = {j: k for k, j in enumerate(sup)}
        A_idx = A_sup[:, [pos[i] for i in idx]]
        out = self._pointwise(A_idx)
        if self.a != 0:
            D = self._dmat()
            lin = self.stencil.apply(A_idx, 0) + (D[idx][:, sup] @ A_sup.T).T
            out = out + self.a * lin
        self._count("cols", out.size, len(idx))
        return out

    def entries(self, Y, I, J):
        I = [int(i) for i in I]
        J = [int(j) for j in J]
        if not isinstance(Y, FactoredMatrix):
            out = self.evaluate(np.asarray(Y))[np.ix_(I, J)]
            self._count("entries", out.size)
            return out
        SI, SJ = self._support(I), self._support(J)
        blk = (Y.U[SI] @ Y.S) @ Y.V[SJ].conj().T
        pi = [SI.index(i) for i in I]
        pj = [SJ.index(j) for j in J]
        A_IJ = blk[np.ix_(pi, pj)]
        out = self._pointwise(A_IJ)
        if self.a != 0:
            D = self._dmat()
            lin = D[I][:, SI] @ blk[:, pj] + blk[pi, :] @ D[SJ][:, J]
            out = out + self.a * lin
        self._count("entries", out.size)
        return out

    # tensor sampling ----------------------------------------------------------
    def fibers(self, Y, mode, flat):
        """Mode-``mode`` fibers of F at colexicographic positions ``flat`` (n x len(flat))."""
        n = self.shape[0]
        flat = [int(q) for q in flat]
        pairs = [(q % n, q // n) for q in flat]
        if not isinstance(Y, TuckerTensor):
            out = unfold(self.evaluate(np.asarray(Y)), mode)[:, flat]
            self._count("fibers", out.size, len(flat))
            return out
        need = []
        for j, k in pairs:
            need.append((j, k))
            if self.a != 0:
                need.extend((jj, k) for jj in self.stencil.neighbors(j) if jj != j)
                need.extend((j, kk) for kk in self.stencil.neighbors(k) if kk != k)
        need = sorted(set(need))
        pos = {p: t for t, p in enumerate(need)}
        A = Y.fibers(mode, need)  # n x len(need)
        A_f = A[:, [pos[p] for p in pairs]]
        out = self._pointwise(A_f)
        if self.a != 0:
            st = self.stencil
            lin = st.apply(A_f, 0)
            for t, (j, k) in enumerate(pairs):
                acc = np.zeros(n, dtype=A.dtype)
                for jj in st.neighbors(j):
                    if jj != j:
                        acc += st.off * A[:, pos[(jj, k)]]
                acc += st.center * A_f[:, t]
                for kk in st.neighbors(k):
                    if kk != k:
                        acc += st.off * A[:, pos[(j, kk)]]
                acc += st.center * A_f[:, t]
                lin[:, t] += acc
            out = out + self.a * lin
        self._count("fibers", out.size, len(flat))
        return out

    def block(self, Y, I1, I2, I3):
        """Entries of F on the grid ``I1 x I2 x I3``."""
        Is = [[int(i) for i in I] for I in (I1, I2, I3)]
        if not isinstance(Y, TuckerTensor):
            out = self.evaluate(np.asarray(Y))[np.ix_(*Is)]
            self._count("block", out.size)
            return out
        sups = [self._support(I) for I in Is]
        A = Y.subtensor(*sups)
        loc = [[s.index(i) for i in I] for s, I in zip(sups, Is)]
        A_I = A[np.ix_(*loc)]
        out = self._pointwise(A_I)
        if self.a != 0:
            D = self._dmat()
            lin = np.zeros_like(A_I)
            for ax in range(3):
                Dax = D[Is[ax]][:, sups[ax]].toarray()
                grid = [np.arange(len(sups[b])) if b == ax else np.asarray(loc[b]) for b in range(3)]
                sub = np.moveaxis(A[np.ix_(*grid)], ax, 0)
                lin += np.moveaxis(np.tensordot(Dax, sub, axes=(1, 0)), 0, ax)
            out = out + self.a * lin
        self._count("block", out.size)
        return out


@dataclass
class ProblemSpec:
    """A benchmark problem: field, optional linear split, initial state and warm-up."""

    name: str
    ndim: int
    n: int
    params: dict
    field: SampledField
    initial: Callable[[], np.ndarray]
    is_complex: bool
    linear: SymmetricOperator | None = None
    nonlinear: SampledField | None = None
    warmup_time: float = 0.0
    default_h_ref: float = 1e-3

    @property
    def shape(self):
        return (self.n,) * self.ndim

    def initial_state(self):
        A0 = self.initial()
        if not np.all(np.isfinite(A0)):
            raise AssertionError(f"{self.name}: non-finite initial state")
        return A0


def _stable_h(lam_max, cap=1e-3):
    """Largest step of the form 1e-3 / 2^k with h * lam_max <= 0.5 (accurate RK4 on the stiff modes)."""
    h = cap
    while h * lam_max > 0.5:
        h /= 2
    return h


def _grid(n):
    return 2 * np.pi * np.arange(n) / n


def nls2d(n: int = 1024, alpha: float = 0.1) -> ProblemSpec:
    """2D lattice NLS: i dA/dt = -1/2 (B A + A B) - alpha |A|^2 A, B = tridiag(1, 0, 1)."""
    if n < 8:
        raise ValueError("n >= 8 required")
    st = Stencil1D(n, 0.0, 1.0, periodic=False)
    fld = CubicStencilField(st, 0.5j, 0.0, 1j * alpha, 2, True)

    def init():
        j = np.arange(1, n + 1, dtype=float)
        s = 0.1 * n
        mu1, mu2, nu1, nu2 = 0.6 * n, 0.5 * n, 0.5 * n, 0.4 * n
        g = lambda c: np.exp(-((j - c) ** 2) / s**2)
        return (np.outer(g(mu1), g(nu1)) + np.outer(g(mu2), g(nu2))).astype(complex)

    return ProblemSpec(
        "nls2d", 2, n, {"alpha": alpha}, fld, init, True, warmup_time=0.01, default_h_ref=1e-3
    )


def _ac_initial_1d_parts(x):
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        e_tan = np.exp(-np.tan(x) ** 2)
        e_csc = np.exp(np.abs(1.0 / np.sin(-x / 2)))
    e_csc = np.where(np.isfinite(e_csc), e_csc, np.inf)
    return e_tan, np.sin(x), e_csc


def allencahn2d(n: int = 256, kappa: float = 0.01) -> ProblemSpec:
    """2D Allen-Cahn with periodic central differences: dA/dt = DA + AD + A - A^3."""
    if n < 8:
        raise ValueError("n >= 8 required")
    dx = 2 * np.pi / n
    w = kappa / dx**2
    st = Stencil1D(n, -2 * w, w, periodic=True)
    fld = CubicStencilField(st, 1.0, 1.0, -1.0, 2, False)
    nonlin = CubicStencilField(None, 0.0, 1.0, -1.0, 2, False).with_shape(n)

    def init():
        x = _grid(n)
        et, s, ec = _ac_initial_1d_parts(x)
        num = (et[:, None] + et[None, :]) * np.outer(s, s)
        den = 1 + ec[:, None] + ec[None, :]
        with np.errstate(invalid="ignore"):
            A = num / den
        return np.where(np.isinf(den), 0.0, A)

    return ProblemSpec(
        "allencahn2d",
        2,
        n,
        {"kappa": kappa},
        fld,
        init,
        False,
        linear=st.operator(),
        nonlinear=nonlin,
        warmup_time=0.0,
        default_h_ref=_stable_h(8 * w),
    )


def nls3d(n: int = 100, alpha: float = 0.1, gamma: float | None = None) -> ProblemSpec:
    """3D lattice NLS: i dA/dt = -1/2 L[A] + alpha |A|^2 A with a 6-neighbour stencil.

    Out-of-range neighbours contribute zero.  The initial value is a pair of
    Gaussian bumps centred at (0.75n, 0.25n, 0.01n) and (0.25n, 0.75n, n)
    (1-based lattice indices) with width ``gamma`` (default 0.1 n).
    """
    if n < 8:
        raise ValueError("n >= 8 required")
    gamma = 0.1 * n if gamma is None else gamma
    st = Stencil1D(n, 0.0, 1.0, periodic=False)
    fld = CubicStencilField(st, 0.5j, 0.0, -1j * alpha, 3, True)

    def init():
        j = np.arange(1, n + 1, dtype=float)
        g = lambda c: np.exp(-((j - c) ** 2) / gamma**2)
        b1 = np.einsum("i,j,k->ijk", g(0.75 * n), g(0.25 * n), g(0.01 * n))
        b2 = np.einsum("i,j,k->ijk", g(0.25 * n), g(0.75 * n), g(1.0 * n))
        return (b1 + b2).astype(complex)

    return ProblemSpec(
        "nls3d",
        3,
        n,
        {"alpha": alpha, "gamma": gamma},
        fld,
        init,
        True,
        warmup_time=0.01,
        default_h_ref=1e-3,
    )


def allencahn3d(n: int = 150, kappa: float = 0.1) -> ProblemSpec:
    """3D Allen-Cahn kappa*Lap(f) + f - f^3, periodic second-order differences on [0, 2pi]^3."""
    if n < 8:
        raise ValueError("n >= 8 required")
    dx = 2 * np.pi / n
    w = kappa / dx**2
    st = Stencil1D(n, -2 * w, w, periodic=True)
    fld = CubicStencilField(st, 1.0, 1.0, -1.0, 3, False)

    def g(x1, x2, x3):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            num = (np.exp(-np.tan(x1) ** 2) + np.exp(-np.tan(x2) ** 2) + np.exp(-np.tan(x3) ** 2)) * np.sin(
                x1 + x2 + x3
            )
            den = (
                1
                + np.exp(np.abs(1 / np.sin(-x1 / 2)))
                + np.exp(np.abs(1 / np.sin(-x2 / 2)))
                + np.exp(np.abs(1 / np.sin(-x3 / 2)))
            )
            val = num / den
        return np.where(np.isinf(den) | ~np.isfinite(val), 0.0, val)

    def init():
        x = _grid(n)
        X1, X2, X3 = np.meshgrid(x, x, x, indexing="ij")
        return g(X1, X2, X3) - g(2 * X1, X2, X3) + g(X1, 2 * X2, X3) - g(X1, X2, 2 * X3)

    return ProblemSpec(
        "allencahn3d",
        3,
        n,
        {"kappa": kappa},
        fld,
        init,
        False,
        warmup_time=1.0,
        default_h_ref=_stable_h(12 * w),
    )


def zero2d(n: int = 32, rank: int = 4) -> ProblemSpec:
    """Identically zero field on n x n matrices; every state is an equilibrium (smoke tests)."""
    if n < 2 * rank:
        raise ValueError("n >= 2 * rank required")
    fld = CallableField(lambda A: np.zeros_like(A), (n, n))

    def init():
        x = np.linspace(0.0, 1.0, n)
        return sum(np.outer(np.sin((k + 1) * np.pi * x), np.cos(k * np.pi * x)) / (k + 1) for k in range(rank))

    return ProblemSpec("zero2d", 2, n, {"rank": rank}, fld, init, False)


PROBLEMS = {
    "zero2d": zero2d,
    "nls2d": nls2d,
    "allencahn2d": allencahn2d,
    "nls3d": nls3d,
    "allencahn3d": allencahn3d,
}


def get_problem(name: str, **params) -> ProblemSpec:
    try:
        ctor = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return ctor(**params)
