"""Third-order Tucker tensors, oblique tangent projections and the Tucker PRK-DEIM step.

Unfolding convention: the mode-i unfolding ``X_(i)`` has the mode-i index as
row and the two remaining indices (in increasing mode order, ``j < k``)
flattened colexicographically, column ``j_idx + k_idx * n_j``.  With this
choice ``Y_(i) = U_i S_i V_i^H`` holds for

    V_1 = (conj U_3 kron conj U_2) Q_1,  V_2 = (conj U_3 kron conj U_1) Q_2,
    V_3 = (conj U_2 kron conj U_1) Q_3

(the conjugates are no-ops for real data), where ``C_(i)^H = Q_i S_i^H`` is
an economy QR factorization of the transposed core unfolding.  Modes are
0-based in code.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la

from .deim import Selection
from .errors import GrowthGuardError, NonFiniteError, SelectionError

log = logging.getLogger(__name__)

__all__ = [
    "unfold",
    "fold",
    "mode_product",
    "TuckerTensor",
    "tucker_sum",
    "hosvd_truncate",
    "ModeGram",
    "build_mode_grams",
    "mode_v_matrix",
    "sample_v_selection",
    "TuckerSelections",
    "tucker_selections",
    "project_orthogonal_tucker",
    "project_oblique_tucker",
    "tucker_prk_step",
]


def _ct(X):
    return X.conj().T


def _other(mode):
    j, k = [m for m in range(3) if m != mode]
    return j, k


def unfold(X, mode: int):
    """Mode-``mode`` unfolding with colexicographic column ordering."""
    X = np.asarray(X)
    if not 0 <= mode < X.ndim:
        raise ValueError(f"invalid mode {mode} for a {X.ndim}-way tensor")
    return np.moveaxis(X, mode, 0).reshape(X.shape[mode], -1, order="F")


def fold(M, mode: int, shape):
    """Inverse of :func:`unfold` (``ten_i``)."""
    shape = tuple(shape)
    M = np.asarray(M)
    rest = [shape[m] for m in range(len(shape)) if m != mode]
    if M.shape != (shape[mode], int(np.prod(rest))):
        raise ValueError(f"matrix of shape {M.shape} cannot fold into {shape} along mode {mode}")
    return np.moveaxis(M.reshape([shape[mode]] + rest, order="F"), 0, mode)


def mode_product(X, mode: int, M):
    """``X x_mode M``: multiplies every mode-``mode`` fiber by ``M``."""
    X = np.asarray(X)
    M = np.asarray(M)
    if M.shape[1] != X.shape[mode]:
        raise ValueError(f"cannot multiply mode {mode} of size {X.shape[mode]} by {M.shape}")
    out = np.tensordot(M, X, axes=(1, mode))
    return np.moveaxis(out, 0, mode)


def multi_mode_product(X, mats):
    for mode, M in enumerate(mats):
        if M is not None:
            X = mode_product(X, mode, M)
    return X


@dataclass(frozen=True, eq=False)
class TuckerTensor:
    """``core x_1 U_1 x_2 U_2 x_3 U_3``.

    Factors produced by :func:`hosvd_truncate` are orthonormal; intermediate
    sums (stacked factors, block cores) need not be.
    """

    core: np.ndarray
    factors: tuple

    def __post_init__(self):
        if self.core.ndim != 3 or len(self.factors) != 3:
            raise ValueError("third-order Tucker tensors only")
        for i, U in enumerate(self.factors):
            if U.shape[1] != self.core.shape[i]:
                raise ValueError(f"factor {i} has {U.shape[1]} columns, core has {self.core.shape[i]}")

    @property
    def shape(self):
        return tuple(U.shape[0] for U in self.factors)

    @property
    def ranks(self):
        return self.core.shape

    @property
    def dtype(self):
        return np.result_type(self.core, *self.factors)

    def dense(self):
        U1, U2, U3 = self.factors
        return np.einsum("abc,ia,jb,kc->ijk", self.core, U1, U2, U3, optimize=True)

    def subtensor(self, I1, I2, I3):
        U1, U2, U3 = self.factors
        return np.einsum(
            "abc,ia,jb,kc->ijk", self.core, U1[list(I1)], U2[list(I2)], U3[list(I3)], optimize=True
        )

    def fibers(self, mode, pairs):
        """Mode-``mode`` fibers at ``(j, k)`` positions of the other two modes (n x len(pairs))."""
        j, k = _other(mode)
        js = [p[0] for p in pairs]
        ks = [p[1] for p in pairs]
        C = np.moveaxis(self.core, mode, 0)  # remaining axes stay in (j, k) order
        coef = np.einsum("abc,pb,pc->ap", C, self.factors[j][js], self.factors[k][ks], optimize=True)
        return self.factors[mode] @ coef

    def scaled(self, c):
        return TuckerTensor(c * self.core, self.factors)

    def orthonormality_error(self):
        return max(np.linalg.norm(_ct(U) @ U - np.eye(U.shape[1])) for U in self.factors)


def tucker_sum(terms: Sequence[tuple[complex, TuckerTensor]]) -> TuckerTensor:
    """Sum of scaled Tucker tensors: stacked factors and block-diagonal core."""
    terms = [(c, T) for c, T in terms if c != 0]
    if not terms:
        raise ValueError("empty Tucker sum")
    ranks = np.array([T.ranks for _, T in terms])
    tot = ranks.sum(axis=0)
    dtype = np.result_type(*[T.dtype for _, T in terms], *[np.asarray(c) for c, _ in terms])
    core = np.zeros(tuple(tot), dtype=dtype)
    offs = np.zeros(3, dtype=int)
    for (c, T), rk in zip(terms, ranks):
        sl = tuple(slice(o, o + r) for o, r in zip(offs, rk))
        core[sl] = c * T.core
        offs += rk
    factors = tuple(np.hstack([T.factors[i] for _, T in terms]) for i in range(3))
    return TuckerTensor(core, factors)


def _fix_signs_cols(P):
    piv = np.argmax(np.abs(P), axis=0)
    lead = P[piv, np.arange(P.shape[1])]
    mag = np.abs(lead)
    ph = np.where(mag > 0, lead / np.where(mag > 0, mag, 1), 1)
    c = np.conj(ph)
    return P * (c if np.iscomplexobj(P) else c.real)


def hosvd_truncate(X, r) -> TuckerTensor:
    """HOSVD truncation to multilinear rank ``r`` (int or 3-tuple).

    Dense input: leading left singular vectors of each unfolding, core by
    three-mode projection.  Tucker input: factors are first orthonormalized
    by QR so only the (small) transformed core is decomposed; this equals
    the dense HOSVD of the represented tensor without forming it.
    """
    rs = (r,) * 3 if np.isscalar(r) else tuple(r)
    if isinstance(X, TuckerTensor):
        Qs, Rs = [], []
        for U in X.factors:
            if not np.all(np.isfinite(U)):
                raise NonFiniteError("Tucker factor")
            q, rr = la.qr(U, mode="economic")
            Qs.append(q)
            Rs.append(rr)
        core = multi_mode_product(X.core, Rs)
        base = Qs
    else:
        core = np.asarray(X)
        base = [None, None, None]
    if not np.all(np.isfinite(core)):
        raise NonFiniteError("tensor")
    Ps = []
    for i in range(3):
        u, _, _ = la.svd(unfold(core, i), full_matrices=False)
        P = u[:, : rs[i]]
        if P.shape[1] < rs[i]:
            raise ValueError(f"target rank {rs[i]} exceeds mode size {core.shape[i]}")
        Ps.append(_fix_signs_cols(P))
    newcore = multi_mode_product(core, [_ct(P) for P in Ps])
    factors = tuple(P if Q is None else Q @ P for Q, P in zip(base, Ps))
    return TuckerTensor(newcore, factors)


@dataclass(frozen=True)
class ModeGram:
    """Per-mode factorization data: ``C_(i)^H = Q S^H`` and the flag for rank deficiency."""

    Q: np.ndarray
    S: np.ndarray
    sigma_min: float
    deficient: bool


def build_mode_grams(Y: TuckerTensor, tol: float = 1e-13) -> tuple:
    grams = []
    for i in range(3):
        Ci = unfold(Y.core, i)
        q, rr = la.qr(_ct(Ci), mode="economic")
        S = _ct(rr)
        smin = float(la.svdvals(S)[-1]) if S.size else 0.0
        smax = float(la.svdvals(S)[0]) if S.size else 0.0
        deficient = smax == 0 or smin <= tol * smax
        if deficient:
            log.debug("mode %d core unfolding is rank deficient (sigma_min=%g)", i, smin)
        grams.append(ModeGram(q, S, smin, deficient))
    return tuple(grams)


def mode_v_matrix(Y: TuckerTensor, mode: int, gram: ModeGram):
    """Dense ``V_i`` (n_j n_k x r); diagnostic scale only."""
    j, k = _other(mode)
    return np.kron(Y.factors[k].conj(), Y.factors[j].conj()) @ gram.Q


def _kron_rows(A_rows, B_rows):
    p = A_rows.shape[0]
    return np.einsum("pa,pb->pab", A_rows, B_rows).reshape(p, -1)


def sample_v_selection(Ubar, Utilde, Q, selector: Callable) -> Selection:
    """Two-stage DEIM for ``V = (Ubar kron Utilde) Q``.

    Selects rows of ``Ubar`` and ``Utilde`` separately, then rows of an
    orthonormal basis of ``[(S_1^T Ubar) kron (S_2^T Utilde)] Q``.  The
    composite selection is returned as flat row indices ``a * n + b`` into
    the n^2 rows of V (``a`` indexes ``Ubar``), with ``M = (V[idx])^{-1}``.
    """
    n = Utilde.shape[0]
    s1 = selector(Ubar)
    s2 = selector(Utilde)
    r2 = len(s2.indices)
    K = np.kron(Ubar[list(s1.indices)], Utilde[list(s2.indices)]) @ Q
    if la.svdvals(K)[-1] <= 1e-14 * max(la.svdvals(K)[0], 1e-300):
        raise SelectionError("singular Kronecker block in composite selection")
    Qh, _ = la.qr(K, mode="economic")
    s12 = selector(Qh)
    flat = []
    for t in s12.indices:
        a, b = divmod(int(t), r2)
        flat.append(s1.indices[a] * n + s2.indices[b])
    rows = _kron_rows(Ubar[[f // n for f in flat]], Utilde[[f % n for f in flat]]) @ Q
    sv = la.svdvals(rows)
    if sv[-1] == 0:
        return Selection(tuple(flat), f"alg2[{s12.method}]", None, math.inf)
    sel = Selection(tuple(flat), f"alg2[{s12.method}]", la.inv(rows), float(1 / sv[-1]))
    object.__setattr__(sel, "parts", (s1, s2, s12))
    return sel


@dataclass(frozen=True, eq=False)
class TuckerSelections:
    su: tuple  # three row selections over n
    sv: tuple  # three composite selections over n^2
    grams: tuple

    @property
    def growths(self):
        return [s.growth for s in self.su] + [s.growth for s in self.sv]

    def bound(self):
        """``sum_i g(U_i) g(V_i) + prod_i g(U_i)`` from measured growth factors."""
        gu = [s.growth for s in self.su]
        gv = [s.growth for s in self.sv]
        return sum(a * b for a, b in zip(gu, gv)) + gu[0] * gu[1] * gu[2]


def tucker_selections(Y: TuckerTensor, selector: Callable, grams=None) -> TuckerSelections:
    grams = build_mode_grams(Y) if grams is None else grams
    su, sv = [], []
    for i in range(3):
        j, k = _other(i)
        su.append(selector(Y.factors[i]))
        sv.append(sample_v_selection(Y.factors[k].conj(), Y.factors[j].conj(), grams[i].Q, selector))
    return TuckerSelections(tuple(su), tuple(sv), grams)


def _corelet(gram: ModeGram, mode: int, r):
    return fold(_ct(gram.Q), mode, tuple(r[m] if m != mode else gram.Q.shape[1] for m in range(3)))


def _assemble(Y: TuckerTensor, grams, block_core, extras):
    """Tangent element ``block x_i U_i + sum_i corelet_i x_i extra_i x_j U_j x_k U_k``."""
    r = Y.ranks
    dtype = np.result_type(block_core, *extras, *Y.factors)
    core = np.zeros(tuple(2 * ri for ri in r), dtype=dtype)
    core[: r[0], : r[1], : r[2]] = block_core
    for i in range(3):
        sl = [slice(0, r[m]) for m in range(3)]
        sl[i] = slice(r[i], 2 * r[i])
        core[tuple(sl)] = _corelet(grams[i], i, r)
    factors = tuple(np.hstack([Y.factors[i], extras[i]]) for i in range(3))
    return TuckerTensor(core, factors)


def project_orthogonal_tucker(Y: TuckerTensor, Z, grams=None) -> TuckerTensor:
    """Orthogonal tangent projection of a dense tensor ``Z`` at ``Y``."""
    grams = build_mode_grams(Y) if grams is None else grams
    Z = np.asarray(Z)
    Us = Y.factors
    UH = [_ct(U) for U in Us]
    block = multi_mode_product(Z, UH)
    extras = []
    for i in range(3):
        j, k = _other(i)
        mats = [None, None, None]
        mats[j], mats[k] = UH[j], UH[k]
        T = unfold(multi_mode_product(Z, mats), i) @ grams[i].Q  # Z_(i) V_i
        W = T - Us[i] @ (UH[i] @ T)
        extras.append(W)
    return _assemble(Y, grams, block, extras)


def project_oblique_tucker(
    Y: TuckerTensor,
    field,
    selections: TuckerSelections | None = None,
    selector: Callable | None = None,
    growth_guard: float | None = None,
) -> TuckerTensor:
    """DEIM-based oblique tangent projection of ``F(Y)`` from sampled fibers only.

    Consumes r mode-i fibers per mode (at the composite selections) and the
    r^3 core block at the row selections: at most ``3 r n + r^3`` entries.
    """
    if selections is None:
        if selector is None:
            raise ValueError("need selections or a selector")
        selections = tucker_selections(Y, selector)
    grams = selections.grams
    for s in (*selections.su, *selections.sv):
        if not s.feasible:
            raise SelectionError(f"infeasible selection {s.indices}")
    if growth_guard is not None:
        b = selections.bound()
        if b > growth_guard:
            raise GrowthGuardError(b, growth_guard)
    Us = Y.factors
    MU = [s.M for s in selections.su]
    extras = []
    for i in range(3):
        G = field.fibers(Y, i, selections.sv[i].indices)
        if not np.all(np.isfinite(G)):
            bad = int(np.argwhere(~np.isfinite(G))[0][1])
            raise NonFiniteError("sampled fibers", selections.sv[i].indices[bad])
        W = G - Us[i] @ (MU[i] @ G[list(selections.su[i].indices)])
        MV = _ct(selections.sv[i].M)
        extras.append(W @ MV)
    blk = field.block(Y, *[s.indices for s in selections.su])
    if not np.all(np.isfinite(blk)):
        raise NonFiniteError("sampled core block")
    block = multi_mode_product(blk, MU)
    return _assemble(Y, grams, block, extras)


def tucker_prk_step(Y: TuckerTensor, h: float, tableau, field, projector) -> TuckerTensor:
    """One Tucker PRK(-DEIM) step: RK stages, projections at HOSVD-truncated stages."""
    r = Y.ranks
    s = tableau.stages
    K = []
    for jst in range(s):
        if jst == 0:
            base = Y
        else:
            terms = [(1.0, Y)] + [(h * tableau.A[jst, l], K[l]) for l in range(jst)]
            base = hosvd_truncate(tucker_sum(terms), r)
        K.append(projector.project_tucker(base, field, stage=jst + 1))
    terms = [(1.0, Y)] + [(h * tableau.b[j], K[j]) for j in range(s)]
    return hosvd_truncate(tucker_sum(terms), r)
