"""Tangent-space projections on the manifold of fixed-rank matrices.

A tangent vector at ``Y = U S V^H`` is stored as ``U A + B V^H`` with ``A``
(r x n) and ``B`` (m x r).  The orthogonal projection uses the full field
value; the oblique (DEIM) projection only needs r rows and r columns of it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .deim import Selection, enumerate_qdeim_selections, make_selector, select_qdeim
from .errors import GrowthGuardError, NonFiniteError, SelectionError
from .kernels import FactoredMatrix, OuterProductSum
from .tucker import (
    TuckerTensor,
    build_mode_grams,
    project_oblique_tucker,
    project_orthogonal_tucker,
    tucker_selections,
)

log = logging.getLogger(__name__)

__all__ = [
    "TangentFactored",
    "ObliquePair",
    "make_pair",
    "project_orthogonal",
    "project_oblique",
    "oblique_dense",
    "orthogonal_dense",
    "quasi_optimality_ratio",
    "QuasiOptimality",
    "normal_residual",
    "polytope_vertices",
    "OrthogonalProjector",
    "ObliqueProjector",
    "make_projector",
    "DEFAULT_GROWTH_GUARD",
]

DEFAULT_GROWTH_GUARD = 1e8
DEDUP_TOL = 1e-10


def _ct(X):
    return X.conj().T


@dataclass(frozen=True, eq=False)
class TangentFactored:
    """``U @ A + B @ V^H`` where ``U``, ``V`` are the base point's factors."""

    U: np.ndarray
    A: np.ndarray
    B: np.ndarray
    V: np.ndarray

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def dense(self):
        return self.U @ self.A + self.B @ _ct(self.V)

    def to_sum(self) -> OuterProductSum:
        return OuterProductSum([(self.U, _ct(self.A)), (self.B, self.V)])


@dataclass(frozen=True, eq=False)
class ObliquePair:
    """Row selection for ``U`` and column selection for ``V`` with cached inverses.

    ``M_U = (S_U^T U)^{-1}`` and ``M_V = (V^H S_V)^{-1}``.
    """

    su: Selection
    sv: Selection

    @property
    def M_U(self):
        return self.su.M

    @property
    def M_V(self):
        return None if self.sv.M is None else _ct(self.sv.M)

    @property
    def growth(self):
        return self.su.growth * self.sv.growth

    @property
    def feasible(self):
        return self.su.feasible and self.sv.feasible


def make_pair(Y: FactoredMatrix, selector: Callable = select_qdeim) -> ObliquePair:
    return ObliquePair(selector(Y.U), selector(Y.V))


def _check_pair(pair, guard=None):
    if not pair.feasible:
        raise SelectionError(f"infeasible selection pair {pair.su.indices} / {pair.sv.indices}")
    if guard is not None and pair.growth > guard:
        raise GrowthGuardError(pair.growth, guard)


def project_orthogonal(Y: FactoredMatrix, Z) -> TangentFactored:
    """``U U^H Z + Z V V^H - U U^H Z V V^H`` as ``U A + B V^H``."""
    U, V = Y.U, Y.V
    if isinstance(Z, OuterProductSum):
        L, R = Z.stacked()
        A = (_ct(U) @ L) @ _ct(R)
        ZV = L @ (_ct(R) @ V)
    else:
        Z = np.asarray(Z)
        A = _ct(U) @ Z
        ZV = Z @ V
    B = ZV - U @ (_ct(U) @ ZV)
    return TangentFactored(U, A, B, V)


def project_oblique(Y: FactoredMatrix, field, pair: ObliquePair, guard=None) -> TangentFactored:
    """DEIM-based oblique projection of ``F(Y)`` from r rows and r columns of ``F(Y)``.

    The r x r block ``W`` at the selected rows and columns is read off the
    sampled rows, so exactly r row and r column queries are made.
    """
    _check_pair(pair, guard)
    su, sv = list(pair.su.indices), list(pair.sv.indices)
    R = field.rows(Y, su)
    if not np.all(np.isfinite(R)):
        bad = int(np.argwhere(~np.isfinite(R))[0][0])
        raise NonFiniteError("sampled rows of F", su[bad])
    C = field.cols(Y, sv)
    if not np.all(np.isfinite(C)):
        bad = int(np.argwhere(~np.isfinite(C))[0][1])
        raise NonFiniteError("sampled columns of F", sv[bad])
    return _assemble_oblique(Y, R, C, pair)


def _assemble_oblique(Y, R, C, pair):
    sv = list(pair.sv.indices)
    W = R[:, sv]
    MU, MV = pair.M_U, pair.M_V
    MUR = MU @ R
    A = MUR - (MU @ W @ MV) @ _ct(Y.V)
    B = C @ MV
    return TangentFactored(Y.U, A, B, Y.V)


def oblique_dense(Y: FactoredMatrix, Z, pair: ObliquePair):
    """Dense ``P^angle_Y[Z]`` for a dense ``Z`` (diagnostics)."""
    Z = np.asarray(Z)
    _check_pair(pair)
    return _assemble_oblique(Y, Z[list(pair.su.indices)], Z[:, list(pair.sv.indices)], pair).dense()


def orthogonal_dense(Y: FactoredMatrix, Z):
    return project_orthogonal(Y, Z).dense()


class QuasiOptimality(NamedTuple):
    ratio: float
    exact: bool
    bound: float


def quasi_optimality_ratio(Y: FactoredMatrix, Z, pair: ObliquePair) -> QuasiOptimality:
    """``||Z - P^angle Z|| / ||Z - P Z||`` with the growth-product bound it must respect."""
    Z = np.asarray(Z)
    num = np.linalg.norm(Z - oblique_dense(Y, Z, pair))
    den = np.linalg.norm(Z - orthogonal_dense(Y, Z))
    if den <= 1e-12 * max(np.linalg.norm(Z), np.finfo(float).tiny):
        # Z is tangent up to rounding; both projections reproduce it
        return QuasiOptimality(1.0, True, pair.growth)
    return QuasiOptimality(float(num / den), False, pair.growth)


def normal_residual(Y: FactoredMatrix, field) -> float:
    """Empirical epsilon_r at ``Y``: ``||F(Y) - P_Y F(Y)||_F``."""
    FY = field.dense(Y)
    return float(np.linalg.norm(FY - orthogonal_dense(Y, FY)))


def polytope_vertices(Y: FactoredMatrix, FY, tau_tie: float = 0.0, budget: int = 10**6):
    """Oblique projections of ``FY`` over all QDEIM-reachable selection pairs.

    Returns the generating set of the polytope (duplicates within Frobenius
    distance 1e-10 removed); each vertex is checked to lie in the tangent space.
    """
    FY = np.asarray(FY)
    IU = sorted(enumerate_qdeim_selections(Y.U, tau_tie, budget), key=lambda s: s.indices)
    IV = sorted(enumerate_qdeim_selections(Y.V, tau_tie, budget), key=lambda s: s.indices)
    out = []
    scale = max(np.linalg.norm(FY), 1.0)
    for su in IU:
        for sv in IV:
            P = oblique_dense(Y, FY, ObliquePair(su, sv))
            back = orthogonal_dense(Y, P)
            if np.linalg.norm(back - P) > 1e-10 * scale * max(su.growth * sv.growth, 1.0):
                raise ArithmeticError("vertex left the tangent space")
            if all(np.linalg.norm(P - Q) >= DEDUP_TOL for Q in out):
                out.append(P)
    return out


# ---------------------------------------------------------------------------
# projector objects used by the steppers


class OrthogonalProjector:
    """Orthogonal tangent projection of the full field value.

    With ``structured=True`` (default) a field offering a factored evaluation
    (``F(Y)`` as an outer-product sum, e.g. the cubic term at rank r^3) is
    projected without forming the dense m x n value; otherwise ``F(Y)`` is
    evaluated densely.
    """

    def __init__(self, structured: bool = True):
        self.structured = structured
        self.name = "orthogonal" if structured else "orthogonal-dense"
        self.growths = []

    def project(self, Y: FactoredMatrix, field, stage=None) -> TangentFactored:
        if self.structured and field.supports("factored"):
            FY = field.factored(Y)
            L, R = FY.stacked()
            if not (np.all(np.isfinite(L)) and np.all(np.isfinite(R))):
                raise NonFiniteError("factored F(Y)")
        else:
            FY = field.dense(Y)
            if not np.all(np.isfinite(FY)):
                raise NonFiniteError("F(Y)")
        return project_orthogonal(Y, FY)

    def project_tucker(self, Y: TuckerTensor, field, stage=None) -> TuckerTensor:
        FY = field.dense(Y)
        if not np.all(np.isfinite(FY)):
            raise NonFiniteError("F(Y)")
        return project_orthogonal_tucker(Y, FY, build_mode_grams(Y))


class ObliqueProjector:
    """DEIM projection with selections recomputed from the current factors at each call.

    If the growth product exceeds ``guard`` the selection is retried once
    with ``fallback`` (SRRQR by default) before the step fails.  With
    ``reuse=True`` the previous selection is kept as long as it stays
    feasible and within the guard (ablation only; stale selections are not
    tied to the current factors).
    """

    def __init__(self, selector: Callable, guard: float = DEFAULT_GROWTH_GUARD, fallback="srrqr", reuse=False, name=None):
        self.selector = selector
        self.guard = guard
        self.fallback = make_selector(fallback) if isinstance(fallback, str) else fallback
        self.reuse = reuse
        self.name = name or "oblique"
        self.growths = []
        self._last = None

    def _pair(self, Y):
        if self.reuse and self._last is not None:
            pair = ObliquePair(
                _reselect(Y.U, self._last.su), _reselect(Y.V, self._last.sv)
            )
            if pair.feasible and pair.growth <= self.guard:
                return pair
        pair = make_pair(Y, self.selector)
        if not pair.feasible or pair.growth > self.guard:
            if self.fallback is None:
                _check_pair(pair, self.guard)
            log.info("growth %.3e above guard, retrying with fallback selector", pair.growth)
            pair = make_pair(Y, self.fallback)
        self._last = pair
        return pair

    def project(self, Y: FactoredMatrix, field, stage=None) -> TangentFactored:
        pair = self._pair(Y)
        try:
            _check_pair(pair, self.guard)
        except GrowthGuardError as exc:
            raise GrowthGuardError(exc.growth, exc.guard, stage) from None
        self.growths.append((pair.su.growth, pair.sv.growth))
        return project_oblique(Y, field, pair)

    def project_tucker(self, Y: TuckerTensor, field, stage=None) -> TuckerTensor:
        sel = tucker_selections(Y, self.selector)
        b = sel.bound()
        if not np.isfinite(b) or b > self.guard:
            if self.fallback is None:
                raise GrowthGuardError(b, self.guard, stage)
            sel = tucker_selections(Y, self.fallback, sel.grams)
            b = sel.bound()
            if not np.isfinite(b) or b > self.guard:
                raise GrowthGuardError(b, self.guard, stage)
        self.growths.append(tuple(sel.growths))
        return project_oblique_tucker(Y, field, sel)


def _reselect(U, old: Selection) -> Selection:
    from .deim import _make

    return _make(U, old.indices, old.method)


def make_projector(mode: str, seed: int | None = None, guard: float = DEFAULT_GROWTH_GUARD, reuse=False):
    """``"orthogonal"``, ``"orthogonal-dense"`` or ``"deim:<selector spec>"`` (e.g. ``deim:qdeim``, ``deim:arp:3``)."""
    if mode == "orthogonal":
        return OrthogonalProjector()
    if mode == "orthogonal-dense":
        return OrthogonalProjector(structured=False)
    head, _, spec = mode.partition(":")
    if head != "deim" or not spec:
        raise ValueError(f"unknown projection mode {mode!r}")
    return ObliqueProjector(make_selector(spec, seed), guard=guard, reuse=reuse, name=mode)
