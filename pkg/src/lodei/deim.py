"""Row-index selection (DEIM procedures) on tall full-column-rank matrices.

Each selector returns a :class:`Selection` holding the chosen rows together
with the inverse of the selected r x r submatrix and its spectral norm, the
growth factor ``||(S^T U)^{-1}||_2`` that bounds how much the oblique
projection can amplify errors relative to the orthogonal one.

Complex inputs are handled throughout: row norms are Euclidean norms of the
complex rows and deflation uses Hermitian inner products.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as la

from .errors import BudgetExceededError, SelectionError

__all__ = [
    "Selection",
    "select_greedy_deim",
    "select_qdeim",
    "select_srrqr",
    "select_arp",
    "growth_factor",
    "detect_tie",
    "enumerate_qdeim_selections",
    "make_selector",
    "bound_greedy",
    "bound_qdeim",
    "bound_srrqr",
    "bound_arp",
]

DIAGNOSTIC_TIE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Selection:
    """Ordered distinct row indices with cached ``M = (S^T U)^{-1}`` and its norm.

    ``feasible`` is False when the selected submatrix is singular; then
    ``growth`` is ``inf`` and ``M`` is None.
    """

    indices: tuple
    method: str
    M: np.ndarray | None
    growth: float

    @property
    def feasible(self):
        return math.isfinite(self.growth)

    @property
    def r(self):
        return len(self.indices)

    def __eq__(self, other):
        if not isinstance(other, Selection):
            return NotImplemented
        return self.indices == other.indices

    def __hash__(self):
        return hash(self.indices)

    def __repr__(self):
        return f"Selection({self.indices}, method={self.method!r}, growth={self.growth:.4g})"


def _make(U, indices, method):
    idx = tuple(int(i) for i in indices)
    if len(set(idx)) != len(idx):
        raise SelectionError(f"duplicate indices in {idx}")
    sub = U[list(idx)]
    s = la.svdvals(sub)
    if s.size == 0 or s[-1] <= np.finfo(float).tiny or s[-1] < 1e-300:
        return Selection(idx, method, None, math.inf)
    return Selection(idx, method, la.inv(sub), float(1.0 / s[-1]))


def growth_factor(U, indices) -> float:
    """Spectral norm of ``(U[indices])^{-1}``; ``inf`` if the submatrix is singular."""
    U = np.asarray(U)
    idx = list(indices)
    if len(set(idx)) != len(idx):
        raise ValueError("indices must be distinct")
    s = la.svdvals(U[idx])
    if s[-1] == 0:
        return math.inf
    return float(1.0 / s[-1])


def _check(U):
    U = np.asarray(U)
    if U.ndim != 2:
        raise ValueError("expected a 2-d array")
    m, r = U.shape
    if not (m >= r >= 1):
        raise ValueError(f"need m >= r >= 1, got shape {U.shape}")
    if not np.all(np.isfinite(U)):
        raise SelectionError("non-finite basis")
    return U


def _row_norms2(W):
    if np.iscomplexobj(W):
        return np.einsum("ij,ij->i", W.real, W.real) + np.einsum("ij,ij->i", W.imag, W.imag)
    return np.einsum("ij,ij->i", W, W)


def _deflate(W, p):
    """Remove the direction of row ``p`` from every row: W <- W (I - u u^H)."""
    u = W[p] / np.linalg.norm(W[p])
    return W - np.outer(W @ u.conj(), u)


def select_greedy_deim(U) -> Selection:
    """Original greedy DEIM: interpolate column k on the previous points, pick the max residual."""
    U = _check(U)
    m, r = U.shape
    p = [int(np.argmax(np.abs(U[:, 0])))]
    for k in range(1, r):
        sub = U[p, :k]
        if np.linalg.cond(sub) > 1e14:
            raise SelectionError(f"singular interpolation system at step {k + 1}")
        c = la.solve(sub, U[p, k])
        res = np.abs(U[:, k] - U[:, :k] @ c)
        res[p] = -1.0
        p.append(int(np.argmax(res)))
    return _make(U, p, "greedy")


def _qdeim_path(U, tau=0.0):
    """Run Algorithm-1 style QDEIM; yields (k, norms, chosen) per step for diagnostics."""
    W = np.array(U, copy=True)
    scale = np.linalg.norm(U)
    if scale == 0:
        raise SelectionError("zero matrix has no QDEIM selection")
    chosen = []
    steps = []
    for k in range(U.shape[1]):
        nrm = np.sqrt(_row_norms2(W))
        top = nrm.max()
        if top < 1e-14 * scale:
            raise SelectionError(f"loss of full rank at QDEIM step {k + 1}")
        p = int(np.argmax(nrm))  # first occurrence = smallest index among exact ties
        steps.append((k + 1, nrm, p))
        chosen.append(p)
        W = _deflate(W, p)
        W[p] = 0.0
    return chosen, steps


def select_qdeim(U) -> Selection:
    """QDEIM with smallest-index tie breaking (max row norm, then rank-1 deflation)."""
    U = _check(U)
    chosen, _ = _qdeim_path(U)
    return _make(U, chosen, "qdeim")


def detect_tie(U, tau_tie: float = 0.0):
    """Report whether QDEIM meets a tie; returns ``(tied, step)`` with 1-based ``step``.

    A tie at step k means some other row's norm is within relative ``tau_tie``
    of the maximum; ``tau_tie = 0`` demands exact equality.
    """
    U = _check(U)
    _, steps = _qdeim_path(U)
    for k, nrm, p in steps:
        others = np.delete(nrm, p)
        if others.size and np.any(others >= (1.0 - tau_tie) * nrm[p]):
            return True, k
    return False, None


def enumerate_qdeim_selections(U, tau_tie: float = 0.0, budget: int = 10**6) -> set:
    """All selections reachable by QDEIM without tie breaking.

    Depth-first over pivot paths where each pivot attains the maximal row norm
    (within relative ``tau_tie``).  Returns the set of distinct terminal
    :class:`Selection` objects (ordered index tuples).
    """
    U = _check(U)
    m, r = U.shape
    scale = np.linalg.norm(U)
    if scale == 0:
        raise SelectionError("zero matrix has no QDEIM selection")
    found = {}
    nodes = 0

    def dfs(W, path):
        nonlocal nodes
        nodes += 1
        if nodes > budget:
            raise BudgetExceededError("enumerate_qdeim_selections", budget)
        if len(path) == r:
            t = tuple(path)
            if t not in found:
                found[t] = _make(U, t, "qdeim")
            return
        nrm = np.sqrt(_row_norms2(W))
        top = nrm.max()
        if top < 1e-14 * scale:
            raise SelectionError(f"loss of full rank at QDEIM step {len(path) + 1}")
        cands = np.flatnonzero(nrm >= (1.0 - tau_tie) * top)
        for p in cands:
            p = int(p)
            W2 = _deflate(W, p)
            W2[p] = 0.0
            dfs(W2, path + [p])

    dfs(np.array(U, copy=True), [])
    return set(found.values())


def select_srrqr(U, eta: float = 2.0, max_iter: int | None = None, refresh: int = 25) -> Selection:
    """Strong rank-revealing refinement of the QDEIM selection.

    Swaps a selected row for an unselected one while that multiplies
    ``|det(S^T U)|`` by more than ``eta``.  The factor for replacing the a-th
    selected row by row j is ``|(U M)[j, a]|`` with ``M = (S^T U)^{-1}``; the
    table ``B = U M`` is updated by Sherman-Morrison and rebuilt from scratch
    every ``refresh`` swaps.
    """
    if not eta > 1:
        raise ValueError("eta must exceed 1")
    U = _check(U)
    m, r = U.shape
    idx = list(select_qdeim(U).indices)
    if max_iter is None:
        max_iter = max(10, math.ceil(10 * r * max(math.log(r, eta), 1.0)))
    M = la.inv(U[idx])
    B = U @ M
    swaps = 0
    while True:
        mag = np.abs(B)
        mag[idx, :] = 0.0
        j, a = np.unravel_index(int(np.argmax(mag)), mag.shape)
        if mag[j, a] <= eta:
            break
        if swaps >= max_iter:
            raise SelectionError(
                f"SRRQR did not terminate after {max_iter} swaps "
                "(worst-case cost O(m r^3 log_eta r) exceeded)"
            )
        i = idx[a]
        idx[a] = int(j)
        swaps += 1
        if swaps % refresh == 0:
            M = la.inv(U[idx])
            B = U @ M
        else:
            delta = B[j] - B[i]
            col = B[:, a].copy()
            B = B - np.outer(col, delta) / col[j]
    return _make(U, idx, f"srrqr({eta:g})")


def select_arp(U, rng: np.random.Generator) -> Selection:
    """Adaptive randomized pivoting: sample rows by deflated squared row norms."""
    U = _check(U)
    m, r = U.shape
    W = np.array(U, copy=True)
    chosen = []
    for k in range(r):
        mass = np.clip(_row_norms2(W), 0.0, None)
        mass[chosen] = 0.0
        cum = np.cumsum(mass)
        total = cum[-1]
        if not total > 1e-12:
            raise SelectionError(f"ARP: residual mass {total:.2e} too small at step {k + 1}")
        u = rng.random() * total
        p = int(np.searchsorted(cum, u, side="right"))
        p = min(p, m - 1)
        while mass[p] == 0.0:  # guard against landing on a zero-mass row at a boundary
            p -= 1
        chosen.append(p)
        W = _deflate(W, p)
        W[p] = 0.0
    return _make(U, chosen, "arp")


# Table-1 style upper bounds on the growth factor ---------------------------------


def bound_greedy(U):
    m, r = U.shape
    return (1 + math.sqrt(2 * m)) ** (r - 1) / np.max(np.abs(U[:, 0]))


def bound_qdeim(m, r, literal=False):
    """QDEIM growth bound ``sqrt(m - r + 1) sqrt(4^r + 6r - 1) / 3``.

    ``literal=True`` gives the variant with ``sqrt(m - r - 1)``, which
    degenerates to zero for ``m <= r + 1``.
    """
    k = m - r - 1 if literal else m - r + 1
    return math.sqrt(max(k, 0)) * math.sqrt(4**r + 6 * r - 1) / 3


def bound_srrqr(m, r, eta):
    return math.sqrt(1 + eta**2 * r * (m - r))


def bound_arp(m, r):
    return math.sqrt(1 + r * (m - r))


def make_selector(spec: str, seed: int | None = None) -> Callable[[np.ndarray], Selection]:
    """Build a selector callable from a short spec.

    Accepted forms: ``greedy``, ``qdeim``, ``srrqr`` / ``srrqr:ETA``,
    ``arp`` / ``arp:SEED``.  Randomized selectors own their generator.
    """
    name, _, arg = spec.partition(":")
    if name == "greedy":
        return select_greedy_deim
    if name == "qdeim":
        return select_qdeim
    if name == "srrqr":
        eta = float(arg) if arg else 2.0
        return lambda U: select_srrqr(U, eta)
    if name == "arp":
        rng = np.random.default_rng(int(arg) if arg else seed)
        return lambda U: select_arp(U, rng)
    raise ValueError(f"unknown selector {spec!r}")
