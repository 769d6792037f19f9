"""Time integrators: dense explicit RK (references), PRK / PRK-DEIM, PERK / PERK-DEIM, Tucker PRK.

A projected RK step with tableau (a, b) on the rank-r manifold reads

    Z_1 = Y,   Z_j = Y + h sum_{l<j} a_{jl} K_l,   K_l = P_{T_r(Z_l)}[F(T_r(Z_l))],
    Y_next = T_r(Y + h sum_j b_j K_j),

where ``P`` is the orthogonal or the oblique (DEIM) tangent projection and
``T_r`` the truncated SVD.  Stage sums are carried as outer-product sums of
width at most ``r + 2 s r`` and truncated without densification.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, IntegrationError, LodeiError, NonFiniteError
from .kernels import (
    FactoredMatrix,
    exp_sylvester_factored,
    phi_sylvester_action,
    truncate_rank,
)
from .manifold import make_projector
from .tucker import TuckerTensor, tucker_prk_step

log = logging.getLogger(__name__)

__all__ = [
    "ButcherTableau",
    "PRK1",
    "PRK2",
    "PRK3",
    "RK4",
    "TABLEAUS",
    "rk_dense_step",
    "rk_dense_solve",
    "prk_step",
    "perk_step",
    "StepRecord",
    "Trajectory",
    "ErrorObserver",
    "RankMonitor",
    "integrate",
    "warmup_state",
    "parse_method",
]


@dataclass(frozen=True)
class ButcherTableau:
    name: str
    A: np.ndarray
    b: np.ndarray
    order: int

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        s = b.size
        if A.shape != (s, s) or np.any(np.triu(A) != 0):
            raise ValueError("explicit tableaux need a strictly lower triangular A")
        if not math.isclose(b.sum(), 1.0, abs_tol=1e-14):
            raise ValueError("weights must sum to one")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def stages(self):
        return self.b.size

    @property
    def c(self):
        return self.A.sum(axis=1)


PRK1 = ButcherTableau("prk1", [[0.0]], [1.0], 1)
PRK2 = ButcherTableau("prk2", [[0, 0], [1.0, 0]], [0.5, 0.5], 2)
PRK3 = ButcherTableau(
    "prk3", [[0, 0, 0], [1 / 3, 0, 0], [0, 2 / 3, 0]], [0.25, 0.0, 0.75], 3
)
RK4 = ButcherTableau(
    "rk4",
    [[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1.0, 0]],
    [1 / 6, 1 / 3, 1 / 3, 1 / 6],
    4,
)
TABLEAUS = {t.name: t for t in (PRK1, PRK2, PRK3, RK4)}


# ---------------------------------------------------------------------------
# dense reference integrators


def rk_dense_step(A, h, tableau: ButcherTableau, F: Callable):
    A = np.asarray(A)
    K = []
    for j in range(tableau.stages):
        Z = A
        for l in range(j):
            if tableau.A[j, l] != 0:
                Z = Z + (h * tableau.A[j, l]) * K[l]
        K.append(F(Z))
    out = A
    for j in range(tableau.stages):
        if tableau.b[j] != 0:
            out = out + (h * tableau.b[j]) * K[j]
    return out


def rk_dense_solve(A0, h, nsteps: int, F: Callable, tableau: ButcherTableau = RK4, callback=None):
    """``nsteps`` fixed steps of a dense explicit RK method; ``callback(k, A)`` after each step."""
    A = np.asarray(A0)
    for k in range(1, nsteps + 1):
        A = rk_dense_step(A, h, tableau, F)
        if not np.all(np.isfinite(A)):
            raise NonFiniteError("dense RK state", k)
        if callback is not None:
            callback(k, A)
    return A


def _nsteps(T, h):
    if h <= 0:
        raise ConfigError("step size must be positive")
    k = round(T / h)
    if k < 0 or abs(k * h - T) > 1e-9 * max(1.0, abs(T)):
        raise ConfigError(f"horizon {T} is not a multiple of h={h}")
    return int(k)


def warmup_state(problem, h: float = 1e-4):
    """Initial value propagated by dense RK4 up to the problem's warm-up time."""
    A0 = problem.initial_state()
    if problem.warmup_time <= 0:
        return A0
    nsteps = max(1, math.ceil(problem.warmup_time / h - 1e-9))
    return rk_dense_solve(A0, problem.warmup_time / nsteps, nsteps, problem.field.evaluate)


# ---------------------------------------------------------------------------
# projected steppers


def prk_step(Y: FactoredMatrix, h, tableau: ButcherTableau, field, projector, cap=None) -> FactoredMatrix:
    """One PRK step; ``projector`` supplies orthogonal or oblique tangent projections."""
    r = Y.rank
    s = tableau.stages
    cap = r + 2 * s * r if cap is None else cap
    base = Y.to_sum().with_cap(cap)
    K = []
    for j in range(s):
        if j == 0:
            Yj = Y
        else:
            Z = base
            for l in range(j):
                if tableau.A[j, l] != 0:
                    Z = Z + K[l].scaled(h * tableau.A[j, l])
            Yj = truncate_rank(Z, r)
        K.append(projector.project(Yj, field, stage=j + 1).to_sum())
    out = base
    for j in range(s):
        if tableau.b[j] != 0:
            out = out + K[j].scaled(h * tableau.b[j])
    return truncate_rank(out, r)


def perk_step(Y: FactoredMatrix, h, D, field, order: int, projector, **kw) -> FactoredMatrix:
    """Projected exponential Euler (order 1) or two-stage exponential RK (order 2).

    ``D`` defines the linear part ``L[Y] = D Y + Y D`` integrated exactly;
    only the field ``G`` is projected.
    """
    if order not in (1, 2):
        raise ValueError("PERK order must be 1 or 2")
    r = Y.rank
    E = exp_sylvester_factored(D, h, Y, **{k: v for k, v in kw.items() if k == "krylov_blocks"})
    K1 = projector.project(Y, field, stage=1).to_sum()
    N1 = phi_sylvester_action(D, h, K1, "phi1", **kw)
    lead = E.to_sum() + N1
    if order == 1:
        return truncate_rank(lead, r)
    Z2 = truncate_rank(lead, r)
    K2 = projector.project(Z2, field, stage=2).to_sum()
    N2 = phi_sylvester_action(D, h, K2 - K1, "phi2", **kw)
    return truncate_rank(lead + N2, r)


# ---------------------------------------------------------------------------
# integration loop


@dataclass
class StepRecord:
    step: int
    time: float
    sigma_1: float
    sigma_r: float
    growth: float
    wall_ms: float
    queries: int
    error: float | None = None

    def as_row(self):
        return {
            "step": self.step,
            "t": self.time,
            "rel_err": self.error,
            "sigma_ratio": (self.sigma_r / self.sigma_1) if self.sigma_1 > 0 else 0.0,
            "growth": self.growth,
            "queries": self.queries,
        }


@dataclass
class Trajectory:
    records: list
    state: object
    time: float

    @property
    def final_error(self):
        errs = [r.error for r in self.records if r.error is not None]
        return errs[-1] if errs else None


class ErrorObserver:
    """Relative Frobenius error against dense references keyed by step index."""

    def __init__(self, references: dict):
        self.references = dict(references)
        self.errors = {}

    def __call__(self, record: StepRecord, state):
        ref = self.references.get(record.step)
        if ref is None:
            return
        err = float(np.linalg.norm(state.dense() - ref) / np.linalg.norm(ref))
        record.error = err
        self.errors[record.step] = err


class RankMonitor:
    """Collects sigma_r / sigma_1 per step; flags near-degenerate states."""

    def __init__(self, tol=1e-14):
        self.tol = tol
        self.ratios = []

    def __call__(self, record: StepRecord, state):
        ratio = record.sigma_r / record.sigma_1 if record.sigma_1 > 0 else 0.0
        self.ratios.append(ratio)
        if ratio < self.tol:
            log.warning("step %d: rank nearly deficient (sigma_r/sigma_1 = %.2e)", record.step, ratio)


def parse_method(method: str):
    """Returns ``(family, order)``; family is ``prk``, ``perk`` or ``tucker``."""
    m = method.lower()
    if m.startswith("tucker-prk"):
        fam, rest = "tucker", m[len("tucker-prk"):]
    elif m.startswith("perk"):
        fam, rest = "perk", m[4:]
    elif m.startswith("prk"):
        fam, rest = "prk", m[3:]
    else:
        raise ConfigError(f"unknown method {method!r}")
    if rest not in ("1", "2", "3") or (fam == "perk" and rest == "3"):
        raise ConfigError(f"unsupported order in method {method!r}")
    return fam, int(rest)


def _singulars(state):
    if isinstance(state, FactoredMatrix):
        s = state.singular_values()
        return float(s[0]), float(s[-1])
    svals = np.linalg.svd(state.core.reshape(state.core.shape[0], -1), compute_uv=False)
    return float(svals[0]), float(svals[-1])


def integrate(
    Y0,
    field,
    method: str,
    h: float,
    T: float,
    *,
    projector=None,
    mode: str = "orthogonal",
    seed: int | None = None,
    linear=None,
    t0: float = 0.0,
    observers: Sequence[Callable] = (),
    **kw,
) -> Trajectory:
    """Fixed-step integration of a factored state over ``[t0, t0 + T]``.

    ``method`` is ``prk1..3``, ``perk1..2`` (needs ``linear``; ``field`` is then
    the nonlinear part) or ``tucker-prk1..3`` (state a :class:`TuckerTensor`).
    Observers are called as ``obs(record, state)`` after every step.  A failing
    step raises :class:`IntegrationError` carrying the records so far and the
    last good state.
    """
    fam, order = parse_method(method)
    nsteps = _nsteps(T, h)
    if projector is None:
        projector = make_projector(mode, seed)
    if fam == "perk" and linear is None:
        raise ConfigError("PERK methods need the linear operator D")
    if fam == "tucker" and not isinstance(Y0, TuckerTensor):
        raise ConfigError("Tucker methods need a TuckerTensor state")
    if fam != "tucker" and not isinstance(Y0, FactoredMatrix):
        raise ConfigError("matrix methods need a FactoredMatrix state")
    tab = TABLEAUS[f"prk{order}"] if fam != "perk" else None

    Y = Y0
    records = []
    for k in range(1, nsteps + 1):
        q0 = field.queries
        g0 = len(projector.growths)
        tic = time.perf_counter()
        try:
            if fam == "prk":
                Y = prk_step(Y, h, tab, field, projector)
            elif fam == "perk":
                Y = perk_step(Y, h, linear, field, order, projector, **kw)
            else:
                Y = tucker_prk_step(Y, h, tab, field, projector)
        except LodeiError as exc:
            raise IntegrationError(str(exc), k, records, Y) from exc
        wall = 1e3 * (time.perf_counter() - tic)
        s1, sr = _singulars(Y)
        if not (np.isfinite(s1) and np.isfinite(sr)):
            raise IntegrationError("non-finite state", k, records, Y)
        gs = projector.growths[g0:]
        growth = max((float(np.prod(g[:2])) if fam != "tucker" else max(g) for g in gs), default=1.0)
        rec = StepRecord(k, t0 + k * h, s1, sr, growth, wall, field.queries - q0)
        for obs in observers:
            obs(rec, Y)
        records.append(rec)
    return Trajectory(records, Y, t0 + nsteps * h)
