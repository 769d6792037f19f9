"""Dynamical low-rank integrators with DEIM-based oblique tangent projections."""
from .deim import (
    Selection,
    growth_factor,
    make_selector,
    select_arp,
    select_greedy_deim,
    select_qdeim,
    select_srrqr,
)
from .errors import LodeiError
from .kernels import FactoredMatrix, OuterProductSum, truncate_rank
from .manifold import project_oblique, project_orthogonal
from .problems import get_problem
from .steppers import PRK1, PRK2, PRK3, RK4, integrate, perk_step, prk_step
from .tucker import TuckerTensor, hosvd_truncate

__version__ = "0.1.0"

__all__ = [
    "FactoredMatrix",
    "LodeiError",
    "OuterProductSum",
    "PRK1",
    "PRK2",
    "PRK3",
    "RK4",
    "Selection",
    "TuckerTensor",
    "get_problem",
    "growth_factor",
    "hosvd_truncate",
    "integrate",
    "make_selector",
    "perk_step",
    "prk_step",
    "project_oblique",
    "project_orthogonal",
    "select_arp",
    "select_greedy_deim",
    "select_qdeim",
    "select_srrqr",
    "truncate_rank",
]
