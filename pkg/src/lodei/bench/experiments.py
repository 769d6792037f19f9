"""Experiment drivers behind the CLI subcommands.

Each driver takes a validated :class:`RunConfig`, writes its files into an
output directory and returns a summary dictionary.  Deterministic columns
(errors, growth factors, query counts) go to one CSV; wall-clock times to a
separate one so that reruns with the same seed give byte-identical results.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy.linalg as la

from ..deim import (
    bound_arp,
    bound_qdeim,
    bound_srrqr,
    enumerate_qdeim_selections,
    make_selector,
)
from ..kernels import FactoredMatrix
from ..manifold import make_projector, polytope_vertices
from ..problems import get_problem
from ..steppers import ErrorObserver, integrate, parse_method
from ..tucker import hosvd_truncate
from .config import RunConfig
from .references import get_reference

log = logging.getLogger(__name__)

__all__ = [
    "SCHEMA_VERSION",
    "run_experiment",
    "run_convergence",
    "run_selectors",
    "run_polytope",
    "fit_slope",
    "relative_best_error",
    "polytope_example",
    "random_orthonormal",
    "threads",
]

SCHEMA_VERSION = 1
RESULT_FIELDS = ["run_id", "step", "t", "rel_err", "sigma_ratio", "growth", "queries"]


def threads():
    try:
        return max(1, int(os.environ.get("LODEI_THREADS", "1")))
    except ValueError:
        return 1


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row.get(f)) for f in fields])


def run_id(cfg: RunConfig, method=None, mode=None, h=None, rank=None, seed=None):
    method = method or cfg.method
    mode = mode or cfg.mode
    h = cfg.h if h is None else h
    rank = cfg.rank if rank is None else rank
    rid = f"{cfg.problem}-{method}-{mode.replace(':', '_')}-r{rank}-h{h:g}"
    if mode.startswith("deim:arp") and seed is not None:
        rid += f"-s{seed}"
    return rid


def _problem(cfg):
    return get_problem(cfg.problem, **cfg.params)


def initial_state(problem, A0, method, rank):
    fam, _ = parse_method(method)
    if fam == "tucker":
        return hosvd_truncate(A0, rank)
    return FactoredMatrix.from_dense(A0, rank)


def relative_best_error(A, rank):
    """Relative error of the best rank-r (matrix) or HOSVD multilinear-rank-r (tensor) approximation."""
    A = np.asarray(A)
    if A.ndim == 2:
        s = la.svdvals(A)
        return float(np.sqrt(np.sum(s[rank:] ** 2) / np.sum(s**2)))
    approx = hosvd_truncate(A, rank).dense()
    return float(np.linalg.norm(A - approx) / np.linalg.norm(A))


def _mode_seed(mode, seed):
    """Returns the projector mode with the ARP seed made explicit."""
    if mode.startswith("deim:arp") and mode.count(":") == 1:
        return f"{mode}:{seed}"
    return mode


def _field_and_linear(problem, method):
    fam, _ = parse_method(method)
    if fam == "perk":
        if problem.linear is None:
            from ..errors import ConfigError

            raise ConfigError(f"problem {problem.name} has no linear split for PERK methods")
        return problem.nonlinear, problem.linear
    return problem.field, None


def simulate(cfg: RunConfig, reference, method=None, mode=None, h=None, rank=None, seed=None):
    """One integration with errors at the reference checkpoints; returns (trajectory, seconds)."""
    method = method or cfg.method
    mode = mode or cfg.mode
    h = cfg.h if h is None else h
    rank = cfg.rank if rank is None else rank
    seed = cfg.seed if seed is None else seed
    problem = _problem(cfg)
    field, linear = _field_and_linear(problem, method)
    Y0 = initial_state(problem, reference.A0, method, rank)
    projector = make_projector(_mode_seed(mode, seed), seed, guard=cfg.growth_guard)
    obs = ErrorObserver({k: v for k, v in reference.states.items() if k > 0})
    tic = time.perf_counter()
    traj = integrate(
        Y0,
        field,
        method,
        h,
        cfg.T,
        projector=projector,
        linear=linear,
        t0=problem.warmup_time if cfg.warmup else 0.0,
        observers=[obs],
    )
    return traj, time.perf_counter() - tic


def _reference(cfg, problem, h, checkpoints=None):
    return get_reference(
        problem,
        h,
        cfg.T,
        checkpoints,
        warmup=cfg.warmup,
        h_warmup=cfg.h_warmup,
        h_ref=cfg.h_ref,
        policy=cfg.reference,
        cache_dir=cfg.cache_dir,
    )


def run_experiment(cfg: RunConfig, out=None) -> dict:
    """``run``: one integration (median over ``seeds`` ARP seeds when > 1)."""
    problem = _problem(cfg)
    nsteps = round(cfg.T / cfg.h)
    checkpoints = None
    if cfg.output_every > 0:
        checkpoints = list(range(cfg.output_every, nsteps + 1, cfg.output_every))
    ref = _reference(cfg, problem, cfg.h, checkpoints)
    seeds = [cfg.seed + i for i in range(cfg.seeds)] if cfg.mode.startswith("deim:arp") else [cfg.seed]
    rows, timing, finals, walls = [], [], [], []
    for seed in seeds:
        traj, wall = simulate(cfg, ref, seed=seed)
        rid = run_id(cfg, seed=seed if len(seeds) > 1 else None)
        for rec in traj.records:
            row = rec.as_row()
            row["run_id"] = rid
            rows.append(row)
            timing.append({"run_id": rid, "step": rec.step, "wall_ms": rec.wall_ms})
        finals.append(traj.final_error)
        walls.append(wall)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id(cfg),
        "final_rel_err": float(np.median(finals)),
        "final_rel_errs": finals,
        "seeds": seeds,
        "best_rank_err": relative_best_error(ref.final, cfg.rank),
        "max_growth": max(r["growth"] for r in rows),
        "total_queries": int(sum(r["queries"] for r in rows)),
        "wall_s": float(np.median(walls)),
        "steps": nsteps,
        "config": cfg.to_dict(),
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "results.csv", RESULT_FIELDS, rows)
        _write_csv(out / "timings.csv", ["run_id", "step", "wall_ms"], timing)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def fit_slope(hs, errs, plateau=None, factor=10.0):
    """Least-squares slope of log(err) vs log(h) over the pre-plateau points.

    Points with ``err > factor * plateau`` are kept; if fewer than two
    remain, all points are used.  Returns (slope, number of points used).
    """
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    keep = np.ones(hs.size, dtype=bool) if plateau is None else errs > factor * plateau
    if keep.sum() < 2:
        keep[:] = True
    x, y = np.log(hs[keep]), np.log(errs[keep])
    slope = np.polyfit(x, y, 1)[0]
    return float(slope), int(keep.sum())


def run_convergence(cfg: RunConfig, out=None) -> dict:
    """``convergence``: final errors over ``hs`` for every (method, mode) pair and fitted slopes."""
    hs = sorted(cfg.hs or [cfg.h], reverse=True)
    if len(hs) < 3:
        from ..errors import ConfigError

        raise ConfigError("convergence needs at least three step sizes")
    methods = cfg.methods or [cfg.method]
    modes = cfg.modes or [cfg.mode]
    ranks = cfg.ranks or [cfg.rank]
    problem = _problem(cfg)
    # one reference at the final time serves every step size
    h_base = cfg.T / math.lcm(*[round(cfg.T / h) for h in hs])
    ref = _reference(cfg, problem, h_base)
    ref_final = ref.final
    jobs = [(m, md, r, h) for r in ranks for m in methods for md in modes for h in hs]

    def work(job):
        m, md, r, h = job
        from .references import Reference

        sub = Reference(ref.key, ref.A0, {round(cfg.T / h): ref_final})
        traj, wall = simulate(cfg, sub, method=m, mode=md, h=h, rank=r)
        return {"method": m, "mode": md, "rank": r, "h": h, "rel_err": traj.final_error, "wall_s": wall}

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        points = list(pool.map(work, jobs))
    slopes = []
    for r in ranks:
        plateau = relative_best_error(ref_final, r)
        for m in methods:
            for md in modes:
                pts = [p for p in points if p["method"] == m and p["mode"] == md and p["rank"] == r]
                slope, used = fit_slope([p["h"] for p in pts], [p["rel_err"] for p in pts], plateau)
                slopes.append(
                    {"method": m, "mode": md, "rank": r, "slope": slope, "points_used": used, "best_rank_err": plateau}
                )
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "convergence.csv", ["method", "mode", "rank", "h", "rel_err"], points)
        _write_csv(out / "slopes.csv", ["method", "mode", "rank", "slope", "points_used", "best_rank_err"], slopes)
        _write_csv(out / "timings.csv", ["method", "mode", "rank", "h", "wall_s"], points)
    return {"schema_version": SCHEMA_VERSION, "points": points, "slopes": slopes}


def random_orthonormal(rng, m, r, complex_=False):
    X = rng.standard_normal((m, r))
    if complex_:
        X = X + 1j * rng.standard_normal((m, r))
    return la.qr(X, mode="economic")[0]


SELECTOR_SPECS = ("greedy", "qdeim", "srrqr:2", "arp")


def _bound(spec, m, r):
    name = spec.partition(":")[0]
    if name == "qdeim":
        return bound_qdeim(m, r)
    if name == "srrqr":
        return bound_srrqr(m, r, float(spec.partition(":")[2] or 2))
    if name == "arp":
        return bound_arp(m, r)
    return None  # greedy bound depends on U itself


def run_selectors(cfg: RunConfig, out=None) -> dict:
    """``selectors``: growth-factor statistics on random orthonormal bases (plus the optional Allen-Cahn replay)."""
    rng = np.random.default_rng(cfg.seed)
    ranks = cfg.ranks or [2, 4, 6, 8]
    stats = []
    for r in ranks:
        bases = [random_orthonormal(rng, cfg.m, r) for _ in range(cfg.trials)]
        for spec in SELECTOR_SPECS:
            sel = make_selector(spec, cfg.seed)
            g = np.array([sel(U).growth for U in bases])
            bound = _bound(spec, cfg.m, r)
            if spec == "greedy":
                from ..deim import bound_greedy

                viol = int(sum(gi > bound_greedy(U) for gi, U in zip(g, bases)))
            elif spec == "arp":
                viol = int(np.median(g) > bound)
            else:
                viol = int(np.sum(g > bound))
            stats.append(
                {
                    "m": cfg.m,
                    "r": r,
                    "selector": spec,
                    "min": float(g.min()),
                    "median": float(np.median(g)),
                    "p95": float(np.percentile(g, 95)),
                    "max": float(g.max()),
                    "bound": bound,
                    "violations": viol,
                }
            )
    result = {"schema_version": SCHEMA_VERSION, "stats": stats}
    if cfg.replay:
        result["replay"] = replay_selector_study(cfg, out)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "selectors.csv", ["m", "r", "selector", "min", "median", "p95", "max", "bound", "violations"], stats)
    return result


def replay_selector_study(cfg: RunConfig, out=None, every=None) -> dict:
    """PRK2 with orthogonal and each DEIM projection on the configured problem; error curves over time."""
    problem = _problem(cfg)
    nsteps = round(cfg.T / cfg.h)
    every = every or cfg.output_every or max(1, nsteps // 50)
    checkpoints = list(range(every, nsteps + 1, every))
    ref = _reference(cfg, problem, cfg.h, checkpoints)
    curves = {"best": {k: relative_best_error(ref.states[k], cfg.rank) for k in checkpoints}}
    for mode in ["orthogonal"] + [f"deim:{s}" for s in SELECTOR_SPECS]:
        traj, _ = simulate(cfg, ref, method="prk2", mode=mode)
        curves[mode] = {rec.step: rec.error for rec in traj.records if rec.error is not None}
    rows = []
    for k in checkpoints:
        row = {"t": (problem.warmup_time if cfg.warmup else 0.0) + k * cfg.h}
        row.update({name: c[k] for name, c in curves.items()})
        rows.append(row)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "selector_replay.csv", ["t"] + list(curves), rows)
    return {"rows": rows}


def polytope_example(name: str):
    """Named small examples: ``smallY`` (3 x 3, rank 2), ``tie4`` (4 x 4, rank 2, ties on both sides)."""
    if name == "smallY":
        U = np.array([[np.sqrt(0.5), 0.0], [np.sqrt(0.5), 0.0], [0.0, 1.0]])
        V = np.array([[0.5, 0.0], [np.sqrt(0.75), 0.0], [0.0, 1.0]])
        return FactoredMatrix(U, np.diag([2.0, 1.0]), V)
    if name == "tie4":
        c = np.sqrt(0.5)
        U = np.array([[1.0, 0.0], [0.0, c], [0.0, c], [0.0, 0.0]])
        V = np.array([[0.0, c], [0.0, c], [1.0, 0.0], [0.0, 0.0]])
        return FactoredMatrix(U, np.diag([3.0, 1.0]), V)
    raise ValueError(f"unknown example {name!r}")


def run_polytope(cfg: RunConfig, out=None) -> dict:
    """``polytope``: vertices of the QDEIM differential-inclusion polytope at a small matrix."""
    rng = np.random.default_rng(cfg.seed)
    if cfg.matrix_file:
        path = Path(cfg.matrix_file)
        if not path.exists():
            raise FileNotFoundError(f"matrix file not found: {path}")
        A = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=2)
        Y = FactoredMatrix.from_dense(A, cfg.rank)
    elif cfg.example == "random":
        m = n = max(cfg.rank + 2, 6)
        Y = FactoredMatrix.from_dense(rng.standard_normal((m, cfg.rank)) @ rng.standard_normal((cfg.rank, n)), cfg.rank)
    else:
        Y = polytope_example(cfg.example)
    FY = rng.standard_normal(Y.shape)
    verts = polytope_vertices(Y, FY, cfg.tau_tie)
    IU = enumerate_qdeim_selections(Y.U, cfg.tau_tie)
    IV = enumerate_qdeim_selections(Y.V, cfg.tau_tie)
    dist = [
        {"i": i, "j": j, "distance": float(np.linalg.norm(verts[i] - verts[j]))}
        for i in range(len(verts))
        for j in range(i + 1, len(verts))
    ]
    result = {
        "schema_version": SCHEMA_VERSION,
        "vertices": len(verts),
        "selections_U": sorted(s.indices for s in IU),
        "selections_V": sorted(s.indices for s in IV),
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "vertices.json").write_text(
            json.dumps({**result, "matrices": [v.tolist() for v in verts]}, indent=1) + "\n"
        )
        _write_csv(out / "distances.csv", ["i", "j", "distance"], dist)
    return result
