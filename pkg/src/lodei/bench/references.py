"""Dense reference trajectories and their on-disk cache.

A reference is keyed by (problem, parameters, warm-up policy, h_ref, solver,
horizon, checkpoints).  Cached files store the key next to the arrays and
are refused if the stored key does not match the requested one.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..steppers import RK4, rk_dense_solve

log = logging.getLogger(__name__)

__all__ = ["Reference", "ReferenceKeyError", "reference_key", "initial_dense", "get_reference", "default_cache_dir"]

SCHEMA = 1


class ReferenceKeyError(OSError):
    """A cached reference exists but was produced for different settings."""


@dataclass
class Reference:
    key: dict
    A0: np.ndarray
    states: dict  # step index (in units of the run's h) -> dense array

    @property
    def final(self):
        return self.states[max(self.states)]


def default_cache_dir():
    return os.environ.get("LODEI_CACHE", str(Path.home() / ".cache" / "lodei"))


def _warm_h(problem, h_warmup):
    return problem.default_h_ref if h_warmup is None else h_warmup


def initial_dense(problem, warmup=True, h_warmup=None):
    """Initial value, propagated by dense RK4 to the warm-up time when enabled."""
    A0 = problem.initial_state()
    if not warmup or problem.warmup_time <= 0:
        return A0
    hw = _warm_h(problem, h_warmup)
    nsteps = max(1, math.ceil(problem.warmup_time / hw - 1e-9))
    return rk_dense_solve(A0, problem.warmup_time / nsteps, nsteps, problem.field.evaluate, RK4)


def _ref_step(problem, h, h_ref):
    """Reference step dividing the run step ``h`` (so checkpoints land on reference steps)."""
    target = problem.default_h_ref if h_ref is None else h_ref
    target = min(target, h)
    k = math.ceil(h / target - 1e-9)
    return h / k


def reference_key(problem, h, T, checkpoints, warmup=True, h_warmup=None, h_ref=None, solver="rk4"):
    return {
        "schema": SCHEMA,
        "problem": problem.name,
        "n": problem.n,
        "params": {k: float(v) for k, v in sorted(problem.params.items())},
        "warmup": bool(warmup and problem.warmup_time > 0),
        "warmup_time": problem.warmup_time if warmup else 0.0,
        "h_warmup": _warm_h(problem, h_warmup) if warmup and problem.warmup_time > 0 else None,
        "h_ref": _ref_step(problem, h, h_ref),
        "h": h,
        "T": T,
        "solver": solver,
        "checkpoints": sorted(int(c) for c in checkpoints),
    }


def _hash(key):
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:20]


def _save(path: Path, ref: Reference):
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"s{k}": v for k, v in ref.states.items()}
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, A0=ref.A0, key=np.array(json.dumps(ref.key, sort_keys=True)), **arrays)
    os.replace(tmp, path)


def load_reference(path, key=None) -> Reference:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"reference file not found: {path}")
    with np.load(path) as data:
        stored = json.loads(str(data["key"]))
        if key is not None and stored != json.loads(json.dumps(key, sort_keys=True)):
            raise ReferenceKeyError(f"reference {path} was computed for different settings; refusing to load")
        states = {int(name[1:]): data[name] for name in data.files if name.startswith("s")}
        return Reference(stored, data["A0"], states)


def get_reference(
    problem,
    h,
    T,
    checkpoints=None,
    *,
    warmup=True,
    h_warmup=None,
    h_ref=None,
    policy="compute",
    cache_dir=None,
) -> Reference:
    """Reference states at ``checkpoints`` (step indices of the run with step ``h``).

    ``policy`` is ``"compute"`` (use or fill the cache in ``cache_dir`` when
    given) or ``"load:<path>"``.
    """
    nsteps = round(T / h)
    checkpoints = sorted({nsteps} if checkpoints is None else set(checkpoints) | {nsteps})
    key = reference_key(problem, h, T, checkpoints, warmup, h_warmup, h_ref)
    if policy.startswith("load:"):
        return load_reference(policy[5:], key)
    path = None
    if cache_dir:
        path = Path(cache_dir) / f"ref-{problem.name}-{_hash(key)}.npz"
        if path.exists():
            log.info("loading cached reference %s", path)
            return load_reference(path, key)
    A0 = initial_dense(problem, warmup, h_warmup)
    hr = key["h_ref"]
    sub = round(h / hr)
    wanted = set(checkpoints)
    states = {}
    if 0 in wanted:
        states[0] = A0.copy()

    def keep(k, A):
        if k % sub == 0 and k // sub in wanted:
            states[k // sub] = A.copy()

    rk_dense_solve(A0, hr, nsteps * sub, problem.field.evaluate, RK4, callback=keep)
    ref = Reference(key, A0, states)
    if path is not None:
        _save(path, ref)
    return ref
