"""Run configuration: validation and a flat ``key = value`` text format (JSON also accepted).

Text format, one setting per line, ``#`` starts a comment::

    problem = nls2d
    param.n = 128
    param.alpha = 0.1
    method = prk2
    mode = deim:arp
    rank = 8
    h = 1e-3
    T = 1
    reference = compute

Problem parameters use the ``param.`` prefix.  List-valued keys (``hs``,
``methods``, ``modes``, ``ranks``) take comma-separated values.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..problems import PROBLEMS
from ..steppers import parse_method

__all__ = ["RunConfig", "load_config", "parse_text", "dump_text"]

_LISTS = {"hs": float, "methods": str, "modes": str, "ranks": int}


@dataclass
class RunConfig:
    problem: str = "nls2d"
    params: dict = field(default_factory=dict)
    method: str = "prk2"
    mode: str = "orthogonal"
    rank: int = 6
    h: float = 1e-3
    T: float = 1.0
    warmup: bool = True
    h_warmup: float | None = None
    reference: str = "compute"
    h_ref: float | None = None
    ref_solver: str = "rk4"
    cache_dir: str | None = None
    seed: int = 0
    growth_guard: float = 1e8
    output_every: int = 0
    # sweep settings (convergence / selectors)
    hs: list = field(default_factory=list)
    methods: list = field(default_factory=list)
    modes: list = field(default_factory=list)
    ranks: list = field(default_factory=list)
    trials: int = 500
    m: int = 100
    example: str = "smallY"
    matrix_file: str | None = None
    tau_tie: float = 0.0
    seeds: int = 1
    replay: bool = False

    def validate(self) -> "RunConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        for meth in [self.method, *self.methods]:
            parse_method(meth)
        for mode in [self.mode, *self.modes]:
            _check_mode(mode)
        if self.rank < 1 or any(r < 1 for r in self.ranks):
            raise ConfigError("ranks must be positive")
        if not self.h > 0 or any(not h > 0 for h in self.hs):
            raise ConfigError("step sizes must be positive")
        if not self.T > 0:
            raise ConfigError("horizon T must be positive")
        for name in ("h_ref", "h_warmup"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if self.ref_solver != "rk4":
            raise ConfigError("only the rk4 reference solver is available")
        if not (self.reference == "compute" or self.reference.startswith("load:")):
            raise ConfigError("reference must be 'compute' or 'load:<path>'")
        if self.trials < 1 or self.seeds < 1:
            raise ConfigError("trials and seeds must be positive")
        if self.tau_tie < 0:
            raise ConfigError("tau_tie must be nonnegative")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw).validate()


def _check_mode(mode):
    if mode in ("orthogonal", "orthogonal-dense"):
        return
    head, _, spec = mode.partition(":")
    name = spec.partition(":")[0]
    if head != "deim" or name not in ("greedy", "qdeim", "srrqr", "arp"):
        raise ConfigError(f"unknown projection mode {mode!r}")


def _coerce(value: str, typ):
    if typ is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if typ is int:
        f = float(value)
        if not f.is_integer():
            raise ValueError(f"not an integer: {value!r}")
        return int(f)
    if typ is float:
        return float(value)
    return value


def _scalar(value: str):
    """Best-effort typing for problem parameters."""
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    return value


_TYPES = {
    "rank": int,
    "h": float,
    "T": float,
    "warmup": bool,
    "h_warmup": float,
    "h_ref": float,
    "seed": int,
    "growth_guard": float,
    "output_every": int,
    "trials": int,
    "m": int,
    "tau_tie": float,
    "seeds": int,
    "replay": bool,
}


def parse_text(text: str) -> dict:
    out: dict = {}
    params: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key.startswith("param."):
                params[key[6:]] = _scalar(value)
            elif key in _LISTS:
                out[key] = [_LISTS[key](v.strip()) for v in value.split(",") if v.strip()]
            elif value.lower() == "none":
                out[key] = None
            else:
                out[key] = _coerce(value, _TYPES.get(key, str))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    if params:
        out["params"] = params
    return out


def dump_text(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "params":
            for k, pv in sorted(v.items()):
                lines.append(f"param.{k} = {pv!r}" if isinstance(pv, str) and "," in pv else f"param.{k} = {pv}")
        elif f.name in _LISTS:
            if v:
                lines.append(f"{f.name} = {', '.join(repr(x) if isinstance(x, float) else str(x) for x in v)}")
        elif v is None:
            lines.append(f"{f.name} = none")
        else:
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(source: str, overrides: dict | None = None) -> RunConfig:
    """Load a config from a preset name, a JSON file or a key-value text file."""
    from .presets import PRESETS

    if source in PRESETS:
        data = dict(PRESETS[source])
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise FileNotFoundError(f"cannot read config {source}: {exc.strerror}") from exc
        if text.lstrip().startswith("{"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON config: {exc}") from None
        else:
            data = parse_text(text)
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)
