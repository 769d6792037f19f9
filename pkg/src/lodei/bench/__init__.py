"""Benchmark front end: configuration, references, experiment drivers and the CLI."""
from .config import RunConfig, dump_text, load_config, parse_text
from .presets import PRESETS
from .references import Reference, get_reference

__all__ = ["RunConfig", "load_config", "parse_text", "dump_text", "PRESETS", "Reference", "get_reference"]
