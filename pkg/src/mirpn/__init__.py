"""mirpn: deadlock detection for mini-MIR programs via Petri net reachability."""

from __future__ import annotations

from .analysis import AliasClass, AliasReport, LockSite, analyze, collect_locks, points_to
from .builder import BuildConfig, NetIndex, RwModel, build_net, canonical_dump
from .errors import AnalysisError, BuildError, ExportError, FireError, MirPnError, ParseError
from .mir import AcquireMode, LockKind, LockKindFilter, Program
from .normalize import auto_insert_drops, normalize_blocks, prepare
from .parser import parse_files, parse_program, parse_sources
from .petri import PetriNet, enabled, explore, find_deadlocks, fire, inverse_net
from .printer import format_program

__version__ = "0.1.0"

__all__ = [
    "AcquireMode",
    "AliasClass",
    "AliasReport",
    "AnalysisError",
    "BuildConfig",
    "BuildError",
    "ExportError",
    "FireError",
    "LockKind",
    "LockKindFilter",
    "LockSite",
    "MirPnError",
    "NetIndex",
    "ParseError",
    "PetriNet",
    "Program",
    "RwModel",
    "analyze",
    "auto_insert_drops",
    "build_net",
    "canonical_dump",
    "collect_locks",
    "enabled",
    "explore",
    "find_deadlocks",
    "fire",
    "format_program",
    "inverse_net",
    "normalize_blocks",
    "parse_files",
    "parse_program",
    "parse_sources",
    "points_to",
    "prepare",
]
