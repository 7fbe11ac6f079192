"""Pipeline orchestration and diagnostic rendering.

``run`` takes a RunConfig through parse, normalize, analyze, build,
explore and report, and never raises for bad input: every failure becomes
an error diagnostic with exit code 3.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .analysis import AliasReport, analyze
from .builder import BuildConfig, NetIndex, RwModel, build_net, canonical_dump
from .errors import MirPnError
from .mir import AcquireMode, Join, LockAcquire, LockKind, LockKindFilter, Program
from .normalize import prepare
from .oracle import DEFAULT_BOUND, Verdict, simulate_all
from .parser import parse_files
from .petri import DEFAULT_MAX_STATES, DeadlockReport, explore, find_deadlocks
from .pnml import export_pnml

EXIT_CLEAN, EXIT_DEADLOCK, EXIT_INCONCLUSIVE, EXIT_ERROR = 0, 1, 2, 3


class Severity(Enum):
    DEADLOCK = "deadlock"
    WARNING = "warning"
    INCONCLUSIVE = "inconclusive"
    ERROR = "error"


class OutputFormat(Enum):
    TEXT = "text"
    JSON = "json"


@dataclass(frozen=True)
class RunConfig:
    inputs: tuple[str, ...]
    lock_kind_filter: LockKindFilter = LockKindFilter.ALL
    rwlock_model: RwModel = RwModel.GENERAL
    rwlock_capacity: int | None = None
    include_unwind: bool = False
    max_states: int = DEFAULT_MAX_STATES
    emit_pnml: str | None = None
    emit_netdump: str | None = None
    oracle_check: bool = False
    oracle_bound: int = DEFAULT_BOUND
    output_format: OutputFormat = OutputFormat.TEXT
    dump_aliases: str | None = None
    dump_reachability: str | None = None

    def __post_init__(self) -> None:
        if not self.inputs:
            raise ValueError("at least one input path is required")
        if self.max_states < 1:
            raise ValueError("max_states must be at least 1")

    @property
    def build_config(self) -> BuildConfig:
        return BuildConfig(
            self.rwlock_model, self.rwlock_capacity, self.include_unwind, self.lock_kind_filter
        )


@dataclass(frozen=True)
class WitnessStep:
    thread: str
    function: str
    block: int | None
    line: int | None
    action: str
    stuck: bool = False

    def render(self) -> str:
        if self.stuck and not self.thread:
            return "STUCK at entry"
        where = self.thread
        if self.block is not None:
            where += f" bb{self.block}"
        if self.line:
            where += f" line {self.line}"
        return f"STUCK: {where} {self.action}" if self.stuck else f"{where}: {self.action}"

    def as_dict(self) -> dict:
        return {
            "thread": self.thread,
            "function": self.function,
            "block": self.block,
            "line": self.line,
            "action": self.action,
            "stuck": self.stuck,
        }


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    message: str
    steps: tuple[WitnessStep, ...] = ()
    locks: tuple[str, ...] = ()
    firing: tuple[str, ...] = ()

    def render(self) -> list[str]:
        rows = [f"{self.severity.value}: {self.message}"]
        rows.extend(f"  {s.render()}" for s in self.steps)
        return rows

    def as_dict(self) -> dict:
        return {
            "severity": self.severity.value,
            "message": self.message,
            "witness": [s.render() for s in self.steps],
            "steps": [s.as_dict() for s in self.steps],
            "locks": list(self.locks),
            "firing": list(self.firing),
        }


@dataclass
class RunResult:
    exit_code: int
    diagnostics: list[Diagnostic] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    oracle_line: str | None = None

    @property
    def deadlocks(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity is Severity.DEADLOCK]

    def render_text(self) -> str:
        lines = []
        for d in self.diagnostics:
            if d.severity is not Severity.ERROR:
                lines.extend(d.render())
        if self.summary:
            s = self.summary
            lines.append(
                f"summary: {s['deadlocks']} deadlock(s); {s['mutex_classes']} mutex and "
                f"{s['rwlock_classes']} rwlock class(es); {s['places']} places, "
                f"{s['transitions']} transitions, {s['states']} states"
                + (" (truncated)" if s["truncated"] else "")
            )
        if self.oracle_line:
            lines.append(self.oracle_line)
        return "\n".join(lines) + "\n" if lines else ""

    def render_errors(self) -> str:
        rows = [f"error: {d.message}" for d in self.diagnostics if d.severity is Severity.ERROR]
        return "\n".join(rows) + "\n" if rows else ""

    def render_json(self) -> str:
        doc = {
            "exit_code": self.exit_code,
            "diagnostics": [d.as_dict() for d in self.diagnostics],
            "summary": self.summary,
            "oracle": self.oracle_line,
        }
        return json.dumps(doc, indent=2) + "\n"


# -- witness rendering --------------------------------------------------------


def _line(p: Program, function: str, block: int | None) -> int | None:
    if block is None:
        return None
    fn = p.functions[function]
    if block >= len(fn.blocks):
        return None
    return fn.blocks[block].terminator.loc.line or None


def _waiting_on(p: Program, index: NetIndex, pid: str) -> tuple[str, str | None]:
    """What the control token in place ``pid`` is waiting for, plus the lock label."""
    info = index.node(pid)
    cp = index.copies[info.copy]
    if info.role == "write_wait":
        label = index.lock_class(info.lock_class).label
        return f"waiting on {label} [write]", label
    term = p.functions[cp.function].blocks[info.block].terminator
    if isinstance(term, LockAcquire):
        cls = index.class_at(cp.function, info.block)
        if cls is not None:
            tag = "" if term.mode is AcquireMode.LOCK else f" [{term.mode.value}]"
            return f"waiting on {cls.label}{tag}", cls.label
    if isinstance(term, Join):
        site = p.functions[cp.function].handles().get(term.handle)
        th = index.thread_of_spawn.get((cp.id, site))
        if th is not None:
            return f"waiting to join {index.copies[th].label}", None
    return "blocked", None


def witness_steps(report: DeadlockReport, index: NetIndex, p: Program, net) -> tuple[WitnessStep, ...]:
    """Firing steps followed by one STUCK row per blocked control token."""
    rows = []
    for tid in report.witness:
        info = index.node(tid)
        cp = index.copies[info.copy]
        rows.append(
            WitnessStep(cp.label, cp.function, info.block, _line(p, cp.function, info.block), info.action)
        )
    control = set(index.control_places())
    marked = [(pid, n) for pid, n in net.as_dict(report.marking).items() if pid in control]
    if not marked:
        return tuple(rows) + (WitnessStep("", "", None, None, "", stuck=True),)
    for pid, n in marked:
        info = index.node(pid)
        cp = index.copies[info.copy]
        action, _ = _waiting_on(p, index, pid)
        if n > 1:
            action += f" (x{n})"
        rows.append(
            WitnessStep(cp.label, cp.function, info.block, _line(p, cp.function, info.block), action, True)
        )
    return tuple(rows)


def render_witness(report: DeadlockReport, index: NetIndex, p: Program, net) -> list[str]:
    return [s.render() for s in witness_steps(report, index, p, net)]


def _deadlock_diagnostic(report: DeadlockReport, index: NetIndex, p: Program, net) -> Diagnostic:
    steps = witness_steps(report, index, p, net)
    locks: set[str] = set()
    parts = []
    for pid in index.control_places():
        if report.marking[net.place_index[pid]]:
            info = index.node(pid)
            action, label = _waiting_on(p, index, pid)
            if label:
                locks.add(label)
            locks.update(index.lock_class(c).label for c, _m in info.held)
            parts.append(f"{index.copies[info.copy].label} {action}")
    message = "; ".join(parts) or "no thread can move"
    if any(index.node(t).action.startswith("branch ") for t in report.witness):
        message += " (path-insensitive: branch conditions are not evaluated)"
    return Diagnostic(Severity.DEADLOCK, message, steps, tuple(sorted(locks)), report.witness)


# -- pipeline -----------------------------------------------------------------


def _write(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _rw_capacity(index: NetIndex) -> dict[str, int]:
    return {lock: index.capacity[c.id] for c in index.classes if c.id in index.capacity for lock in c.locks}


def run(cfg: RunConfig) -> RunResult:
    result = RunResult(EXIT_CLEAN)
    try:
        prog = parse_files(cfg.inputs)
        prepared, warnings = prepare(prog, include_unwind=cfg.include_unwind)
        report: AliasReport = analyze(prepared, cfg.lock_kind_filter)
        if cfg.dump_aliases:
            _write(cfg.dump_aliases, report.to_json() + "\n")
        net, index = build_net(prepared, report, cfg.build_config)
        # the model is written out first so it survives a state-cap blow-up
        if cfg.emit_pnml:
            _write(cfg.emit_pnml, export_pnml(net, index))
        if cfg.emit_netdump:
            _write(cfg.emit_netdump, canonical_dump(net, index))
        graph = explore(net, cfg.max_states)
        search = find_deadlocks(graph, net, index.goal, index.control_places())
        if cfg.dump_reachability:
            _write(cfg.dump_reachability, graph.dump())
    except (MirPnError, OSError, UnicodeDecodeError) as exc:
        result.diagnostics.append(Diagnostic(Severity.ERROR, str(exc)))
        result.exit_code = EXIT_ERROR
        return result

    for w in warnings + index.warnings:
        result.diagnostics.append(Diagnostic(Severity.WARNING, w))
    for d in search.deadlocks:
        result.diagnostics.append(_deadlock_diagnostic(d, index, prepared, net))
    for d in search.stranded:
        steps = witness_steps(d, index, prepared, net)
        result.diagnostics.append(
            Diagnostic(Severity.WARNING, "main finished while other threads are blocked", steps, (), d.witness)
        )
    for d in search.nonterminating:
        result.diagnostics.append(
            Diagnostic(
                Severity.WARNING,
                "some executions can never terminate (no dead state and main never finishes)",
                firing=d.witness,
            )
        )
    if search.inconclusive:
        result.diagnostics.append(
            Diagnostic(
                Severity.INCONCLUSIVE,
                f"state cap of {cfg.max_states} reached; results are incomplete",
            )
        )
    result.summary = {
        "files": list(cfg.inputs),
        "deadlocks": len(search.deadlocks),
        "mutex_classes": sum(1 for c in report.classes if c.kind is LockKind.MUTEX and c.id in index.active),
        "rwlock_classes": sum(1 for c in report.classes if c.kind is LockKind.RWLOCK and c.id in index.active),
        "places": len(net.places),
        "transitions": len(net.transitions),
        "states": len(graph.states),
        "truncated": graph.truncated,
        "rwlock_model": cfg.rwlock_model.value,
    }
    inconclusive = search.inconclusive
    if cfg.oracle_check:
        oracle = simulate_all(
            prepared,
            bound=cfg.oracle_bound,
            priority=cfg.rwlock_model is RwModel.GENERAL,
            rw_capacity=_rw_capacity(index),
            kinds=cfg.lock_kind_filter,
            include_unwind=cfg.include_unwind,
            prepared=True,
        )
        net_dead = bool(search.deadlocks)
        if oracle.verdict is Verdict.BOUND_HIT or (search.inconclusive and not net_dead):
            result.oracle_line = f"oracle: INCONCLUSIVE (net {len(search.deadlocks)}, oracle {oracle.verdict.value})"
            inconclusive = True
        else:
            word = "AGREE" if net_dead == oracle.deadlock else "DISAGREE"
            result.oracle_line = (
                f"oracle: {word} (net {len(search.deadlocks)} deadlock(s), "
                f"oracle {oracle.stuck_count} stuck state(s))"
            )
    if search.deadlocks:
        result.exit_code = EXIT_DEADLOCK
    elif inconclusive:
        result.exit_code = EXIT_INCONCLUSIVE
    return result
