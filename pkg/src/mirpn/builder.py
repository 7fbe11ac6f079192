"""Translate a prepared mini-MIR program into a place/transition net.

Every block of every function *copy* becomes a place; every CFG edge a
transition.  A copy is instantiated per call site and per spawn site, so
two calls of the same function never share return places.  Functions that
(transitively) acquire no modelled lock are not expanded; their call sites
collapse to a single placeholder transition.

Lock fragments, per alias class:

* mutex: one resource place with one token; acquire consumes it, drop
  returns it.
* rwlock, general model: a tokens place holding N and a gate place holding
  one token.  Readers test the gate and take one token; a writer first
  takes the gate (announcing intent, which blocks new readers) and then
  all N tokens.
* rwlock, specific model: no gate; readers take one token, writers take N.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

from .analysis import AliasClass, AliasReport, check_no_recursion
from .errors import AnalysisError, BuildError
from .mir import (
    AcquireMode,
    Call,
    Drop,
    Function,
    Goto,
    Join,
    LockAcquire,
    LockKind,
    LockKindFilter,
    Program,
    Return,
    Spawn,
    SwitchInt,
)
from .normalize import cleanup_blocks, held_guards
from .petri import Arc, PetriNet, Place, Transition, net_dump

GOAL_PLACE = "main_end"


class RwModel(Enum):
    GENERAL = "general"
    SPECIFIC = "specific"


@dataclass(frozen=True)
class BuildConfig:
    rwlock_model: RwModel = RwModel.GENERAL
    rwlock_capacity: int | None = None  # None means auto
    include_unwind: bool = False
    lock_kind_filter: LockKindFilter = LockKindFilter.ALL


@dataclass(frozen=True)
class FunctionCopy:
    id: int
    function: str
    label: str
    kind: str  # "main", "call" or "thread"
    parent: int | None = None
    site: int | None = None  # block id of the call/spawn in the parent copy


@dataclass(frozen=True)
class NodeInfo:
    id: str
    name: str
    role: str
    copy: int | None = None
    block: int | None = None
    lock_class: int | None = None
    mode: AcquireMode | None = None
    action: str = ""
    held: tuple[tuple[int, AcquireMode], ...] = ()


@dataclass
class NetIndex:
    """Maps every net node back to where it came from."""

    nodes: dict[str, NodeInfo]
    copies: list[FunctionCopy]
    classes: tuple[AliasClass, ...]
    capacity: dict[int, int]
    goal: str = GOAL_PLACE
    warnings: list[str] = field(default_factory=list)
    thread_of_spawn: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.by_name = {info.name: nid for nid, info in self.nodes.items()}

    @property
    def start(self) -> str | None:
        """The place holding main's initial control token."""
        for nid, info in self.nodes.items():
            if info.role == "block" and info.copy == 0 and info.block == 0:
                return nid
        return None

    def node(self, nid: str) -> NodeInfo:
        return self.nodes[nid]

    def id_of(self, name: str) -> str:
        return self.by_name[name]

    @property
    def names(self) -> dict[str, str]:
        return {nid: info.name for nid, info in self.nodes.items()}

    def control_places(self) -> list[str]:
        return [n for n, i in self.nodes.items() if i.role in ("block", "write_wait")]

    def resource_places(self) -> list[str]:
        return [n for n, i in self.nodes.items() if i.role in ("resource", "gate")]

    def copies_of(self, function: str) -> list[FunctionCopy]:
        return [c for c in self.copies if c.function == function]

    def lock_class(self, cid: int) -> AliasClass:
        return self.classes[cid]

    def class_at(self, function: str, block: int) -> AliasClass | None:
        """Alias class of the acquisition terminating ``function``'s block, if modelled."""
        active = self.active
        for c in self.classes:
            if c.id in active and any(s.function == function and s.block == block for s in c.sites):
                return c
        return None

    @property
    def active(self) -> set[int]:
        """Ids of classes that have a resource fragment in the net."""
        return {i.lock_class for i in self.nodes.values() if i.role == "resource"}


class _Net:
    def __init__(self) -> None:
        self.places: dict[str, int] = {}
        self.transitions: list[str] = []
        self.arcs: dict[tuple[str, str], int] = {}
        self.info: dict[str, NodeInfo] = {}
        self.names: set[str] = set()

    def _name(self, name: str) -> str:
        base, n = name, 1
        while name in self.names:
            n += 1
            name = f"{base}#{n}"
        self.names.add(name)
        return name

    def place(self, pid: str, tokens: int, name: str, role: str, **kw) -> str:
        self.places[pid] = tokens
        self.info[pid] = NodeInfo(pid, self._name(name), role, **kw)
        return pid

    def transition(self, name: str, ins: dict[str, int], outs: dict[str, int], **kw) -> str:
        tid = f"t{len(self.transitions)}"
        self.transitions.append(tid)
        self.info[tid] = NodeInfo(tid, self._name(name), "transition", **kw)
        for p, w in ins.items():
            self.arcs[(p, tid)] = self.arcs.get((p, tid), 0) + w
        for p, w in outs.items():
            self.arcs[(tid, p)] = self.arcs.get((tid, p), 0) + w
        return tid

    def freeze(self) -> PetriNet:
        return PetriNet(
            tuple(Place(p, n) for p, n in self.places.items()),
            tuple(Transition(t) for t in self.transitions),
            tuple(Arc(s, t, w) for (s, t), w in self.arcs.items()),
        )


def lock_relevant_functions(p: Program, sites: set[tuple[str, int]]) -> set[str]:
    """Functions that acquire a modelled lock, directly or via calls and spawns."""
    relevant = {fn for fn, _ in sites}
    changed = True
    while changed:
        changed = False
        for fn, block in p.iter_blocks():
            term = block.terminator
            if fn.name not in relevant and isinstance(term, (Call, Spawn)) and term.callee in relevant:
                relevant.add(fn.name)
                changed = True
    return relevant


def _mode_tag(mode: AcquireMode) -> str:
    return "mutex" if mode is AcquireMode.LOCK else mode.value


class _Translator:
    def __init__(self, p: Program, r: AliasReport, cfg: BuildConfig):
        self.p = p
        self.cfg = cfg
        self.general = cfg.rwlock_model is RwModel.GENERAL
        self.classes = r.classes
        self.active = [c for c in r.classes if cfg.lock_kind_filter.accepts(c.kind)]
        self.site_class: dict[tuple[str, int], AliasClass] = {
            (s.function, s.block): c for c in self.active for s in c.sites
        }
        self.capacity: dict[int, int] = {}
        for c in self.active:
            if c.kind is LockKind.RWLOCK:
                reads = sum(1 for s in c.sites if s.mode is AcquireMode.READ)
                self.capacity[c.id] = cfg.rwlock_capacity or max(2, reads)
        self.guard_lock = self._bind_guards()
        self.relevant = lock_relevant_functions(p, set(self.site_class))
        self.held_info = {name: held_guards(fn) for name, fn in p.functions.items()}
        self.cleanup = {name: cleanup_blocks(fn) for name, fn in p.functions.items()}
        self.may_panic = self._panicking() if cfg.include_unwind else set()

        self.net = _Net()
        self.res_place: dict[int, str] = {}
        self.gate_place: dict[int, str] = {}
        self.copies: list[FunctionCopy] = []
        self.inherited: list[tuple[tuple[int, AcquireMode], ...]] = []
        self.block_place: list[dict[int, str]] = []
        self.end_place: list[str] = []
        self.unwind_place: list[str | None] = []
        self.callee_copy: dict[tuple[int, int], int] = {}
        self.thread_of_spawn: dict[tuple[int, int], int] = {}
        self.acquired: set[int] = set()

    def _bind_guards(self) -> dict[str, dict[str, tuple[AliasClass, AcquireMode] | None]]:
        bound: dict[str, dict[str, tuple[AliasClass, AcquireMode] | None]] = defaultdict(dict)
        for name, fn in self.p.functions.items():
            for b in fn.blocks:
                t = b.terminator
                if not isinstance(t, LockAcquire):
                    continue
                c = self.site_class.get((name, b.id))
                entry = (c, t.mode) if c is not None else None
                if bound[name].get(t.dest, entry) != entry:
                    raise BuildError(
                        f"{name}: guard {t.dest!r} is bound to different locks at different sites"
                    )
                bound[name][t.dest] = entry
        return bound

    def _panicking(self) -> set[str]:
        """Expanded functions that can exit by unwinding.

        A function unwinds out if one of its cleanup blocks returns, or if it
        calls an unwinding function at a site that has no unwind target.
        """
        out = {
            name
            for name, fn in self.p.functions.items()
            if any(isinstance(fn.blocks[b].terminator, Return) for b in self.cleanup[name])
        }
        changed = True
        while changed:
            changed = False
            for fn, b in self.p.iter_blocks():
                t = b.terminator
                if (
                    fn.name not in out
                    and isinstance(t, Call)
                    and t.unwind is None
                    and t.callee in out
                    and t.callee in self.relevant
                ):
                    out.add(fn.name)
                    changed = True
        return {n for n in out if n in self.relevant or n == self.p.entry}

    def held_of(self, fname: str, guards) -> tuple[tuple[int, AcquireMode], ...]:
        out = []
        for g in guards:
            bound = self.guard_lock[fname].get(g)
            if bound is not None:
                out.append((bound[0].id, bound[1]))
        return tuple(out)

    def held_at(self, k: int, bid: int) -> tuple[tuple[int, AcquireMode], ...]:
        fname = self.copies[k].function
        return self.inherited[k] + self.held_of(fname, self.held_info[fname].held_in.get(bid, ()))

    # -- structure ----------------------------------------------------------

    def resources(self) -> None:
        net = self.net
        for c in self.active:
            if c.kind is LockKind.MUTEX:
                self.res_place[c.id] = net.place(
                    f"lk{c.id}_res", 1, f"{c.label}.res", "resource", lock_class=c.id
                )
                continue
            self.res_place[c.id] = net.place(
                f"lk{c.id}_res", self.capacity[c.id], f"{c.label}.tokens", "resource", lock_class=c.id
            )
            if self.general:
                self.gate_place[c.id] = net.place(
                    f"lk{c.id}_gate", 1, f"{c.label}.gate", "gate", lock_class=c.id
                )

    def new_copy(self, fname: str, label: str, kind: str, parent: int | None, site: int | None, inh) -> int:
        k = len(self.copies)
        fn = self.p.functions[fname]
        self.copies.append(FunctionCopy(k, fname, label, kind, parent, site))
        self.inherited.append(inh)
        places = {}
        for b in fn.blocks:
            places[b.id] = self.net.place(
                f"fc{k}_{fname}_bb{b.id}", 1 if k == 0 and b.id == 0 else 0,
                f"{label}.bb{b.id}", "block", copy=k, block=b.id, held=self.held_at(k, b.id),
            )
        self.block_place.append(places)
        end_id = GOAL_PLACE if k == 0 else f"fc{k}_{fname}_end"
        end = self.net.place(end_id, 0, f"{label}.end", "end", copy=k, held=inh)
        self.end_place.append(end)
        if fname not in self.may_panic:
            self.unwind_place.append(None)
        elif k == 0:
            self.unwind_place.append(end)  # a panicking main still ends the process
        else:
            self.unwind_place.append(
                self.net.place(f"fc{k}_{fname}_unwind", 0, f"{label}.unwind", "unwind", copy=k)
            )
        return k

    def run(self) -> tuple[PetriNet, NetIndex]:
        self.resources()
        self.new_copy(self.p.entry, self.p.entry, "main", None, None, ())
        threads = 0
        k = 0
        while k < len(self.copies):
            cp = self.copies[k]
            fn = self.p.functions[cp.function]
            # allocate callee and thread copies first so joins can refer to them
            for b in fn.blocks:
                t = b.terminator
                if isinstance(t, Call) and t.callee in self.relevant:
                    self.callee_copy[(k, b.id)] = self.new_copy(
                        t.callee, f"{cp.label}>{t.callee}", "call", k, b.id, self.held_at(k, b.id)
                    )
                elif isinstance(t, Spawn) and t.callee in self.relevant:
                    threads += 1
                    self.thread_of_spawn[(k, b.id)] = self.new_copy(
                        t.callee, f"thread#{threads}({t.callee})", "thread", k, b.id, ()
                    )
            for b in fn.blocks:
                self.emit(cp, fn, b)
            k += 1
        warnings = [
            f"lock class {c.label} is never acquired on any path from {self.p.entry}"
            for c in self.active
            if c.id not in self.acquired
        ]
        index = NetIndex(
            self.net.info, self.copies, self.classes, self.capacity, GOAL_PLACE, warnings,
            self.thread_of_spawn,
        )
        return self.net.freeze(), index

    # -- per-terminator rules -------------------------------------------------

    def emit(self, cp: FunctionCopy, fn: Function, b) -> None:
        k = cp.id
        net = self.net
        places = self.block_place[k]
        src = places[b.id]
        here = f"{cp.label}.bb{b.id}"
        t = b.terminator
        kw = dict(copy=k, block=b.id)

        def step(action: str, ins: dict[str, int], outs: dict[str, int], **extra) -> str:
            return net.transition(f"{here}:{action}", ins, outs, action=action, **kw, **extra)

        if isinstance(t, Goto):
            step(f"goto bb{t.target}", {src: 1}, {places[t.target]: 1})
        elif isinstance(t, SwitchInt):
            # opaque scrutinee: free choice between all arms
            for i, tgt in enumerate(t.successors()):
                step(f"branch {i} -> bb{tgt}", {src: 1}, {places[tgt]: 1})
        elif isinstance(t, Return):
            if b.id in self.cleanup[fn.name] and self.unwind_place[k] is not None:
                step("return (unwinding)", {src: 1}, {self.unwind_place[k]: 1})
            else:
                step("return", {src: 1}, {self.end_place[k]: 1})
        elif isinstance(t, Call):
            self.emit_call(k, b.id, t, src, places, step)
        elif isinstance(t, LockAcquire):
            self.emit_acquire(cp, fn, b, t, src, places[t.target], step)
        elif isinstance(t, Drop):
            self.emit_drop(fn, t, src, places[t.target], step)
        elif isinstance(t, Spawn):
            th = self.thread_of_spawn.get((k, b.id))
            if th is None:
                step(f"spawn {t.callee} (skipped)", {src: 1}, {places[t.target]: 1})
            else:
                label = self.copies[th].label
                step(f"spawn {label}", {src: 1}, {places[t.target]: 1, self.block_place[th][0]: 1})
        elif isinstance(t, Join):
            site = fn.handles()[t.handle]
            th = self.thread_of_spawn.get((k, site))
            target = places[t.target]
            if th is None:
                callee = fn.blocks[site].terminator.callee
                step(f"join {callee} (skipped)", {src: 1}, {target: 1})
            else:
                label = self.copies[th].label
                step(f"join {label}", {src: 1, self.end_place[th]: 1}, {target: 1})
                if self.unwind_place[th] is not None:
                    step(f"join {label} (panicked)", {src: 1, self.unwind_place[th]: 1}, {target: 1})
        else:  # pragma: no cover
            raise BuildError(f"unsupported terminator {t!r}")

    def emit_call(self, k: int, bid: int, t: Call, src: str, places: dict[int, str], step) -> None:
        target = places[t.target]
        callee = self.callee_copy.get((k, bid))
        if callee is None:
            step(f"call {t.callee} (skipped)", {src: 1}, {target: 1})
            if self.cfg.include_unwind and t.unwind is not None:
                step(f"panic in {t.callee}", {src: 1}, {places[t.unwind]: 1})
            return
        label = self.copies[callee].label
        step(f"call {label}", {src: 1}, {self.block_place[callee][0]: 1})
        step(f"return from {label}", {self.end_place[callee]: 1}, {target: 1})
        if self.unwind_place[callee] is not None:
            dest = places[t.unwind] if t.unwind is not None else self.unwind_place[k]
            step(f"unwind from {label}", {self.unwind_place[callee]: 1}, {dest: 1})

    def emit_acquire(self, cp, fn, b, t: LockAcquire, src: str, target: str, step) -> None:
        c = self.site_class.get((fn.name, b.id))
        if c is None:
            step(f"{t.mode.value} {t.operand.value} (not modelled)", {src: 1}, {target: 1})
            return
        self.acquired.add(c.id)
        res = self.res_place[c.id]
        act = f"acquire {c.label} [{_mode_tag(t.mode)}]"
        lk = dict(lock_class=c.id, mode=t.mode)
        if c.kind is LockKind.MUTEX:
            step(act, {src: 1, res: 1}, {target: 1}, **lk)
        elif t.mode is AcquireMode.READ:
            if self.general:
                gate = self.gate_place[c.id]
                # the gate is tested and put back: a waiting writer blocks new readers
                step(act, {src: 1, gate: 1, res: 1}, {target: 1, gate: 1}, **lk)
            else:
                step(act, {src: 1, res: 1}, {target: 1}, **lk)
        else:
            n = self.capacity[c.id]
            if self.general:
                gate = self.gate_place[c.id]
                ww = self.net.place(
                    f"fc{cp.id}_{fn.name}_bb{b.id}_ww", 0, f"{cp.label}.bb{b.id}.write_wait",
                    "write_wait", copy=cp.id, block=b.id, lock_class=c.id, mode=t.mode,
                    held=self.held_at(cp.id, b.id),
                )
                step(f"request {c.label} [write]", {src: 1, gate: 1}, {ww: 1}, **lk)
                step(act, {ww: 1, res: n}, {target: 1}, **lk)
            else:
                step(act, {src: 1, res: n}, {target: 1}, **lk)

    def emit_drop(self, fn, t: Drop, src: str, target: str, step) -> None:
        bound = self.guard_lock[fn.name].get(t.place)
        if bound is None:
            step(f"drop {t.place}", {src: 1}, {target: 1})
            return
        c, mode = bound
        outs = {target: 1}
        if c.kind is LockKind.MUTEX or mode is AcquireMode.READ:
            outs[self.res_place[c.id]] = 1
        else:
            outs[self.res_place[c.id]] = self.capacity[c.id]
            if self.general:
                outs[self.gate_place[c.id]] = 1
        step(f"release {c.label} [{_mode_tag(mode)}]", {src: 1}, outs, lock_class=c.id, mode=mode)


def build_net(p: Program, r: AliasReport, cfg: BuildConfig = BuildConfig()) -> tuple[PetriNet, NetIndex]:
    """Build the net for ``p`` (already prepared) using the alias classes in ``r``."""
    try:
        check_no_recursion(r.call_graph)
    except AnalysisError as exc:
        raise BuildError(str(exc)) from None
    if cfg.rwlock_capacity is not None and cfg.rwlock_capacity < 1:
        raise BuildError(f"rwlock capacity must be at least 1, got {cfg.rwlock_capacity}")
    return _Translator(p, r, cfg).run()


def canonical_dump(net: PetriNet, index: NetIndex) -> str:
    return net_dump(net, index.names)


__all__ = [
    "BuildConfig",
    "FunctionCopy",
    "GOAL_PLACE",
    "NetIndex",
    "NodeInfo",
    "RwModel",
    "build_net",
    "canonical_dump",
    "lock_relevant_functions",
]

