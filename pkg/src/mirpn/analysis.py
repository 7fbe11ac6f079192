"""Call graph, lock-site collection, points-to and alias classing.

The points-to solver is an Andersen-style inclusion analysis: flow- and
context-insensitive, with interprocedural argument-to-parameter edges for
both calls and spawns.  Lock sites whose operands may point to a common
lock end up in the same alias class.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import AnalysisError
from .mir import (
    AcquireMode,
    Call,
    Drop,
    LockAcquire,
    LockKind,
    LockKindFilter,
    Loc,
    Program,
    Return,
    Spawn,
)

# -- call graph ---------------------------------------------------------------


@dataclass(frozen=True)
class CallGraph:
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, int, str], ...]
    spawn_edges: tuple[tuple[str, int, str], ...]

    def callees(self, fn: str) -> list[str]:
        return [c for f, _, c in self.edges if f == fn]


def build_call_graph(p: Program) -> CallGraph:
    edges: list[tuple[str, int, str]] = []
    spawns: list[tuple[str, int, str]] = []
    for fn, block in p.iter_blocks():
        term = block.terminator
        if isinstance(term, Call):
            edges.append((fn.name, block.id, term.callee))
        elif isinstance(term, Spawn):
            spawns.append((fn.name, block.id, term.callee))
    return CallGraph(tuple(sorted(p.functions)), tuple(edges), tuple(spawns))


def check_no_recursion(g: CallGraph) -> None:
    """Raise AnalysisError naming one cycle if call edges (not spawns) recurse."""
    succ: dict[str, list[str]] = defaultdict(list)
    for caller, _, callee in g.edges:
        if callee not in succ[caller]:
            succ[caller].append(callee)
    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in g.nodes}
    for root in g.nodes:
        if color[root] != WHITE:
            continue
        path = [root]
        color[root] = GREY
        stack = [iter(succ[root])]
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                stack.pop()
                color[path.pop()] = BLACK
                continue
            if color.get(nxt, WHITE) == GREY:
                cycle = path[path.index(nxt):] + [nxt]
                raise AnalysisError("recursive call cycle: " + " -> ".join(cycle))
            if color.get(nxt, WHITE) == WHITE:
                color[nxt] = GREY
                path.append(nxt)
                stack.append(iter(succ[nxt]))


# -- lock sites ---------------------------------------------------------------


@dataclass(frozen=True)
class LockSite:
    function: str
    block: int
    mode: AcquireMode
    operand: str
    guard: str
    loc: Loc = field(default=Loc(), compare=False)

    @property
    def kind(self) -> LockKind:
        return self.mode.kind

    def __str__(self) -> str:
        return f"{self.function}:bb{self.block}"


def collect_locks(p: Program, filter: LockKindFilter = LockKindFilter.ALL) -> list[LockSite]:
    """All acquisition sites whose lock kind passes ``filter``.

    The kind of a site is implied by its mode (``lock`` is a mutex, ``read``
    and ``write`` are rwlock operations), so sites whose operand is a
    parameter can be filtered before points-to runs.
    """
    sites = []
    for fn, block in p.iter_blocks():
        term = block.terminator
        if isinstance(term, LockAcquire) and filter.accepts(term.mode.kind):
            sites.append(
                LockSite(fn.name, block.id, term.mode, term.operand.value, term.dest, term.loc)
            )
    return sites


# -- points-to ----------------------------------------------------------------


@dataclass(frozen=True)
class PointsToMap:
    sets: Mapping[tuple[str, str], frozenset[str]]
    lock_kinds: Mapping[str, LockKind]

    def lookup(self, function: str, place: str) -> frozenset[str]:
        if place in self.lock_kinds:
            return frozenset({place})
        return self.sets.get((function, place), frozenset())


def points_to(p: Program, seed: PointsToMap | None = None) -> PointsToMap:
    """Least solution of the inclusion constraints of ``p``.

    ``seed`` lets a previous solution be fed back in; because the solution
    is a fixed point, doing so returns it unchanged.
    """
    locks = p.lock_names
    pts: dict[tuple[str, str], set[str]] = defaultdict(set)
    if seed is not None:
        for key, val in seed.sets.items():
            pts[key].update(val)
    subset: dict[tuple[str, str], set[tuple[str, str]]] = defaultdict(set)

    def flow(src_fn: str, src: str, dst: tuple[str, str]) -> None:
        if src in locks:
            pts[dst].add(src)
        else:
            subset[(src_fn, src)].add(dst)

    for fn, block in p.iter_blocks():
        for s in block.statements:
            for src in s.rvalue.value_sources():
                flow(fn.name, src, (fn.name, s.dest))
        term = block.terminator
        if isinstance(term, (Call, Spawn)):
            params = p.functions[term.callee].params
            for arg, param in zip(term.args, params):
                if arg.place is not None:
                    flow(fn.name, arg.place, (term.callee, param))

    work = [k for k, v in pts.items() if v]
    while work:
        node = work.pop()
        for dst in subset.get(node, ()):
            before = len(pts[dst])
            pts[dst] |= pts[node]
            if len(pts[dst]) != before:
                work.append(dst)
    kinds = {d.name: d.kind for d in p.lock_decls}
    return PointsToMap({k: frozenset(v) for k, v in pts.items() if v}, kinds)


# -- live ranges --------------------------------------------------------------


@dataclass(frozen=True)
class LiveRange:
    function: str
    guard: str
    acquire: int
    release_points: frozenset[int]
    blocks: frozenset[int]


def live_ranges(p: Program) -> list[LiveRange]:
    """Per acquisition site, the blocks over which its guard stays held."""
    out = []
    for fn, block in p.iter_blocks():
        term = block.terminator
        if not isinstance(term, LockAcquire):
            continue
        releases: set[int] = set()
        span: set[int] = set()
        stack = [term.target]
        while stack:
            b = stack.pop()
            if b in span:
                continue
            if b == block.id:
                raise AnalysisError(
                    f"{fn.name}: guard {term.dest!r} from bb{block.id} is still held when the loop repeats"
                )
            span.add(b)
            t = fn.blocks[b].terminator
            if isinstance(t, Drop) and t.place == term.dest:
                releases.add(b)
                continue
            if isinstance(t, Return):
                raise AnalysisError(
                    f"{fn.name}: guard {term.dest!r} from bb{block.id} reaches return in bb{b} unreleased"
                )
            stack.extend(t.successors())
        out.append(LiveRange(fn.name, term.dest, block.id, frozenset(releases), frozenset(span)))
    return out


# -- alias classes ------------------------------------------------------------


@dataclass(frozen=True)
class AliasClass:
    id: int
    kind: LockKind
    locks: frozenset[str]
    sites: tuple[LockSite, ...]

    @property
    def label(self) -> str:
        if self.locks:
            return "+".join(sorted(self.locks))
        site = self.sites[0]
        return f"{site.function}::{site.operand}"


@dataclass(frozen=True)
class AliasReport:
    classes: tuple[AliasClass, ...]
    call_graph: CallGraph
    candidates: tuple[tuple[LockSite, LockSite], ...] = ()

    def class_of(self, function: str, block: int) -> AliasClass | None:
        for cls in self.classes:
            for s in cls.sites:
                if s.function == function and s.block == block:
                    return cls
        return None

    def count(self, kind: LockKind) -> int:
        return sum(1 for c in self.classes if c.kind is kind)

    def to_json(self) -> str:
        doc = {
            "classes": [
                {
                    "id": c.id,
                    "kind": c.kind.value,
                    "locks": sorted(c.locks),
                    "sites": [str(s) for s in c.sites],
                }
                for c in self.classes
            ],
            "call_edges": [f"{a}:bb{b} -> {c}" for a, b, c in self.call_graph.edges],
            "spawn_edges": [f"{a}:bb{b} -> {c}" for a, b, c in self.call_graph.spawn_edges],
            "double_lock_candidates": [[str(a), str(b)] for a, b in self.candidates],
        }
        return json.dumps(doc, indent=2)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def build_alias_report(
    sites: Iterable[LockSite], ptmap: PointsToMap, g: CallGraph
) -> AliasReport:
    sites = list(sites)
    resolved = [ptmap.lookup(s.function, s.operand) for s in sites]
    for s, locks in zip(sites, resolved):
        for name in locks:
            if ptmap.lock_kinds[name] is not s.kind:
                raise AnalysisError(
                    f"lock kind conflict in alias class: {s.mode.value}() at {s} may target "
                    f"{ptmap.lock_kinds[name].value} {name!r}"
                )
    uf = _UnionFind(len(sites))
    owner: dict[str, int] = {}
    for i, locks in enumerate(resolved):
        for name in locks:
            if name in owner:
                uf.union(owner[name], i)
            else:
                owner[name] = i
    groups: dict[int, list[int]] = defaultdict(list)
    for i in range(len(sites)):
        groups[uf.find(i)].append(i)
    raw = []
    for members in groups.values():
        locks = frozenset().union(*(resolved[i] for i in members))
        kinds = {sites[i].kind for i in members}
        if len(kinds) > 1:
            raise AnalysisError("lock kind conflict in alias class: " + ", ".join(sorted(locks)))
        member_sites = tuple(sorted((sites[i] for i in members), key=lambda s: (s.function, s.block)))
        raw.append((kinds.pop(), locks, member_sites))
    raw.sort(key=lambda r: (min(r[1]) if r[1] else "￿", r[2][0].function, r[2][0].block))
    classes = tuple(AliasClass(i, kind, locks, ss) for i, (kind, locks, ss) in enumerate(raw))
    return AliasReport(classes, g)


def double_lock_candidates(
    report: AliasReport, ranges: Iterable[LiveRange]
) -> tuple[tuple[LockSite, LockSite], ...]:
    """Same-function site pairs where the second is acquired while the first is held.

    Only a pre-filter for diagnostics: whether the program actually
    deadlocks is decided by the net.
    """
    by_site = {(r.function, r.acquire): r for r in ranges}
    pairs = []
    for cls in report.classes:
        for a in cls.sites:
            rng = by_site.get((a.function, a.block))
            if rng is None:
                continue
            for b in cls.sites:
                if b.function == a.function and b.block in rng.blocks:
                    pairs.append((a, b))
    return tuple(pairs)


def analyze(p: Program, filter: LockKindFilter = LockKindFilter.ALL) -> AliasReport:
    """Run the whole lock analysis on a prepared program."""
    g = build_call_graph(p)
    check_no_recursion(g)
    sites = collect_locks(p, filter)
    report = build_alias_report(sites, points_to(p), g)
    cands = double_lock_candidates(report, live_ranges(p))
    return AliasReport(report.classes, report.call_graph, cands)
