"""Place/transition nets, the token game, and explicit-state reachability.

A marking is a tuple of token counts aligned with ``net.place_order`` (place
ids in natural sort order), which makes it hashable and canonical.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .errors import FireError

MAX_TOKENS = 2**31 - 1
DEFAULT_MAX_STATES = 1_000_000

Marking = tuple[int, ...]


def id_key(node_id: str) -> tuple:
    """Natural sort key: ``t2`` sorts before ``t10``."""
    return tuple(int(p) if p.isdigit() else p for p in re.split(r"(\d+)", node_id))


@dataclass(frozen=True)
class Place:
    id: str
    tokens: int = 0


@dataclass(frozen=True)
class Transition:
    id: str


@dataclass(frozen=True)
class Arc:
    source: str
    target: str
    weight: int = 1


@dataclass(frozen=True)
class PetriNet:
    places: tuple[Place, ...] = ()
    transitions: tuple[Transition, ...] = ()
    arcs: tuple[Arc, ...] = ()

    def __post_init__(self) -> None:
        pids = [p.id for p in self.places]
        tids = [t.id for t in self.transitions]
        if len(set(pids)) != len(pids):
            raise ValueError("duplicate place id")
        if len(set(tids)) != len(tids):
            raise ValueError("duplicate transition id")
        if set(pids) & set(tids):
            raise ValueError("place and transition ids overlap")
        pset, tset = set(pids), set(tids)
        for p in self.places:
            if not 0 <= p.tokens <= MAX_TOKENS:
                raise ValueError(f"bad initial marking for {p.id}")
        seen = set()
        for a in self.arcs:
            if a.weight < 1:
                raise ValueError(f"arc {a.source}->{a.target} has weight {a.weight}")
            if not ((a.source in pset and a.target in tset) or (a.source in tset and a.target in pset)):
                raise ValueError(f"arc {a.source}->{a.target} does not join a place and a transition")
            if (a.source, a.target) in seen:
                raise ValueError(f"duplicate arc {a.source}->{a.target}")
            seen.add((a.source, a.target))

    @cached_property
    def place_order(self) -> tuple[str, ...]:
        return tuple(sorted((p.id for p in self.places), key=id_key))

    @cached_property
    def place_index(self) -> dict[str, int]:
        return {pid: i for i, pid in enumerate(self.place_order)}

    @cached_property
    def transition_order(self) -> tuple[str, ...]:
        return tuple(sorted((t.id for t in self.transitions), key=id_key))

    @cached_property
    def _io(self) -> tuple[tuple[tuple[tuple[int, int], ...], ...], tuple[tuple[tuple[int, int], ...], ...]]:
        pidx = self.place_index
        pre: dict[str, list[tuple[int, int]]] = {t: [] for t in self.transition_order}
        post: dict[str, list[tuple[int, int]]] = {t: [] for t in self.transition_order}
        for a in self.arcs:
            if a.source in pidx:
                pre[a.target].append((pidx[a.source], a.weight))
            else:
                post[a.source].append((pidx[a.target], a.weight))
        order = self.transition_order
        return (
            tuple(tuple(sorted(pre[t])) for t in order),
            tuple(tuple(sorted(post[t])) for t in order),
        )

    @property
    def pre(self):
        return self._io[0]

    @property
    def post(self):
        return self._io[1]

    @cached_property
    def initial_marking(self) -> Marking:
        tokens = {p.id: p.tokens for p in self.places}
        return tuple(tokens[pid] for pid in self.place_order)

    def preset(self, tid: str) -> dict[str, int]:
        return {a.source: a.weight for a in self.arcs if a.target == tid}

    def postset(self, tid: str) -> dict[str, int]:
        return {a.target: a.weight for a in self.arcs if a.source == tid}

    def marking(self, counts: Mapping[str, int]) -> Marking:
        return tuple(counts.get(pid, 0) for pid in self.place_order)

    def as_dict(self, m: Marking, nonzero: bool = True) -> dict[str, int]:
        return {pid: c for pid, c in zip(self.place_order, m) if c or not nonzero}


def enabled(net: PetriNet, m: Marking) -> tuple[str, ...]:
    """Ids of transitions whose every input place holds at least the arc weight."""
    order = net.transition_order
    return tuple(
        order[i] for i, pre in enumerate(net.pre) if all(m[p] >= w for p, w in pre)
    )


def _enabled_idx(net: PetriNet, m: Marking) -> list[int]:
    return [i for i, pre in enumerate(net.pre) if all(m[p] >= w for p, w in pre)]


def _fire_idx(net: PetriNet, m: Marking, i: int) -> Marking:
    out = list(m)
    for p, w in net.pre[i]:
        out[p] -= w
    for p, w in net.post[i]:
        out[p] += w
        if out[p] > MAX_TOKENS:
            raise OverflowError(f"token count of {net.place_order[p]} exceeds {MAX_TOKENS}")
    return tuple(out)


def fire(net: PetriNet, m: Marking, t: str) -> Marking:
    try:
        i = net.transition_order.index(t)
    except ValueError:
        raise FireError(f"unknown transition {t!r}") from None
    if any(m[p] < w for p, w in net.pre[i]):
        raise FireError(f"transition {t!r} is not enabled")
    return _fire_idx(net, m, i)


def inverse_net(net: PetriNet) -> PetriNet:
    """Same nodes, every arc reversed."""
    return PetriNet(
        net.places,
        net.transitions,
        tuple(Arc(a.target, a.source, a.weight) for a in net.arcs),
    )


# -- reachability -------------------------------------------------------------


@dataclass
class ReachabilityGraph:
    net: PetriNet
    states: list[Marking]
    edges: list[tuple[int, str, int]]
    truncated: bool = False
    root: int = 0
    index: dict[Marking, int] = field(default_factory=dict, repr=False)

    def successors(self) -> list[list[tuple[str, int]]]:
        out: list[list[tuple[str, int]]] = [[] for _ in self.states]
        for s, t, d in self.edges:
            out[s].append((t, d))
        return out

    def dump(self) -> str:
        net = self.net
        lines = []
        for i, m in enumerate(self.states):
            body = ",".join(f"{k}:{v}" for k, v in net.as_dict(m).items())
            lines.append(f"state{i}: {{{body}}}")
        for s, t, d in sorted(self.edges, key=lambda e: (e[0], id_key(e[1]), e[2])):
            lines.append(f"edge: s{s} -{t}-> s{d}")
        if self.truncated:
            lines.append("truncated")
        return "\n".join(lines) + "\n"


def explore(net: PetriNet, max_states: int = DEFAULT_MAX_STATES, order: str = "bfs") -> ReachabilityGraph:
    """Enumerate reachable markings from the initial one, up to ``max_states``.

    With ``order="dfs"`` the frontier is a stack; the set of states found on
    a complete exploration is the same either way.
    """
    if max_states < 1:
        raise ValueError("max_states must be at least 1")
    root = net.initial_marking
    states = [root]
    index = {root: 0}
    edges: list[tuple[int, str, int]] = []
    tids = net.transition_order
    frontier: deque[int] = deque([0])
    pop = frontier.popleft if order == "bfs" else frontier.pop
    truncated = False
    while frontier and not truncated:
        s = pop()
        m = states[s]
        for i in _enabled_idx(net, m):
            nm = _fire_idx(net, m, i)
            d = index.get(nm)
            if d is None:
                if len(states) >= max_states:
                    truncated = True
                    break
                d = len(states)
                states.append(nm)
                index[nm] = d
                frontier.append(d)
            edges.append((s, tids[i], d))
    return ReachabilityGraph(net, states, edges, truncated, 0, index)


# -- deadlocks ----------------------------------------------------------------


@dataclass(frozen=True)
class DeadlockReport:
    state: int
    marking: Marking
    witness: tuple[str, ...]


@dataclass(frozen=True)
class DeadlockSearch:
    deadlocks: tuple[DeadlockReport, ...]
    stranded: tuple[DeadlockReport, ...]
    nonterminating: tuple[DeadlockReport, ...]
    inconclusive: bool

    def __len__(self) -> int:
        return len(self.deadlocks)

    def __iter__(self):
        return iter(self.deadlocks)


def shortest_paths(graph: ReachabilityGraph) -> list[tuple[int, str] | None]:
    """BFS parent links over the recorded edges; ties go to the smaller transition id."""
    succ = graph.successors()
    for lst in succ:
        lst.sort(key=lambda e: id_key(e[0]))
    parent: list[tuple[int, str] | None] = [None] * len(graph.states)
    seen = [False] * len(graph.states)
    seen[graph.root] = True
    queue = deque([graph.root])
    while queue:
        s = queue.popleft()
        for t, d in succ[s]:
            if not seen[d]:
                seen[d] = True
                parent[d] = (s, t)
                queue.append(d)
    return parent


def _witness(parent: Sequence[tuple[int, str] | None], s: int) -> tuple[str, ...]:
    steps = []
    while parent[s] is not None:
        s, t = parent[s]
        steps.append(t)
    return tuple(reversed(steps))


def replay(net: PetriNet, witness: Iterable[str], start: Marking | None = None) -> Marking:
    m = net.initial_marking if start is None else start
    for t in witness:
        m = fire(net, m, t)
    return m


def find_deadlocks(
    graph: ReachabilityGraph,
    net: PetriNet,
    goal_place: str,
    control_places: Iterable[str] | None = None,
) -> DeadlockSearch:
    """Classify the dead markings of ``graph``.

    A dead marking with ``goal_place`` empty is a deadlock.  A dead marking
    with the goal marked but some place of ``control_places`` still marked
    is a stranded-thread warning.  Markings from which neither a dead
    marking nor the goal can be reached are reported as non-terminating.
    """
    g = net.place_index[goal_place]
    ctrl = [net.place_index[p] for p in (control_places or ()) if p != goal_place]
    parent = shortest_paths(graph)
    deadlocks, stranded = [], []
    final: list[int] = []
    for i, m in enumerate(graph.states):
        if _enabled_idx(net, m):
            if m[g]:
                final.append(i)
            continue
        final.append(i)
        report = DeadlockReport(i, m, _witness(parent, i))
        if m[g] == 0:
            deadlocks.append(report)
        elif any(m[p] for p in ctrl):
            stranded.append(report)
    nonterm: list[DeadlockReport] = []
    if not graph.truncated:
        pred: list[list[int]] = [[] for _ in graph.states]
        for s, _t, d in graph.edges:
            pred[d].append(s)
        ok = [False] * len(graph.states)
        queue = deque(final)
        for i in final:
            ok[i] = True
        while queue:
            d = queue.popleft()
            for s in pred[d]:
                if not ok[s]:
                    ok[s] = True
                    queue.append(s)
        trapped = [i for i in range(len(graph.states)) if not ok[i]]
        if trapped:
            first = min(trapped, key=lambda i: (len(_witness(parent, i)), i))
            nonterm.append(DeadlockReport(first, graph.states[first], _witness(parent, first)))
    return DeadlockSearch(tuple(deadlocks), tuple(stranded), tuple(nonterm), graph.truncated)


# -- canonical dump -----------------------------------------------------------


def net_dump(net: PetriNet, names: Mapping[str, str] | None = None) -> str:
    """Text form with one line per node and arc, sorted by id."""
    names = names or {}
    lines = []
    for p in sorted(net.places, key=lambda p: id_key(p.id)):
        name = f" name={names[p.id]}" if p.id in names else ""
        lines.append(f"place {p.id} init={p.tokens}{name}")
    for t in sorted(net.transitions, key=lambda t: id_key(t.id)):
        name = f" name={names[t.id]}" if t.id in names else ""
        lines.append(f"transition {t.id}{name}")
    for a in sorted(net.arcs, key=lambda a: (id_key(a.source), id_key(a.target))):
        lines.append(f"arc {a.source} -> {a.target} w={a.weight}")
    return "\n".join(lines) + "\n"
