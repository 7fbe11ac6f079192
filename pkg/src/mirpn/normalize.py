"""Program-to-program rewrites that prepare a parsed unit for translation.

* :func:`prune_unreachable` drops blocks that cannot be reached from ``bb0``.
* :func:`strip_unwind` removes unwind edges when panics are not modelled.
* :func:`normalize_blocks` splits blocks so that each one performs at most
  one acquisition, always in terminator position.
* :func:`auto_insert_drops` makes RAII releases explicit: guards still held
  on a loop back-edge or at ``return`` get ``drop`` blocks inserted.

The held-guard analysis used by the last pass is also exported, because the
net builder needs to know which guards are held at every block.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import AnalysisError
from .mir import (
    BasicBlock,
    Call,
    Drop,
    Function,
    LockAcquire,
    Loc,
    Program,
    Return,
    Statement,
    all_successors,
)


def _map_functions(prog: Program, fn_map) -> Program:
    return prog.with_functions({name: fn_map(fn) for name, fn in prog.functions.items()})


def _renumber(fn: Function, keep: list[int]) -> Function:
    mapping = {old: new for new, old in enumerate(keep)}
    blocks = tuple(
        dataclasses.replace(
            fn.blocks[old], id=mapping[old], terminator=fn.blocks[old].terminator.remap(mapping)
        )
        for old in keep
    )
    return dataclasses.replace(fn, blocks=blocks)


def reachable_blocks(fn: Function, include_unwind: bool = True) -> list[int]:
    seen = {0}
    stack = [0]
    while stack:
        b = stack.pop()
        term = fn.blocks[b].terminator
        succs = all_successors(term) if include_unwind else term.successors()
        for s in succs:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return sorted(seen)


def cleanup_blocks(fn: Function) -> frozenset[int]:
    """Blocks that can only be entered by unwinding out of a call."""
    normal = set(reachable_blocks(fn, include_unwind=False))
    return frozenset(b.id for b in fn.blocks if b.id not in normal)


def prune_unreachable(prog: Program) -> tuple[Program, list[str]]:
    warnings: list[str] = []
    functions = {}
    for name, fn in prog.functions.items():
        keep = reachable_blocks(fn)
        if len(keep) != len(fn.blocks):
            dropped = sorted(set(range(len(fn.blocks))) - set(keep))
            for d in dropped:
                warnings.append(f"{name}: unreachable block bb{d} dropped")
            fn = _renumber(fn, keep)
        functions[name] = fn
    return prog.with_functions(functions), warnings


def strip_unwind(prog: Program) -> Program:
    def strip(fn: Function) -> Function:
        blocks = tuple(
            dataclasses.replace(b, terminator=dataclasses.replace(b.terminator, unwind=None))
            if isinstance(b.terminator, Call) and b.terminator.unwind is not None
            else b
            for b in fn.blocks
        )
        return dataclasses.replace(fn, blocks=blocks)

    return _map_functions(prog, strip)


# -- block splitting ----------------------------------------------------------


def _split_function(fn: Function) -> Function:
    if all(not any(s.is_acquire for s in b.statements) for b in fn.blocks):
        return fn
    # chains[i] lists (statements, acquisition-or-None) pieces for block i
    chains: list[list[tuple[list[Statement], Statement | None]]] = []
    for b in fn.blocks:
        pieces: list[tuple[list[Statement], Statement | None]] = []
        current: list[Statement] = []
        for s in b.statements:
            if s.is_acquire:
                pieces.append((current, s))
                current = []
            else:
                current.append(s)
        pieces.append((current, None))
        chains.append(pieces)
    head: dict[int, int] = {}
    next_id = 0
    for i, pieces in enumerate(chains):
        head[i] = next_id
        next_id += len(pieces)
    blocks: list[BasicBlock] = []
    for b, pieces in zip(fn.blocks, chains):
        bid = head[b.id]
        loc = b.loc
        for stmts, acq in pieces:
            if acq is None:
                term = b.terminator.remap(head)
            else:
                rv = acq.rvalue
                term = LockAcquire(acq.dest, rv.operand, rv.mode, bid + 1, acq.loc)
            blocks.append(BasicBlock(bid, tuple(stmts), term, loc))
            if acq is not None:
                loc = acq.loc
            bid += 1
    return dataclasses.replace(fn, blocks=tuple(blocks))


def normalize_blocks(prog: Program) -> Program:
    """Move every statement-position acquisition into its own block's terminator."""
    return _map_functions(prog, _split_function)


# -- held-guard analysis ------------------------------------------------------


@dataclass(frozen=True)
class HeldGuards:
    """Result of the forward held-guard analysis for one function.

    ``held_in[b]`` lists guards held on entry to block ``b`` in acquisition
    order; ``held_out[b]`` is the set after its terminator fires (for a
    drop, after the release).  ``back_edges`` are DFS back-edges.
    """

    held_in: dict[int, tuple[str, ...]]
    held_out: dict[int, tuple[str, ...]]
    back_edges: frozenset[tuple[int, int]]
    cleanup: frozenset[int]


def _dfs_order(fn: Function) -> tuple[list[int], set[tuple[int, int]]]:
    visited: set[int] = set()
    on_stack: set[int] = set()
    post: list[int] = []
    back: set[tuple[int, int]] = set()
    stack: list[tuple[int, int]] = [(0, 0)]
    visited.add(0)
    on_stack.add(0)
    while stack:
        node, idx = stack[-1]
        succs = all_successors(fn.blocks[node].terminator)
        if idx < len(succs):
            stack[-1] = (node, idx + 1)
            s = succs[idx]
            if s in on_stack:
                back.add((node, s))
            elif s not in visited:
                visited.add(s)
                on_stack.add(s)
                stack.append((s, 0))
        else:
            stack.pop()
            on_stack.discard(node)
            post.append(node)
    post.reverse()
    return post, back


def analyze_held(fn: Function) -> HeldGuards:
    guards = fn.guards()
    rpo, back = _dfs_order(fn)
    preds = fn.predecessors()
    held_in: dict[int, tuple[str, ...]] = {}
    held_out: dict[int, tuple[str, ...]] = {}
    for bid in rpo:
        block = fn.blocks[bid]
        if bid == 0:
            entry: tuple[str, ...] = ()
        else:
            fwd = [p for p in preds[bid] if (p, bid) not in back and p in held_out]
            entry = held_out[fwd[0]]
            for p in fwd[1:]:
                if set(held_out[p]) != set(entry):
                    raise AnalysisError(
                        f"{fn.name}: guards held on entry to bb{bid} differ between "
                        f"predecessors bb{fwd[0]} {sorted(entry)} and bb{p} {sorted(held_out[p])}"
                    )
        held_in[bid] = entry
        held = list(entry)
        for s in block.statements:
            if s.is_acquire:
                _acquire(fn, held, s.dest, s.loc)
        term = block.terminator
        if isinstance(term, LockAcquire):
            _acquire(fn, held, term.dest, term.loc)
        elif isinstance(term, Drop) and term.place in guards:
            if term.place not in held:
                raise AnalysisError(
                    f"{fn.name}: guard {term.place!r} dropped twice on a path (bb{bid}, line {term.loc.line})"
                )
            held.remove(term.place)
        held_out[bid] = tuple(held)
    return HeldGuards(held_in, held_out, frozenset(back), cleanup_blocks(fn))


def _acquire(fn: Function, held: list[str], guard: str, loc: Loc) -> None:
    if guard in held:
        raise AnalysisError(
            f"{fn.name}: guard {guard!r} re-acquired while still held (line {loc.line})"
        )
    held.append(guard)


def held_guards(fn: Function) -> HeldGuards:
    """Held-guard analysis that also demands every release be explicit."""
    info = analyze_held(fn)
    for u, v in info.back_edges:
        if set(info.held_out[u]) != set(info.held_in[v]):
            raise AnalysisError(
                f"{fn.name}: guards {sorted(set(info.held_out[u]) ^ set(info.held_in[v]))} "
                f"differ across loop edge bb{u} -> bb{v}"
            )
    for b in fn.blocks:
        if isinstance(b.terminator, Return) and b.id not in info.cleanup and info.held_out[b.id]:
            raise AnalysisError(
                f"{fn.name}: guards {list(info.held_out[b.id])} still held at return in bb{b.id}"
            )
    return info


# -- implicit release ---------------------------------------------------------


def _insert_drops(fn: Function) -> Function:
    info = analyze_held(fn)
    blocks = list(fn.blocks)
    # edge redirections: (source block, old target) -> new target
    redirect: dict[tuple[int, int], int] = {}

    def chain(guards: tuple[str, ...], dest: int, loc: Loc) -> int:
        first = len(blocks)
        order = list(reversed(guards))
        for k, g in enumerate(order):
            bid = first + k
            nxt = bid + 1 if k + 1 < len(order) else dest
            blocks.append(BasicBlock(bid, (), Drop(g, nxt, loc), loc))
        return first

    for u, v in sorted(info.back_edges):
        if u in info.cleanup:
            continue
        term = fn.blocks[u].terminator
        if v not in term.successors():
            continue  # unwind back-edge: guards leak on panic
        out, into = info.held_out[u], info.held_in[v]
        missing = set(into) - set(out)
        if missing:
            raise AnalysisError(
                f"{fn.name}: loop edge bb{u} -> bb{v} expects guards {sorted(missing)} to be held"
            )
        extra = tuple(g for g in out if g not in into)
        if extra:
            redirect[(u, v)] = chain(extra, v, term.loc)

    preds = fn.predecessors(include_unwind=False)
    for b in fn.blocks:
        if not isinstance(b.terminator, Return) or b.id in info.cleanup:
            continue
        held = info.held_in.get(b.id, ())
        if not held:
            continue
        head = chain(held, b.id, b.terminator.loc)
        for p in preds[b.id]:
            if p in info.held_out:
                redirect[(p, b.id)] = head

    if not redirect:
        return fn
    for (u, v), new in redirect.items():
        term = blocks[u].terminator
        if isinstance(term, Call):
            # only the normal edge is redirected; unwinding keeps its locks
            term = dataclasses.replace(term, target=new)
        else:
            mapping = {s: s for s in term.successors()}
            mapping[v] = new
            term = term.remap(mapping)
        blocks[u] = dataclasses.replace(blocks[u], terminator=term)
    return dataclasses.replace(fn, blocks=tuple(blocks))


def auto_insert_drops(prog: Program) -> Program:
    """Insert the releases that RAII performs implicitly.

    For every path on which a guard is still held when the function
    returns, ``drop`` blocks are placed right before the ``return``, newest
    guard first.  Guards still held on a loop back-edge are released on that
    edge, so each iteration performs at most one acquisition per site.
    Unwind paths are left alone: a panicking thread keeps its locks.
    """
    return _map_functions(prog, _insert_drops)


def prepare(prog: Program, include_unwind: bool = False) -> tuple[Program, list[str]]:
    """Full front-end normalization used by the driver and the oracle."""
    if not include_unwind:
        prog = strip_unwind(prog)
    prog, warnings = prune_unreachable(prog)
    prog = normalize_blocks(prog)
    prog = auto_insert_drops(prog)
    for fn in prog.functions.values():
        held_guards(fn)
    return prog, warnings


__all__ = [
    "HeldGuards",
    "analyze_held",
    "auto_insert_drops",
    "cleanup_blocks",
    "held_guards",
    "normalize_blocks",
    "prepare",
    "prune_unreachable",
    "reachable_blocks",
    "strip_unwind",
]

