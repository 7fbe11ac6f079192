"""Brute-force interleaving executor used as ground truth for the net.

The oracle runs a prepared program directly: every thread carries a call
stack whose frames hold real lock references, and a depth-first search
enumerates every scheduler choice and every ``switchInt`` arm.  It knows
nothing about nets; only the front end is shared.

Semantics in brief:

* A mutex admits one holder.  Re-locking a held mutex blocks forever.
* An rwlock admits up to ``capacity`` readers or one writer.  With
  ``priority=True`` a writer first claims the lock's writer slot (blocking
  new readers) and then waits for the readers to leave.
* Functions that never reach an acquisition are skipped, and with unwind
  edges present, a skipped call may either return or panic.
* ``join`` waits for a finished thread spawned at the handle's site; threads
  spawned at the same site in the same context are interchangeable.

A state is stuck when no thread can move while ``main`` has not finished.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from .mir import (
    AcquireMode,
    Call,
    Drop,
    Function,
    Goto,
    Join,
    LockAcquire,
    LockKindFilter,
    Program,
    Return,
    Spawn,
    SwitchInt,
)
from .normalize import cleanup_blocks, prepare

DEFAULT_BOUND = 100_000

RUN, DONE, PANICKED = "run", "done", "panicked"


class Verdict(Enum):
    DEADLOCK_FOUND = "DeadlockFound"
    CLEAN = "Clean"
    BOUND_HIT = "BoundHit"


@dataclass(frozen=True)
class StuckSchedule:
    steps: tuple[str, ...]
    blocked: tuple[str, ...]


@dataclass(frozen=True)
class OracleResult:
    verdict: Verdict
    stuck: tuple[StuckSchedule, ...]
    states: int

    @property
    def deadlock(self) -> bool:
        return self.verdict is Verdict.DEADLOCK_FOUND

    @property
    def stuck_count(self) -> int:
        return len(self.stuck)


# A frame is (function, block, pending-write lock or "", env, guards, ctx):
#   env    sorted ((local, value), ...) with value ("l", lock) or ("h", origin)
#   guards ((guard, lock, mode), ...) in acquisition order
#   ctx    call/spawn path identifying the function instance
# A thread is (origin, status, frames); a state is (threads, locks), both
# sorted so that interchangeable threads collapse.


def _relevant(p: Program, kinds: LockKindFilter) -> set[str]:
    rel = {
        fn.name
        for fn, b in p.iter_blocks()
        if isinstance(b.terminator, LockAcquire) and kinds.accepts(b.terminator.mode.kind)
    }
    grew = True
    while grew:
        grew = False
        for fn, b in p.iter_blocks():
            t = b.terminator
            if isinstance(t, (Call, Spawn)) and t.callee in rel and fn.name not in rel:
                rel.add(fn.name)
                grew = True
    return rel


class _Machine:
    def __init__(self, p: Program, priority: bool, capacity, kinds: LockKindFilter):
        self.p = p
        self.priority = priority
        self.capacity = capacity
        self.kinds = kinds
        self.lock_kind = {d.name: d.kind for d in p.lock_decls}
        self.relevant = _relevant(p, kinds)
        self.cleanup = {name: cleanup_blocks(fn) for name, fn in p.functions.items()}

    # -- helpers ------------------------------------------------------------

    def cap(self, lock: str) -> int | None:
        if self.capacity is None or isinstance(self.capacity, int):
            return self.capacity
        return self.capacity.get(lock)

    def fn(self, name: str) -> Function:
        return self.p.functions[name]

    def value(self, env: dict, place: str | None):
        if place is None:
            return None
        if place in self.lock_kind:
            return ("l", place)
        return env.get(place)

    def run_statements(self, fname: str, block: int, env: dict) -> None:
        for s in self.fn(fname).blocks[block].statements:
            srcs = s.rvalue.value_sources()
            val = self.value(env, srcs[0]) if srcs else None
            if val is None:
                env.pop(s.dest, None)
            else:
                env[s.dest] = val

    def bind(self, callee: str, args, env: dict) -> dict:
        out = {}
        for param, arg in zip(self.fn(callee).params, args):
            val = self.value(env, arg.place)
            if val is not None:
                out[param] = val
        return out

    @staticmethod
    def thread_name(thread) -> str:
        origin, _status, frames = thread
        if not origin:
            return "main"
        _kind, fn, block = origin[-1]
        root = frames[0][0] if frames else "?"
        return f"{root}@{fn}:bb{block}"

    # -- transitions ----------------------------------------------------------

    def moves(self, state) -> list[tuple[str, tuple]]:
        threads, locks = state
        out = []
        for i, th in enumerate(threads):
            if th[1] != RUN:
                continue
            for action, new_threads, new_locks in self.thread_moves(i, threads, dict(locks)):
                label = f"{self.thread_name(th)}: {action}"
                # free locks are left out so that released and untouched look alike
                busy = tuple(sorted((k, v) for k, v in new_locks.items() if any(v)))
                out.append((label, (tuple(sorted(new_threads)), busy)))
        return out

    def blocked_on(self, th, locks: dict) -> str:
        fname, block, pending, env, _g, _ctx = th[2][-1]
        t = self.fn(fname).blocks[block].terminator
        where = f"{self.thread_name(th)} at {fname} bb{block}"
        if isinstance(t, LockAcquire):
            e = dict(env)
            self.run_statements(fname, block, e)
            return f"{where} waiting on {pending or self.lock_of(fname, block, t, e)}"
        if isinstance(t, Join):
            return f"{where} waiting to join {t.handle}"
        return where

    def lock_of(self, fname: str, block: int, t: LockAcquire, env: dict) -> str:
        val = self.value(env, t.operand.value)
        if val is not None and val[0] == "l":
            return val[1]
        return f"{fname}:bb{block}::{t.operand.value}"

    def thread_moves(self, i: int, threads: tuple, locks: dict):
        origin, _status, frames = threads[i]
        fname, block, pending, env_t, guards, ctx = frames[-1]
        fn = self.fn(fname)
        t = fn.blocks[block].terminator
        env = dict(env_t)
        if not pending:
            self.run_statements(fname, block, env)
        env_s = tuple(sorted(env.items()))

        def goto(target: int, env_tuple=env_s, guards_=guards, locks_=locks, pending_=""):
            nf = frames[:-1] + ((fname, target, pending_, env_tuple, guards_, ctx),)
            nt = threads[:i] + ((origin, RUN, nf),) + threads[i + 1 :]
            return nt, locks_

        if isinstance(t, Goto):
            yield ("goto", *goto(t.target))
        elif isinstance(t, SwitchInt):
            for tgt in dict.fromkeys(t.successors()):
                yield (f"branch bb{tgt}", *goto(tgt))
        elif isinstance(t, Return):
            if block in self.cleanup[fname]:
                yield ("return (unwinding)", *self.unwind(i, threads, locks))
            else:
                yield ("return", *self.leave(i, threads, locks))
        elif isinstance(t, Call):
            if t.callee not in self.relevant:
                yield (f"call {t.callee}", *goto(t.target))
                if t.unwind is not None:
                    yield (f"panic in {t.callee}", *goto(t.unwind))
            else:
                callee_env = tuple(sorted(self.bind(t.callee, t.args, env).items()))
                here = frames[:-1] + ((fname, block, "", env_s, guards, ctx),)
                sub_ctx = ctx + (("call", fname, block),)
                nf = here + ((t.callee, 0, "", callee_env, (), sub_ctx),)
                nt = threads[:i] + ((origin, RUN, nf),) + threads[i + 1 :]
                yield (f"call {t.callee}", nt, locks)
        elif isinstance(t, Spawn):
            env.pop(t.dest, None)
            if t.callee not in self.relevant:
                env[t.dest] = ("x",)
                yield (f"spawn {t.callee} (skipped)", *goto(t.target, tuple(sorted(env.items()))))
            else:
                child = ctx + (("spawn", fname, block),)
                child_env = tuple(sorted(self.bind(t.callee, t.args, env).items()))
                env[t.dest] = ("h", child)
                nt, _ = goto(t.target, tuple(sorted(env.items())))
                nt = nt + ((child, RUN, ((t.callee, 0, "", child_env, (), child),)),)
                yield (f"spawn {t.callee}", nt, locks)
        elif isinstance(t, Join):
            handle = env.get(t.handle)
            if handle is None or handle[0] != "h":
                yield (f"join {t.handle} (skipped)", *goto(t.target))
                return
            for j, other in enumerate(threads):
                if j != i and other[0] == handle[1] and other[1] != RUN:
                    nt, _ = goto(t.target)
                    nt = nt[:j] + nt[j + 1 :]
                    yield (f"join {self.thread_name(other)}", nt, locks)
                    return  # finished threads of one site are interchangeable
        elif isinstance(t, Drop):
            held = [g for g in guards if g[0] == t.place]
            if not held:
                yield (f"drop {t.place}", *goto(t.target))
                return
            _g, lock, mode = held[0]
            rest = tuple(g for g in guards if g[0] != t.place)
            nl = dict(locks)
            nl[lock] = self.release(lock, mode, nl[lock])
            yield (f"release {lock} [{mode}]", *goto(t.target, env_s, rest, nl))
        elif isinstance(t, LockAcquire):
            if not self.kinds.accepts(t.mode.kind):
                yield (f"{t.mode.value} {t.operand.value} (not modelled)", *goto(t.target))
                return
            lock = pending or self.lock_of(fname, block, t, env)
            state = locks.get(lock, self.free_state(t.mode))
            res = self.acquire(lock, t.mode, state, bool(pending))
            if res is None:
                return
            new_state, done = res
            nl = dict(locks)
            nl[lock] = new_state
            tag = "mutex" if t.mode is AcquireMode.LOCK else t.mode.value
            if not done:
                yield (f"request {lock} [write]", *goto(block, env_s, guards, nl, lock))
                return
            ng = guards + ((t.dest, lock, tag),)
            yield (f"acquire {lock} [{tag}]", *goto(t.target, env_s, ng, nl))

    def leave(self, i: int, threads: tuple, locks: dict):
        origin, _status, frames = threads[i]
        rest = frames[:-1]
        if not rest:
            return threads[:i] + ((origin, DONE, ()),) + threads[i + 1 :], locks
        cf, cb, _p, cenv, cg, cctx = rest[-1]
        call = self.fn(cf).blocks[cb].terminator
        nf = rest[:-1] + ((cf, call.target, "", cenv, cg, cctx),)
        return threads[:i] + ((origin, RUN, nf),) + threads[i + 1 :], locks

    def unwind(self, i: int, threads: tuple, locks: dict):
        # guards held by unwound frames are never released
        origin, _status, frames = threads[i]
        rest = frames[:-1]
        while rest:
            cf, cb, _p, cenv, cg, cctx = rest[-1]
            call = self.fn(cf).blocks[cb].terminator
            if call.unwind is not None:
                nf = rest[:-1] + ((cf, call.unwind, "", cenv, cg, cctx),)
                return threads[:i] + ((origin, RUN, nf),) + threads[i + 1 :], locks
            rest = rest[:-1]
        status = DONE if not origin else PANICKED
        return threads[:i] + ((origin, status, ()),) + threads[i + 1 :], locks

    # -- lock states --------------------------------------------------------
    # mutex: (held,); rwlock: (readers, writer, writer_slot)

    @staticmethod
    def free_state(mode: AcquireMode) -> tuple:
        return (0,) if mode is AcquireMode.LOCK else (0, 0, 0)

    def acquire(self, lock: str, mode: AcquireMode, st: tuple, pending: bool):
        """New lock state and whether the guard is now held, or None if blocked."""
        if mode is AcquireMode.LOCK:
            return None if st[0] else ((1,), True)
        readers, writer, slot = st
        if mode is AcquireMode.READ:
            cap = self.cap(lock)
            if writer or (self.priority and slot) or (cap is not None and readers >= cap):
                return None
            return (readers + 1, writer, slot), True
        if self.priority and not pending:
            return (None if slot else ((readers, writer, 1), False))
        if readers or writer:
            return None
        return (0, 1, slot), True

    def release(self, lock: str, mode: str, st: tuple) -> tuple:
        if len(st) == 1:
            return (0,)
        readers, writer, slot = st
        if mode == "read":
            return (readers - 1, writer, slot)
        return (readers, 0, 0)

    # -- search -------------------------------------------------------------

    def project(self, state) -> tuple:
        threads, locks = state
        pos = tuple(
            sorted(
                (th[0], th[1], tuple((f[0], f[1], f[2], f[5]) for f in th[2][-1:]))
                for th in threads
            )
        )
        return pos, locks

    def initial(self):
        main = ((), RUN, ((self.p.entry, 0, "", (), (), ()),))
        return ((main,), ())

    def search(self, bound: int) -> OracleResult:
        root = self.initial()
        parent: dict = {root: None}
        stack = [root]
        stuck: dict[tuple, StuckSchedule] = {}
        hit = False
        while stack:
            s = stack.pop()
            nxt = self.moves(s)
            if not nxt:
                threads, locks = s
                main_done = any(not th[0] and th[1] == DONE for th in threads)
                key = self.project(s)
                if not main_done and key not in stuck:
                    ld = dict(locks)
                    blocked = tuple(self.blocked_on(th, ld) for th in threads if th[1] == RUN)
                    stuck[key] = StuckSchedule(self.schedule(parent, s), blocked)
                continue
            for label, ns in reversed(nxt):
                if ns in parent:
                    continue
                if len(parent) >= bound:
                    hit = True
                    break
                parent[ns] = (s, label)
                stack.append(ns)
            if hit:
                break
        schedules = tuple(stuck[k] for k in sorted(stuck, key=lambda k: (len(stuck[k].steps), stuck[k].steps)))
        if schedules:
            verdict = Verdict.DEADLOCK_FOUND
        elif hit:
            verdict = Verdict.BOUND_HIT
        else:
            verdict = Verdict.CLEAN
        return OracleResult(verdict, schedules, len(parent))

    @staticmethod
    def schedule(parent: dict, s) -> tuple[str, ...]:
        steps = []
        while parent[s] is not None:
            s, label = parent[s]
            steps.append(label)
        return tuple(reversed(steps))


def simulate_all(
    p: Program,
    bound: int = DEFAULT_BOUND,
    priority: bool = True,
    rw_capacity: int | Mapping[str, int] | None = None,
    kinds: LockKindFilter = LockKindFilter.ALL,
    include_unwind: bool = False,
    prepared: bool = False,
) -> OracleResult:
    """Enumerate every schedule of ``p`` and report the stuck ones.

    ``rw_capacity`` bounds concurrent readers per rwlock: one number for all
    locks, a per-lock mapping, or None for no bound.  ``priority`` selects
    writer-priority admission.  Unless ``prepared`` is set, ``p`` is run
    through the front-end normalization first.  A verdict of BoundHit means
    the search stopped after ``bound`` states without finding a stuck state.
    """
    if bound < 1:
        raise ValueError("bound must be at least 1")
    if not prepared:
        p, _ = prepare(p, include_unwind=include_unwind)
    return _Machine(p, priority, rw_capacity, kinds).search(bound)


__all__ = ["OracleResult", "StuckSchedule", "Verdict", "simulate_all", "DEFAULT_BOUND"]
