"""Seeded generator of small, valid mini-MIR programs for differential tests.

Programs are built from a structured body language (sequences, two-way
branches, loops) and lowered to blocks, so every block can reach ``return``
and held-guard sets agree wherever control flow merges:

* guards taken inside a branch arm are dropped before the arm ends;
* guards taken in a loop body may stay held and are released on the
  back-edge by the implicit-drop pass;
* guards still held at the end of a function are released before return.

Only ``main`` spawns threads, never inside a branch or loop.  Function
parameters are each bound to one lock for the whole program, so alias
classes never merge distinct locks and the net and the oracle see the same
lock identities.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field


@dataclass(frozen=True)
class GenConfig:
    max_threads: int = 3  # including main
    max_locks: int = 3
    max_blocks: int = 8  # per function, before normalization
    max_helpers: int = 2
    rwlock_prob: float = 0.4
    branch_prob: float = 0.2
    loop_prob: float = 0.1
    sugar_prob: float = 0.2
    unwind_prob: float = 0.0


@dataclass
class _Fn:
    name: str
    params: dict[str, str] = field(default_factory=dict)  # param -> bound lock
    callees: list[str] = field(default_factory=list)


class _Lowerer:
    """Turns structured ops into numbered blocks of source text."""

    def __init__(self) -> None:
        self.blocks: list[list[str]] = []

    def new(self) -> int:
        self.blocks.append([])
        return len(self.blocks) - 1

    def add(self, b: int, line: str) -> None:
        self.blocks[b].append(line)

    def render(self, header: str) -> str:
        out = [header]
        for i, lines in enumerate(self.blocks):
            out.append(f"  bb{i}: {{ " + " ".join(lines) + " }")
        out.append("}")
        return "\n".join(out)


class _FnGen:
    def __init__(self, rng: random.Random, prog: "_ProgGen", fn: _Fn):
        self.rng = rng
        self.prog = prog
        self.fn = fn
        self.guards = 0
        self.tmp = 0

    def fresh(self, prefix: str) -> str:
        self.tmp += 1
        return f"{prefix}{self.tmp}"

    # -- structured body -----------------------------------------------------

    def lock_operand(self, lock: str) -> str:
        bound = [p for p, l in self.fn.params.items() if l == lock]
        if bound and self.rng.random() < 0.7:
            return f"copy({self.rng.choice(bound)})"
        return f"copy(ref_{lock})" if self.rng.random() < 0.5 else lock

    def acquire_op(self) -> tuple:
        lock = self.rng.choice(self.prog.locks)
        if self.prog.kinds[lock] == "mutex":
            mode = "lock"
        else:
            mode = self.rng.choice(["read", "read", "write"])
        self.guards += 1
        return ("acq", f"g{self.guards}", mode, self.lock_operand(lock))

    def seq(self, depth: int, cost_cap: int, balanced: bool) -> tuple[list[tuple], int]:
        """Ops plus their block cost; with ``balanced`` every guard is dropped."""
        ops: list[tuple] = []
        held: list[str] = []
        cost = 0
        n = self.rng.randint(1, 4)
        for _ in range(n):
            if cost >= cost_cap:
                break
            roll = self.rng.random()
            room = cost_cap - cost
            if roll < self.prog.cfg.branch_prob and depth < 2 and room >= 4:
                a, ca = self.seq(depth + 1, (room - 2) // 2, True)
                b, cb = self.seq(depth + 1, (room - 2) // 2, True)
                ops.append(("if", a, b))
                cost += 2 + ca + cb
            elif roll < self.prog.cfg.branch_prob + self.prog.cfg.loop_prob and depth < 1 and room >= 4:
                body, cbody = self.seq(depth + 1, room - 2, False)
                ops.append(("loop", body))
                cost += 2 + cbody
            elif roll < 0.6:
                op = self.acquire_op()
                ops.append(op)
                held.append(op[1])
                cost += 1
            elif roll < 0.75 and held:
                g = held.pop(self.rng.randrange(len(held)))
                ops.append(("drop", g))
                cost += 1
            elif roll < 0.9 and self.fn.callees:
                callee = self.rng.choice(self.fn.callees)
                unwind = self.rng.random() < self.prog.cfg.unwind_prob
                ops.append(("call", callee, unwind))
                cost += 2 if unwind else 1
            else:
                ops.append(("noise",))
        if balanced:
            for g in reversed(held):
                ops.append(("drop", g))
                cost += 1
        return ops, cost

    # -- lowering -------------------------------------------------------------

    def lower(self, low: _Lowerer, ops: list[tuple], cur: int) -> int:
        for op in ops:
            kind = op[0]
            if kind == "acq":
                _, g, mode, operand = op
                if self.rng.random() < self.prog.cfg.sugar_prob:
                    low.add(cur, f"{g} = {mode}({operand});")
                    continue
                nxt = low.new()
                low.add(cur, f"{g} = {mode}({operand}) -> bb{nxt};")
                cur = nxt
            elif kind == "drop":
                nxt = low.new()
                low.add(cur, f"drop({op[1]}) -> bb{nxt};")
                cur = nxt
            elif kind == "call":
                _, callee, unwind = op
                args = ", ".join(f"copy(ref_{self.prog.fns[callee].params[p]})" for p in self.prog.fns[callee].params)
                nxt = low.new()
                if unwind:
                    cleanup = low.new()
                    low.add(cleanup, "return;")
                    low.add(cur, f"call {callee}({args}) -> [return: bb{nxt}, unwind: bb{cleanup}];")
                else:
                    low.add(cur, f"call {callee}({args}) -> bb{nxt};")
                cur = nxt
            elif kind == "spawn":
                _, h, callee = op
                args = "".join(f", copy(ref_{self.prog.fns[callee].params[p]})" for p in self.prog.fns[callee].params)
                nxt = low.new()
                low.add(cur, f"{h} = spawn({callee}{args}) -> bb{nxt};")
                cur = nxt
            elif kind == "join":
                nxt = low.new()
                low.add(cur, f"join({op[1]}) -> bb{nxt};")
                cur = nxt
            elif kind == "if":
                c = self.fresh("c")
                a, b = low.new(), low.new()
                low.add(cur, f"{c} = const {self.rng.randint(0, 9)}; switchInt(copy({c})) -> [bb{a}, otherwise: bb{b}];")
                end_a = self.lower(low, op[1], a)
                end_b = self.lower(low, op[2], b)
                join = low.new()
                low.add(end_a, f"goto -> bb{join};")
                low.add(end_b, f"goto -> bb{join};")
                cur = join
            elif kind == "loop":
                head = low.new()
                low.add(cur, f"goto -> bb{head};")
                body, exit_ = low.new(), low.new()
                c = self.fresh("n")
                low.add(head, f"{c} = const 2; switchInt(copy({c})) -> [bb{body}, otherwise: bb{exit_}];")
                end = self.lower(low, op[1], body)
                low.add(end, f"goto -> bb{head};")
                cur = exit_
            elif kind == "noise":
                v = self.fresh("v")
                low.add(cur, f"{v} = const {self.rng.randint(0, 99)};")
        return cur

    def render(self, ops: list[tuple]) -> str:
        low = _Lowerer()
        entry = low.new()
        for lock in self.prog.locks:
            low.add(entry, f"ref_{lock} = &{lock};")
        end = self.lower(low, ops, entry)
        low.add(end, "return;")
        self.prog.widest = max(self.prog.widest, len(low.blocks))
        return low.render(f"fn {self.fn.name}({', '.join(self.fn.params)}) {{")


class _ProgGen:
    def __init__(self, rng: random.Random, cfg: GenConfig):
        self.rng = rng
        self.cfg = cfg
        n_locks = rng.randint(1, cfg.max_locks)
        self.locks = [f"l{i}" for i in range(n_locks)]
        self.kinds = {l: ("rwlock" if rng.random() < cfg.rwlock_prob else "mutex") for l in self.locks}
        self.fns: dict[str, _Fn] = {}
        self.widest = 0  # most blocks in any generated function

    def make_fn(self, name: str, callees: list[str]) -> _Fn:
        params = {f"p{i}": self.rng.choice(self.locks) for i in range(self.rng.randint(0, 2))}
        fn = _Fn(name, params, callees)
        self.fns[name] = fn
        return fn

    def generate(self) -> str:
        rng, cfg = self.rng, self.cfg
        n_helpers = rng.randint(0, cfg.max_helpers)
        helpers = [f"h{i}" for i in range(n_helpers)]
        # helper i may only call later helpers, so calls stay acyclic
        for i in reversed(range(n_helpers)):
            self.make_fn(helpers[i], helpers[i + 1 :])
        n_threads = rng.randint(0, cfg.max_threads - 1)
        workers = [self.make_fn(f"w{i}", helpers) for i in range(n_threads)]
        main = _Fn("main", {}, helpers)
        self.fns["main"] = main

        parts = ["\n".join(f"{self.kinds[l]} {l};" for l in self.locks)]
        bodies = {}
        for fn in list(self.fns.values()):
            if fn.name == "main":
                continue
            g = _FnGen(rng, self, fn)
            ops, _ = g.seq(0, cfg.max_blocks - 2, False)
            bodies[fn.name] = g.render(ops)

        g = _FnGen(rng, self, main)
        spawn_cost = 2 * len(workers)
        ops, _ = g.seq(0, max(1, cfg.max_blocks - 2 - spawn_cost), False)
        cut = rng.randint(0, len(ops))
        spawns = [("spawn", f"t{i}", w.name) for i, w in enumerate(workers)]
        body = ops[:cut] + spawns
        rest = ops[cut:]
        # joins go at top level somewhere after the spawns, possibly never
        for i in range(len(workers)):
            if rng.random() < 0.8:
                rest.insert(rng.randint(0, len(rest)), ("join", f"t{i}"))
        bodies["main"] = g.render(body + rest)

        parts.append(bodies["main"])
        parts.extend(bodies[name] for name in sorted(bodies) if name != "main")
        return "\n\n".join(parts) + "\n"


def random_program(seed: int, cfg: GenConfig = GenConfig()) -> str:
    """Source text of a pseudo-random valid program, fully determined by ``seed``.

    Drafts with a function longer than ``cfg.max_blocks`` are discarded and
    redrawn from a derived seed.
    """
    for attempt in range(1000):
        gen = _ProgGen(random.Random(f"{seed}/{attempt}"), cfg)
        text = gen.generate()
        if gen.widest <= cfg.max_blocks:
            return text
    raise ValueError(f"no program within {cfg.max_blocks} blocks per function for seed {seed}")
