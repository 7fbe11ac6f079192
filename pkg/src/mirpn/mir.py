"""In-memory form of mini-MIR programs.

Every node is a frozen dataclass.  Source locations are carried on
statements, terminators, blocks and functions but are excluded from
equality, so two programs that differ only in layout compare equal.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Mapping, Union


@dataclass(frozen=True)
class Loc:
    line: int = 0
    col: int = 0
    file: str | None = None

    def __str__(self) -> str:
        prefix = f"{self.file}:" if self.file else ""
        return f"{prefix}{self.line}:{self.col}"


NOLOC = Loc()


def _loc() -> Loc:
    return field(default=NOLOC, compare=False, repr=False)


class LockKind(Enum):
    MUTEX = "mutex"
    RWLOCK = "rwlock"


class AcquireMode(Enum):
    LOCK = "lock"
    READ = "read"
    WRITE = "write"

    @property
    def kind(self) -> LockKind:
        return LockKind.MUTEX if self is AcquireMode.LOCK else LockKind.RWLOCK


class LockKindFilter(Enum):
    MUTEX_ONLY = "mutex"
    RWLOCK_ONLY = "rwlock"
    ALL = "all"

    def accepts(self, kind: LockKind) -> bool:
        if self is LockKindFilter.ALL:
            return True
        if self is LockKindFilter.MUTEX_ONLY:
            return kind is LockKind.MUTEX
        return kind is LockKind.RWLOCK


@dataclass(frozen=True)
class LockDecl:
    name: str
    kind: LockKind
    loc: Loc = _loc()


@dataclass(frozen=True)
class Operand:
    """``copy(x)``, ``move(x)`` or ``const lit``."""

    kind: str
    value: str

    @property
    def place(self) -> str | None:
        return None if self.kind == "const" else self.value


class RvalueKind(Enum):
    COPY = "copy"
    MOVE = "move"
    REF = "ref"
    USE = "use"
    REPEAT = "repeat"
    CONST = "const"
    ACQUIRE = "acquire"


@dataclass(frozen=True)
class Rvalue:
    kind: RvalueKind
    place: str | None = None
    operand: Operand | None = None
    literal: str | None = None
    mode: AcquireMode | None = None

    def value_sources(self) -> tuple[str, ...]:
        """Places whose (lock) value may flow into the destination."""
        if self.kind in (RvalueKind.COPY, RvalueKind.MOVE, RvalueKind.REF):
            return (self.place,)
        if self.kind is RvalueKind.USE and self.operand.place is not None:
            return (self.operand.place,)
        # Repeat is accepted by the grammar but carries no lock value.
        return ()

    def used_places(self) -> tuple[str, ...]:
        if self.kind in (RvalueKind.COPY, RvalueKind.MOVE, RvalueKind.REF):
            return (self.place,)
        if self.operand is not None and self.operand.place is not None:
            return (self.operand.place,)
        return ()


@dataclass(frozen=True)
class Statement:
    dest: str
    rvalue: Rvalue
    loc: Loc = _loc()

    @property
    def is_acquire(self) -> bool:
        return self.rvalue.kind is RvalueKind.ACQUIRE


# -- terminators ------------------------------------------------------------


@dataclass(frozen=True)
class Goto:
    target: int
    loc: Loc = _loc()

    def successors(self) -> tuple[int, ...]:
        return (self.target,)

    def remap(self, m: Mapping[int, int]) -> "Goto":
        return dataclasses.replace(self, target=m[self.target])


@dataclass(frozen=True)
class SwitchInt:
    scrutinee: Operand
    targets: tuple[int, ...]
    otherwise: int
    loc: Loc = _loc()

    def successors(self) -> tuple[int, ...]:
        return self.targets + (self.otherwise,)

    def remap(self, m: Mapping[int, int]) -> "SwitchInt":
        return dataclasses.replace(
            self, targets=tuple(m[t] for t in self.targets), otherwise=m[self.otherwise]
        )


@dataclass(frozen=True)
class Call:
    callee: str
    args: tuple[Operand, ...]
    target: int
    unwind: int | None = None
    dest: str | None = None
    loc: Loc = _loc()

    def successors(self) -> tuple[int, ...]:
        return (self.target,)

    def remap(self, m: Mapping[int, int]) -> "Call":
        unwind = None if self.unwind is None else m[self.unwind]
        return dataclasses.replace(self, target=m[self.target], unwind=unwind)


@dataclass(frozen=True)
class LockAcquire:
    dest: str
    operand: Operand
    mode: AcquireMode
    target: int
    loc: Loc = _loc()

    def successors(self) -> tuple[int, ...]:
        return (self.target,)

    def remap(self, m: Mapping[int, int]) -> "LockAcquire":
        return dataclasses.replace(self, target=m[self.target])


@dataclass(frozen=True)
class Drop:
    place: str
    target: int
    loc: Loc = _loc()

    def successors(self) -> tuple[int, ...]:
        return (self.target,)

    def remap(self, m: Mapping[int, int]) -> "Drop":
        return dataclasses.replace(self, target=m[self.target])


@dataclass(frozen=True)
class Spawn:
    dest: str
    callee: str
    args: tuple[Operand, ...]
    target: int
    loc: Loc = _loc()

    def successors(self) -> tuple[int, ...]:
        return (self.target,)

    def remap(self, m: Mapping[int, int]) -> "Spawn":
        return dataclasses.replace(self, target=m[self.target])


@dataclass(frozen=True)
class Join:
    handle: str
    target: int
    loc: Loc = _loc()

    def successors(self) -> tuple[int, ...]:
        return (self.target,)

    def remap(self, m: Mapping[int, int]) -> "Join":
        return dataclasses.replace(self, target=m[self.target])


@dataclass(frozen=True)
class Return:
    loc: Loc = _loc()

    def successors(self) -> tuple[int, ...]:
        return ()

    def remap(self, m: Mapping[int, int]) -> "Return":
        return self


Terminator = Union[Goto, SwitchInt, Call, LockAcquire, Drop, Spawn, Join, Return]


def terminator_dest(term: Terminator) -> str | None:
    if isinstance(term, (LockAcquire, Spawn)):
        return term.dest
    if isinstance(term, Call):
        return term.dest
    return None


def all_successors(term: Terminator) -> tuple[int, ...]:
    """Normal successors followed by the unwind successor, if any."""
    if isinstance(term, Call) and term.unwind is not None:
        return term.successors() + (term.unwind,)
    return term.successors()


@dataclass(frozen=True)
class BasicBlock:
    id: int
    statements: tuple[Statement, ...]
    terminator: Terminator
    loc: Loc = _loc()

    def acquisitions(self) -> int:
        n = sum(1 for s in self.statements if s.is_acquire)
        return n + isinstance(self.terminator, LockAcquire)


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[str, ...]
    blocks: tuple[BasicBlock, ...]
    loc: Loc = _loc()

    @property
    def locals(self) -> frozenset[str]:
        names = set(self.params)
        for block in self.blocks:
            names.update(s.dest for s in block.statements)
            dest = terminator_dest(block.terminator)
            if dest is not None:
                names.add(dest)
        return frozenset(names)

    def block(self, bid: int) -> BasicBlock:
        return self.blocks[bid]

    def guards(self) -> frozenset[str]:
        return frozenset(
            b.terminator.dest for b in self.blocks if isinstance(b.terminator, LockAcquire)
        ) | frozenset(s.dest for b in self.blocks for s in b.statements if s.is_acquire)

    def handles(self) -> dict[str, int]:
        """Map each thread handle to the block of the spawn that produces it."""
        return {
            b.terminator.dest: b.id for b in self.blocks if isinstance(b.terminator, Spawn)
        }

    def predecessors(self, include_unwind: bool = True) -> dict[int, list[int]]:
        preds: dict[int, list[int]] = {b.id: [] for b in self.blocks}
        for b in self.blocks:
            succs = all_successors(b.terminator) if include_unwind else b.terminator.successors()
            for s in succs:
                if b.id not in preds[s]:
                    preds[s].append(b.id)
        return preds


@dataclass(frozen=True)
class Program:
    lock_decls: tuple[LockDecl, ...]
    functions: dict[str, Function]
    entry: str = "main"

    def lock(self, name: str) -> LockDecl | None:
        for decl in self.lock_decls:
            if decl.name == name:
                return decl
        return None

    @property
    def lock_names(self) -> frozenset[str]:
        return frozenset(d.name for d in self.lock_decls)

    def iter_blocks(self) -> Iterator[tuple[Function, BasicBlock]]:
        for name in sorted(self.functions):
            fn = self.functions[name]
            for block in fn.blocks:
                yield fn, block

    def with_functions(self, functions: dict[str, Function]) -> "Program":
        return dataclasses.replace(self, functions=functions)
