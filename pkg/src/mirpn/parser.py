"""Recursive-descent parser and validator for the textual mini-MIR language.

Example input::

    mutex m0;
    fn main() {
      bb0: { g0 = lock(m0) -> bb1; }
      bb1: { drop(g0) -> bb2; }
      bb2: { return; }
    }
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import ParseError
from .mir import (
    AcquireMode,
    BasicBlock,
    Call,
    Drop,
    Function,
    Goto,
    Join,
    LockAcquire,
    LockDecl,
    LockKind,
    Loc,
    Operand,
    Program,
    Return,
    Rvalue,
    RvalueKind,
    Spawn,
    Statement,
    SwitchInt,
    Terminator,
    all_successors,
)

KEYWORDS = frozenset(
    {
        "mutex", "rwlock", "fn", "goto", "switchInt", "call", "drop", "join",
        "return", "spawn", "lock", "read", "write", "copy", "move", "ref", "use",
        "repeat", "const", "otherwise", "unwind",
    }
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<arrow>->)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<number>-?[0-9][A-Za-z0-9_]*)
  | (?P<punct>[{}()\[\];:,=&])
    """,
    re.VERBOSE,
)

_BB_RE = re.compile(r"bb(0|[1-9][0-9]*)$")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str, file: str | None = None) -> list[Token]:
    tokens: list[Token] = []
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col, file)
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, chunk, line, col))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str, file: str | None):
        self.file = file
        self.toks = tokenize(text, file)
        self.i = 0

    # -- token helpers --------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def loc(self, tok: Token | None = None) -> Loc:
        tok = tok or self.tok
        return Loc(tok.line, tok.col, self.file)

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(msg, tok.line, tok.col, self.file)

    def advance(self) -> Token:
        tok = self.tok
        self.i += 1
        return tok

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind != "eof"

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def name(self, what: str = "identifier") -> str:
        tok = self.tok
        if tok.kind != "ident" or tok.text in KEYWORDS:
            raise self.error(f"expected {what}, found {tok.text or 'end of input'!r}")
        self.i += 1
        return tok.text

    def block_ref(self) -> tuple[int, Token]:
        tok = self.tok
        m = _BB_RE.match(tok.text) if tok.kind == "ident" else None
        if m is None:
            raise self.error(f"expected block label, found {tok.text or 'end of input'!r}")
        self.i += 1
        return int(m.group(1)), tok

    # -- grammar --------------------------------------------------------

    def parse_unit(self) -> tuple[list[LockDecl], list[tuple[Function, list]]]:
        decls: list[LockDecl] = []
        functions: list[tuple[Function, list]] = []
        while self.tok.kind != "eof":
            tok = self.tok
            if tok.text in ("mutex", "rwlock"):
                self.advance()
                name = self.name("lock name")
                self.expect(";")
                decls.append(LockDecl(name, LockKind(tok.text), self.loc(tok)))
            elif tok.text == "fn":
                functions.append(self.parse_function())
            else:
                raise self.error(f"unknown keyword {tok.text!r}")
        return decls, functions

    def parse_function(self) -> tuple[Function, list]:
        fn_tok = self.expect("fn")
        name = self.name("function name")
        self.expect("(")
        params: list[str] = []
        if not self.at(")"):
            params.append(self.name("parameter name"))
            while self.accept(","):
                params.append(self.name("parameter name"))
        self.expect(")")
        self.expect("{")
        blocks: list[BasicBlock] = []
        refs: list[tuple[int, Token]] = []
        seen: set[int] = set()
        while not self.at("}"):
            bid, label = self.block_ref()
            if bid in seen:
                raise self.error(f"duplicate block label bb{bid} in {name}", label)
            seen.add(bid)
            self.expect(":")
            self.expect("{")
            stmts: list[Statement] = []
            term: Terminator | None = None
            while term is None:
                if self.at("}"):
                    raise self.error(f"block bb{bid} has no terminator")
                item = self.parse_item(refs)
                if isinstance(item, Statement):
                    stmts.append(item)
                else:
                    term = item
            self.expect("}")
            blocks.append(BasicBlock(bid, tuple(stmts), term, self.loc(label)))
        self.expect("}")
        if len(params) != len(set(params)):
            raise self.error(f"duplicate parameter in {name}", fn_tok)
        blocks.sort(key=lambda b: b.id)
        if [b.id for b in blocks] != list(range(len(blocks))):
            raise self.error(f"block ids of {name} are not dense bb0..bb{len(blocks) - 1}", fn_tok)
        if not blocks:
            raise self.error(f"function {name} has no blocks", fn_tok)
        for bid, tok in refs:
            if bid >= len(blocks):
                raise self.error(f"dangling block reference bb{bid} in {name}", tok)
        return Function(name, tuple(params), tuple(blocks), self.loc(fn_tok)), refs

    def parse_operand(self) -> Operand:
        tok = self.tok
        if tok.text in ("copy", "move"):
            self.advance()
            if self.accept("("):
                place = self.name("place")
                self.expect(")")
            else:
                place = self.name("place")
            return Operand(tok.text, place)
        if tok.text == "const":
            self.advance()
            lit = self.advance()
            if lit.kind not in ("ident", "number"):
                raise self.error("expected constant literal", lit)
            return Operand("const", lit.text)
        if tok.kind == "number":
            self.advance()
            return Operand("const", tok.text)
        return Operand("copy", self.name("operand"))

    def parse_args(self) -> tuple[Operand, ...]:
        args: list[Operand] = []
        self.expect("(")
        if not self.at(")"):
            args.append(self.parse_operand())
            while self.accept(","):
                args.append(self.parse_operand())
        self.expect(")")
        return tuple(args)

    def target(self, refs: list) -> int:
        bid, tok = self.block_ref()
        refs.append((bid, tok))
        return bid

    def parse_item(self, refs: list) -> Statement | Terminator:
        tok = self.tok
        loc = self.loc(tok)
        text = tok.text
        if text == "return":
            self.advance()
            self.expect(";")
            return Return(loc)
        if text == "goto":
            self.advance()
            self.expect("->")
            t = self.target(refs)
            self.expect(";")
            return Goto(t, loc)
        if text == "switchInt":
            self.advance()
            self.expect("(")
            scrut = self.parse_operand()
            self.expect(")")
            self.expect("->")
            self.expect("[")
            targets: list[int] = []
            otherwise = None
            while True:
                if self.accept("otherwise"):
                    self.expect(":")
                    otherwise = self.target(refs)
                    break
                if self.tok.kind == "number" and self.peek().text == ":":
                    self.advance()
                    self.advance()
                targets.append(self.target(refs))
                if not self.accept(","):
                    break
            self.expect("]")
            self.expect(";")
            if otherwise is None:
                if len(targets) < 2:
                    raise self.error("switchInt needs at least two targets", tok)
                otherwise = targets.pop()
            return SwitchInt(scrut, tuple(targets), otherwise, loc)
        if text == "call":
            return self.parse_call(None, loc, refs)
        if text == "drop":
            self.advance()
            self.expect("(")
            place = self.name("place")
            self.expect(")")
            self.expect("->")
            t = self.target(refs)
            self.expect(";")
            return Drop(place, t, loc)
        if text == "join":
            self.advance()
            self.expect("(")
            handle = self.name("thread handle")
            self.expect(")")
            self.expect("->")
            t = self.target(refs)
            self.expect(";")
            return Join(handle, t, loc)
        if tok.kind != "ident" or text in KEYWORDS or self.peek().text != "=":
            if tok.kind == "ident" and self.peek().text != "=":
                raise self.error(f"unknown keyword {text!r}")
            raise self.error(f"unexpected {text or 'end of input'!r}")
        dest = self.advance().text
        self.expect("=")
        rhs = self.tok
        if rhs.text in ("lock", "read", "write"):
            self.advance()
            self.expect("(")
            operand = self.parse_operand()
            self.expect(")")
            mode = AcquireMode(rhs.text)
            if self.accept("->"):
                t = self.target(refs)
                self.expect(";")
                return LockAcquire(dest, operand, mode, t, loc)
            self.expect(";")
            return Statement(dest, Rvalue(RvalueKind.ACQUIRE, operand=operand, mode=mode), loc)
        if rhs.text == "spawn":
            self.advance()
            self.expect("(")
            callee = self.name("function name")
            args: list[Operand] = []
            while self.accept(","):
                args.append(self.parse_operand())
            self.expect(")")
            self.expect("->")
            t = self.target(refs)
            self.expect(";")
            return Spawn(dest, callee, tuple(args), t, loc)
        if rhs.text == "call":
            return self.parse_call(dest, loc, refs)
        rvalue = self.parse_rvalue()
        self.expect(";")
        return Statement(dest, rvalue, loc)

    def parse_call(self, dest: str | None, loc: Loc, refs: list) -> Call:
        self.expect("call")
        callee = self.name("function name")
        args = self.parse_args()
        self.expect("->")
        unwind = None
        if self.accept("["):
            self.expect("return")
            self.expect(":")
            target = self.target(refs)
            if self.accept(","):
                self.expect("unwind")
                self.expect(":")
                unwind = self.target(refs)
            self.expect("]")
        else:
            target = self.target(refs)
        self.expect(";")
        return Call(callee, args, target, unwind, dest, loc)

    def parse_rvalue(self) -> Rvalue:
        tok = self.tok
        if tok.text in ("copy", "move", "ref"):
            self.advance()
            if self.accept("("):
                place = self.name("place")
                self.expect(")")
            else:
                place = self.name("place")
            return Rvalue(RvalueKind(tok.text), place=place)
        if tok.text == "&":
            self.advance()
            return Rvalue(RvalueKind.REF, place=self.name("place"))
        if tok.text in ("use", "repeat"):
            self.advance()
            self.expect("(")
            op = self.parse_operand()
            self.expect(")")
            return Rvalue(RvalueKind(tok.text), operand=op)
        if tok.text == "const":
            self.advance()
            lit = self.advance()
            if lit.kind not in ("ident", "number"):
                raise self.error("expected constant literal", lit)
            return Rvalue(RvalueKind.CONST, literal=lit.text)
        if tok.kind == "number":
            self.advance()
            return Rvalue(RvalueKind.CONST, literal=tok.text)
        if tok.kind == "ident" and tok.text not in KEYWORDS:
            self.advance()
            return Rvalue(RvalueKind.USE, operand=Operand("copy", tok.text))
        raise self.error(f"unknown keyword {tok.text!r}" if tok.kind == "ident" else f"unexpected {tok.text!r}")


# -- validation ---------------------------------------------------------------


def _err(msg: str, loc: Loc) -> ParseError:
    return ParseError(msg, loc.line, loc.col, loc.file)


def _must_defined(fn: Function) -> list[frozenset[str] | None]:
    """Names definitely assigned on entry to each block (None = unreachable)."""
    n = len(fn.blocks)
    entry: list[frozenset[str] | None] = [None] * n
    entry[0] = frozenset(fn.params)
    changed = True
    while changed:
        changed = False
        for b in fn.blocks:
            if entry[b.id] is None:
                continue
            out = set(entry[b.id])
            out.update(s.dest for s in b.statements)
            term = b.terminator
            dest = getattr(term, "dest", None)
            if dest is not None:
                out.add(dest)
            for s in all_successors(term):
                if s == 0:
                    new = frozenset(fn.params)
                elif entry[s] is None:
                    new = frozenset(out)
                else:
                    new = entry[s] & out
                if new != entry[s]:
                    entry[s] = new
                    changed = True
    return entry


def _resolve_roots(fn: Function, locks: frozenset[str]) -> dict[str, set[str]]:
    """Flow-insensitive closure: which locks or parameters may each local hold."""
    roots: dict[str, set[str]] = {p: {p} for p in fn.params}
    edges: list[tuple[str, str]] = []
    for b in fn.blocks:
        for s in b.statements:
            for src in s.rvalue.value_sources():
                if src in locks:
                    roots.setdefault(s.dest, set()).add(src)
                else:
                    edges.append((src, s.dest))
    changed = True
    while changed:
        changed = False
        for src, dst in edges:
            extra = roots.get(src, set()) - roots.get(dst, set())
            if extra:
                roots.setdefault(dst, set()).update(extra)
                changed = True
    return roots


def _validate_function(fn: Function, prog: Program) -> None:
    locks = prog.lock_names
    funcs = prog.functions
    local_names = fn.locals
    for name in local_names:
        if name in locks:
            raise _err(f"local {name!r} in {fn.name} duplicates lock name", fn.loc)
        if name in funcs:
            raise _err(f"local {name!r} in {fn.name} duplicates function name", fn.loc)

    guards = fn.guards()
    spawn_sites: dict[str, int] = {}
    for b in fn.blocks:
        for s in b.statements:
            if s.dest in guards and not s.is_acquire:
                raise _err(f"guard {s.dest!r} reassigned by a statement", s.loc)
        term = b.terminator
        if isinstance(term, (Call, Spawn)):
            callee = funcs.get(term.callee)
            if callee is None:
                raise _err(f"call to undeclared function {term.callee!r}", term.loc)
            if len(term.args) != len(callee.params):
                raise _err(
                    f"{term.callee} expects {len(callee.params)} argument(s), got {len(term.args)}",
                    term.loc,
                )
            dest = term.dest
            if dest is not None and dest in guards:
                raise _err(f"guard {dest!r} reassigned by a terminator", term.loc)
        if isinstance(term, Spawn):
            if term.dest in spawn_sites:
                raise _err(f"thread handle {term.dest!r} spawned at more than one site", term.loc)
            spawn_sites[term.dest] = b.id

    handles = set(spawn_sites)
    for b in fn.blocks:
        uses: list[tuple[str, Loc]] = []
        for s in b.statements:
            uses.extend((p, s.loc) for p in s.rvalue.used_places())
            if s.dest in handles:
                raise _err(f"thread handle {s.dest!r} reassigned", s.loc)
        term = b.terminator
        if isinstance(term, (Call, Spawn)):
            uses.extend((a.place, term.loc) for a in term.args if a.place is not None)
            if isinstance(term, Call) and term.dest in handles:
                raise _err(f"thread handle {term.dest!r} reassigned", term.loc)
        if isinstance(term, LockAcquire) and term.operand.place is not None:
            uses.append((term.operand.place, term.loc))
        if isinstance(term, Drop):
            uses.append((term.place, term.loc))
        for place, loc in uses:
            if place in handles:
                raise _err(f"thread handle {place!r} cannot be passed or copied", loc)
        if isinstance(term, Join) and term.handle not in handles:
            raise _err(f"join on {term.handle!r}, which is not spawned in {fn.name}", term.loc)

    defined = _must_defined(fn)
    for b in fn.blocks:
        avail = defined[b.id]
        if avail is None:
            continue
        avail = set(avail)

        def check(place: str, loc: Loc, what: str) -> None:
            if place in locks:
                return
            if place not in local_names:
                raise _err(f"unknown name {place!r}", loc)
            if place not in avail:
                raise _err(f"{what} {place!r} used before definition", loc)

        for s in b.statements:
            for p in s.rvalue.used_places():
                check(p, s.loc, "local")
            avail.add(s.dest)
        term = b.terminator
        if isinstance(term, Drop):
            if term.place in locks:
                raise _err(f"drop of lock {term.place!r}; drop a guard instead", term.loc)
            check(term.place, term.loc, "guard" if term.place in guards else "local")
        elif isinstance(term, Join):
            check(term.handle, term.loc, "thread handle")
        elif isinstance(term, LockAcquire):
            if term.operand.place is not None:
                check(term.operand.place, term.loc, "lock operand")
        elif isinstance(term, (Call, Spawn)):
            for a in term.args:
                if a.place is not None:
                    check(a.place, term.loc, "argument")
        elif isinstance(term, SwitchInt) and term.scrutinee.place is not None:
            check(term.scrutinee.place, term.loc, "local")

    roots = _resolve_roots(fn, locks)
    acquisitions: list[tuple[Operand, AcquireMode, Loc]] = []
    for b in fn.blocks:
        for s in b.statements:
            if s.is_acquire:
                acquisitions.append((s.rvalue.operand, s.rvalue.mode, s.loc))
        if isinstance(b.terminator, LockAcquire):
            acquisitions.append((b.terminator.operand, b.terminator.mode, b.terminator.loc))
    for operand, mode, loc in acquisitions:
        place = operand.place
        if place is None:
            raise _err("lock operand must be a place, not a constant", loc)
        if place in locks:
            decl = prog.lock(place)
            if decl.kind is not mode.kind:
                raise _err(f"{mode.value}() on {decl.kind.value} {place!r}", loc)
            continue
        if place in guards:
            raise _err(f"lock operand {place!r} is a guard", loc)
        if not roots.get(place):
            raise _err(f"lock operand {place!r} does not resolve to a lock or parameter", loc)


def validate(prog: Program) -> None:
    """Check all structural invariants; raise ParseError on the first violation."""
    if prog.entry not in prog.functions:
        raise ParseError("no main function", 1, 1)
    names: dict[str, Loc] = {}
    for decl in prog.lock_decls:
        if decl.name in names:
            raise _err(f"duplicate lock name {decl.name!r}", decl.loc)
        names[decl.name] = decl.loc
    for fname, fn in prog.functions.items():
        if fname in names:
            raise _err(f"function {fname!r} duplicates a lock name", fn.loc)
    for fn in prog.functions.values():
        _validate_function(fn, prog)


def _assemble(units: Iterable[tuple[list[LockDecl], list[tuple[Function, list]]]]) -> Program:
    decls: list[LockDecl] = []
    functions: dict[str, Function] = {}
    for unit_decls, unit_fns in units:
        decls.extend(unit_decls)
        for fn, _refs in unit_fns:
            if fn.name in functions:
                raise _err(f"duplicate function name {fn.name!r}", fn.loc)
            functions[fn.name] = fn
    prog = Program(tuple(decls), functions)
    validate(prog)
    return prog


def parse_program(text: str, file: str | None = None) -> Program:
    """Parse and validate a single mini-MIR source text."""
    return _assemble([_Parser(text, file).parse_unit()])


def parse_sources(sources: Iterable[tuple[str, str | None]]) -> Program:
    """Parse several (text, filename) units and merge them into one Program.

    Lock declarations are global, so a lock declared in one file may be
    used from functions in another.
    """
    return _assemble([_Parser(text, file).parse_unit() for text, file in sources])


def parse_files(paths: Iterable[str | Path]) -> Program:
    sources = [(Path(p).read_text(encoding="utf-8"), str(p)) for p in paths]
    return parse_sources(sources)
