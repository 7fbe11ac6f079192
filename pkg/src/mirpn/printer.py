"""Canonical pretty-printer: one statement per line, two-space indentation."""

from __future__ import annotations

from .mir import (
    Call,
    Drop,
    Function,
    Goto,
    Join,
    LockAcquire,
    Operand,
    Program,
    Return,
    Rvalue,
    RvalueKind,
    Spawn,
    Statement,
    SwitchInt,
    Terminator,
)


def format_operand(op: Operand) -> str:
    if op.kind == "const":
        return f"const {op.value}"
    return f"{op.kind}({op.value})"


def format_rvalue(rv: Rvalue) -> str:
    k = rv.kind
    if k in (RvalueKind.COPY, RvalueKind.MOVE, RvalueKind.REF):
        return f"{k.value}({rv.place})"
    if k in (RvalueKind.USE, RvalueKind.REPEAT):
        return f"{k.value}({format_operand(rv.operand)})"
    if k is RvalueKind.CONST:
        return f"const {rv.literal}"
    return f"{rv.mode.value}({format_operand(rv.operand)})"


def format_statement(s: Statement) -> str:
    return f"{s.dest} = {format_rvalue(s.rvalue)};"


def format_terminator(t: Terminator) -> str:
    if isinstance(t, Goto):
        return f"goto -> bb{t.target};"
    if isinstance(t, SwitchInt):
        arms = ", ".join(f"bb{x}" for x in t.targets)
        return f"switchInt({format_operand(t.scrutinee)}) -> [{arms}, otherwise: bb{t.otherwise}];"
    if isinstance(t, Call):
        args = ", ".join(format_operand(a) for a in t.args)
        lhs = f"{t.dest} = " if t.dest else ""
        if t.unwind is None:
            targets = f"[return: bb{t.target}]"
        else:
            targets = f"[return: bb{t.target}, unwind: bb{t.unwind}]"
        return f"{lhs}call {t.callee}({args}) -> {targets};"
    if isinstance(t, LockAcquire):
        return f"{t.dest} = {t.mode.value}({format_operand(t.operand)}) -> bb{t.target};"
    if isinstance(t, Drop):
        return f"drop({t.place}) -> bb{t.target};"
    if isinstance(t, Spawn):
        args = "".join(f", {format_operand(a)}" for a in t.args)
        return f"{t.dest} = spawn({t.callee}{args}) -> bb{t.target};"
    if isinstance(t, Join):
        return f"join({t.handle}) -> bb{t.target};"
    if isinstance(t, Return):
        return "return;"
    raise TypeError(f"not a terminator: {t!r}")


def format_function(fn: Function) -> str:
    lines = [f"fn {fn.name}({', '.join(fn.params)}) {{"]
    for b in fn.blocks:
        lines.append(f"  bb{b.id}: {{")
        lines.extend(f"    {format_statement(s)}" for s in b.statements)
        lines.append(f"    {format_terminator(b.terminator)}")
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines)


def format_program(prog: Program) -> str:
    parts: list[str] = []
    if prog.lock_decls:
        parts.append("\n".join(f"{d.kind.value} {d.name};" for d in prog.lock_decls))
    names = [prog.entry] + sorted(n for n in prog.functions if n != prog.entry)
    parts.extend(format_function(prog.functions[n]) for n in names)
    return "\n\n".join(parts) + "\n"
