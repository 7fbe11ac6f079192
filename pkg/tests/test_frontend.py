from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirpn import AnalysisError, ParseError, auto_insert_drops, normalize_blocks, parse_program, prepare
from mirpn.gen import GenConfig, random_program
from mirpn.mir import AcquireMode, Drop, Goto, LockAcquire, LockKind, Return, RvalueKind
from mirpn.normalize import analyze_held, prune_unreachable
from mirpn.oracle import simulate_all
from mirpn.parser import parse_sources
from mirpn.printer import format_program

from conftest import CORPUS, CORPUS_FILES

MINI = (CORPUS / "mini.mir").read_text()


def kinds(fn):
    return [type(b.terminator).__name__ for b in fn.blocks]


# -- parsing ------------------------------------------------------------------


def test_minimal_program():
    p = parse_program("mutex m0; fn main(){ bb0:{ return; } }")
    assert [d.name for d in p.lock_decls] == ["m0"]
    assert p.lock_decls[0].kind is LockKind.MUTEX
    assert list(p.functions) == ["main"]
    assert len(p.functions["main"].blocks) == 1


def test_empty_input_has_no_main():
    with pytest.raises(ParseError, match="no main function"):
        parse_program("")


def test_mini_structure():
    fn = parse_program(MINI).functions["main"]
    assert kinds(fn) == ["LockAcquire", "LockAcquire", "Drop", "Drop", "Return"]
    acq = fn.blocks[0].terminator
    assert (acq.dest, acq.operand.value, acq.mode, acq.target) == ("g0", "m0", AcquireMode.LOCK, 1)
    assert fn.blocks[0].terminator.loc.line == 3
    assert fn.blocks[1].terminator.loc.line == 4


@pytest.mark.parametrize(
    "src, message",
    [
        ("fn main() { bb0: { frobnicate; } }", "unknown keyword"),
        ("fn main() { bb0: { goto -> bb3; } }", "dangling block reference bb3"),
        ("mutex m; mutex m; fn main() { bb0: { return; } }", "duplicate lock name"),
        ("fn main() { bb0: { return; } } fn main() { bb0: { return; } }", "duplicate function name"),
        ("fn main() { bb0: { return; } bb0: { return; } }", "duplicate block label"),
        ("mutex m; fn main() { bb0: { drop(g) -> bb1; } bb1: { return; } }", "unknown name 'g'"),
        ("fn main() { bb0: { x = const 1; } }", "no terminator"),
        ("fn f() { bb0: { return; } }", "no main function"),
        ("mutex m; fn main() { bb0: { g = read(m) -> bb1; } bb1: { return; } }", r"read\(\) on mutex"),
    ],
)
def test_parse_errors(src, message):
    with pytest.raises(ParseError, match=message):
        parse_program(src)


def test_guard_used_before_definition():
    src = """mutex m;
fn main() {
  bb0: { switchInt(const 1) -> [bb1, otherwise: bb2]; }
  bb1: { g = lock(m) -> bb2; }
  bb2: { drop(g) -> bb3; }
  bb3: { return; }
}"""
    with pytest.raises(ParseError, match="used before definition") as exc:
        parse_program(src)
    assert exc.value.line == 5


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as exc:
        parse_program("fn main() {\n  bb0: { goto -> bb9; }\n}", "x.mir")
    assert (exc.value.file, exc.value.line) == ("x.mir", 2)
    assert str(exc.value).startswith("x.mir:2:")


def test_comments_and_repeat_are_accepted():
    p = parse_program("// header\nfn main() { bb0: { a = repeat(const 0); return; } // tail\n}")
    assert p.functions["main"].blocks[0].statements[0].rvalue.kind is RvalueKind.REPEAT


def test_multiple_sources_share_locks():
    p = parse_sources(
        [("mutex m;", "locks.mir"), ("fn main() { bb0: { g = lock(m) -> bb1; } bb1: { return; } }", "main.mir")]
    )
    assert p.lock("m") is not None


def test_handles_must_be_joined_locally():
    src = """fn w() { bb0: { return; } }
fn f(h) { bb0: { join(h) -> bb1; } bb1: { return; } }
fn main() { bb0: { h = spawn(w) -> bb1; } bb1: { call f(copy(h)) -> bb2; } bb2: { return; } }"""
    with pytest.raises(ParseError):
        parse_program(src)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_print_parse_round_trip(seed):
    p = parse_program(random_program(seed))
    text = format_program(p)
    again = parse_program(text)
    assert again == p
    assert format_program(again) == text


@pytest.mark.parametrize("name", CORPUS_FILES)
def test_corpus_round_trip(name):
    p = parse_program((CORPUS / name).read_text())
    assert parse_program(format_program(p)) == p


# -- normalization ------------------------------------------------------------


def test_split_statement_acquisitions():
    p = parse_program("mutex m0; fn main() { bb0: { g0 = lock(m0); g1 = lock(m0); goto -> bb1; } bb1: { return; } }")
    fn = normalize_blocks(p).functions["main"]
    assert kinds(fn) == ["LockAcquire", "LockAcquire", "Goto", "Return"]
    assert [b.terminator.target for b in fn.blocks[:3]] == [1, 2, 3]
    assert all(b.acquisitions() <= 1 for b in fn.blocks)


def test_split_preserves_statement_order():
    src = "mutex m; fn main() { bb0: { a = const 1; g = lock(m); b = copy(a); goto -> bb1; } bb1: { return; } }"
    fn = normalize_blocks(parse_program(src)).functions["main"]
    assert [s.dest for s in fn.blocks[0].statements] == ["a"]
    assert [s.dest for s in fn.blocks[1].statements] == ["b"]


def test_normalize_is_identity_without_sugar():
    p = parse_program(MINI)
    assert normalize_blocks(p) == p
    lockfree = parse_program((CORPUS / "lockfree.mir").read_text())
    assert normalize_blocks(lockfree) == lockfree


def test_normalize_preserves_oracle_verdict():
    sugar = parse_program("mutex m0; fn main() { bb0: { g0 = lock(m0); g1 = lock(m0); goto -> bb1; } bb1: { return; } }")
    explicit = parse_program(
        "mutex m0; fn main() { bb0: { g0 = lock(m0) -> bb1; } bb1: { g1 = lock(m0) -> bb2; } bb2: { return; } }"
    )
    assert simulate_all(sugar).deadlock and simulate_all(explicit).deadlock


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_at_most_one_acquisition_per_block(seed):
    p, _ = prepare(parse_program(random_program(seed, GenConfig(sugar_prob=0.6))))
    for _fn, b in p.iter_blocks():
        assert b.acquisitions() <= 1
        assert not any(s.is_acquire for s in b.statements)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_normalize_keeps_acquisition_sites(seed):
    p = parse_program(random_program(seed, GenConfig(sugar_prob=0.6)))

    def sites(prog):
        out = []
        for fn, b in prog.iter_blocks():
            out += [(fn.name, s.dest, s.rvalue.mode) for s in b.statements if s.is_acquire]
            if isinstance(b.terminator, LockAcquire):
                out.append((fn.name, b.terminator.dest, b.terminator.mode))
        return sorted(out, key=str)

    assert sites(normalize_blocks(p)) == sites(p)


def test_auto_drop_single_guard():
    p = parse_program("mutex m0; fn main() { bb0: { g0 = lock(m0) -> bb1; } bb1: { return; } }")
    fn = auto_insert_drops(p).functions["main"]
    assert kinds(fn) == ["LockAcquire", "Drop", "Return"] or kinds(fn) == ["LockAcquire", "Return", "Drop"]
    drops = [b for b in fn.blocks if isinstance(b.terminator, Drop)]
    assert [d.terminator.place for d in drops] == ["g0"]
    assert fn.blocks[drops[0].terminator.target].terminator == Return()
    assert simulate_all(p).verdict.value == "Clean"


def test_auto_drop_reverse_order():
    src = "mutex a; mutex b; fn main() { bb0: { g0 = lock(a) -> bb1; } bb1: { g1 = lock(b) -> bb2; } bb2: { return; } }"
    fn = auto_insert_drops(parse_program(src)).functions["main"]
    order, b = [], fn.blocks[1].terminator.target
    while isinstance(fn.blocks[b].terminator, Drop):
        order.append(fn.blocks[b].terminator.place)
        b = fn.blocks[b].terminator.target
    assert order == ["g1", "g0"]
    assert isinstance(fn.blocks[b].terminator, Return)


def test_auto_drop_leaves_explicit_drops_alone():
    p = parse_program(MINI)
    assert auto_insert_drops(p) == p


def test_auto_drop_on_loop_back_edge():
    p, _ = prepare(parse_program((CORPUS / "loop.mir").read_text()))
    fn = p.functions["worker"]
    info = analyze_held(fn)
    for u, v in info.back_edges:
        assert info.held_out[u] == info.held_in[v]


def test_double_drop_is_an_error():
    src = "mutex m; fn main() { bb0: { g = lock(m) -> bb1; } bb1: { drop(g) -> bb2; } bb2: { drop(g) -> bb3; } bb3: { return; } }"
    with pytest.raises(AnalysisError, match="dropped twice"):
        prepare(parse_program(src))


def test_unreachable_blocks_are_pruned_with_warning():
    p = parse_program("fn main() { bb0: { return; } bb1: { goto -> bb0; } }")
    q, warnings = prune_unreachable(p)
    assert len(q.functions["main"].blocks) == 1
    assert warnings == ["main: unreachable block bb1 dropped"]


def test_unwind_stripped_by_default():
    p = parse_program((CORPUS / "unwind.mir").read_text())
    q, warnings = prepare(p)
    assert all(getattr(b.terminator, "unwind", None) is None for _f, b in q.iter_blocks())
    assert any("bb4" in w for w in warnings)
    kept, _ = prepare(p, include_unwind=True)
    assert kept.functions["worker"].blocks[1].terminator.unwind is not None


def test_goto_remap_on_split():
    src = "mutex m; fn main() { bb0: { goto -> bb1; } bb1: { g = lock(m); goto -> bb2; } bb2: { return; } }"
    fn = normalize_blocks(parse_program(src)).functions["main"]
    assert fn.blocks[0].terminator == Goto(1)
    assert isinstance(fn.blocks[1].terminator, LockAcquire)
    assert fn.blocks[2].terminator.target == 3
