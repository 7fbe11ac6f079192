from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirpn import BuildConfig, BuildError, LockKind, RwModel, analyze, build_net, canonical_dump, parse_program, prepare
from mirpn.gen import GenConfig, random_program
from mirpn.mir import AcquireMode
from mirpn.petri import enabled, explore

from conftest import CORPUS, CORPUS_FILES, EXPECT, conservation_holds, run_pipeline


def build(src: str, **cfg):
    p, _ = prepare(parse_program(src), include_unwind=cfg.get("include_unwind", False))
    return build_net(p, analyze(p), BuildConfig(**cfg))


def names(net, index):
    return sorted(index.names[t.id] for t in net.transitions)


def test_trivial_program():
    net, index = build("fn main() { bb0: { return; } }")
    assert [p.id for p in net.places] == ["fc0_main_bb0", "main_end"]
    assert names(net, index) == ["main.bb0:return"]
    assert index.start == "fc0_main_bb0"
    assert net.initial_marking == (1, 0)


def test_mini_net_shape():
    net, index = build((CORPUS / "mini.mir").read_text())
    assert index.names["lk0_res"] == "m0.res"
    assert net.marking({"lk0_res": 1, "fc0_main_bb0": 1}) == net.initial_marking
    assert names(net, index) == [
        "main.bb0:acquire m0 [mutex]",
        "main.bb1:acquire m0 [mutex]",
        "main.bb2:release m0 [mutex]",
        "main.bb3:release m0 [mutex]",
        "main.bb4:return",
    ]
    acq = index.id_of("main.bb0:acquire m0 [mutex]")
    assert net.preset(acq) == {"fc0_main_bb0": 1, "lk0_res": 1}
    assert net.postset(acq) == {"fc0_main_bb1": 1}
    rel = index.id_of("main.bb3:release m0 [mutex]")
    assert net.postset(rel) == {"fc0_main_bb4": 1, "lk0_res": 1}


def test_copy_per_call_site():
    net, index = build((CORPUS / "multi_call.mir").read_text())
    labels = [c.label for c in index.copies]
    assert labels == [
        "main",
        "main>stats",
        "main>mutex1",
        "main>mutex1>mutex2",
        "main>mutex1>mutex3",
        "main>mutex1>mutex3>mutex2",
    ]
    assert len(index.copies_of("mutex2")) == 2
    # every copy owns a full set of block places plus an end place
    for cp in index.copies:
        blocks = [n for n, i in index.nodes.items() if i.role == "block" and i.copy == cp.id]
        assert len(blocks) == len(parse_program((CORPUS / "multi_call.mir").read_text()).functions[cp.function].blocks)


def test_call_and_return_arcs():
    net, index = build((CORPUS / "multi_call.mir").read_text())
    call = index.id_of("main.bb1:call main>mutex1")
    callee_entry = next(n for n, i in index.nodes.items() if i.role == "block" and i.copy == 2 and i.block == 0)
    assert net.postset(call) == {callee_entry: 1}
    ret = index.id_of("main.bb1:return from main>mutex1")
    assert net.preset(ret) == {"fc2_mutex1_end": 1}
    assert net.postset(ret) == {"fc0_main_bb2": 1}


def test_lock_free_call_is_one_placeholder():
    base = "mutex m; fn main() { bb0: { g = lock(m) -> bb1; } bb1: { drop(g) -> bb2; } bb2: { return; } }"
    with_call = """mutex m;
fn helper() { bb0: { x = const 1; goto -> bb1; } bb1: { return; } }
fn main() { bb0: { g = lock(m) -> bb1; } bb1: { drop(g) -> bb2; } bb2: { call helper() -> bb3; } bb3: { return; } }"""
    n0, _ = build(base)
    n1, i1 = build(with_call)
    assert len(n1.transitions) == len(n0.transitions) + 1
    assert len(n1.places) == len(n0.places) + 1
    assert "main.bb2:call helper (skipped)" in names(n1, i1)
    assert [c.function for c in i1.copies] == ["main"]


def test_spawn_and_join_arcs():
    net, index = build((CORPUS / "abba.mir").read_text())
    assert [c.label for c in index.copies] == ["main", "thread#1(ab)", "thread#2(ba)"]
    spawn = index.id_of("main.bb0:spawn thread#1(ab)")
    assert net.preset(spawn) == {"fc0_main_bb0": 1}
    assert net.postset(spawn) == {"fc0_main_bb1": 1, "fc1_ab_bb0": 1}
    join = index.id_of("main.bb2:join thread#1(ab)")
    assert net.preset(join) == {"fc0_main_bb2": 1, "fc1_ab_end": 1}
    assert net.postset(join) == {"fc0_main_bb3": 1}


def test_rwlock_general_fragment():
    src = (CORPUS / "multi_thread_rw.mir").read_text()
    net, index = build(src)
    reads = [t for t in net.transitions if "[read]" in index.names[t.id] and "acquire" in index.names[t.id]]
    writes = [t for t in net.transitions if "acquire" in index.names[t.id] and "[write]" in index.names[t.id]]
    requests = [t for t in net.transitions if "request" in index.names[t.id]]
    assert reads and writes and len(requests) == len(writes)
    n = index.capacity[0]
    for t in reads:
        pre, post = net.preset(t.id), net.postset(t.id)
        assert pre["lk0_gate"] == 1 and post["lk0_gate"] == 1 and pre["lk0_res"] == 1
    for t in requests:
        assert net.preset(t.id)["lk0_gate"] == 1
        (ww,) = net.postset(t.id)
        assert ww.endswith("_ww")
    for t in writes:
        assert net.preset(t.id)["lk0_res"] == n


def test_rwlock_specific_fragment_has_no_gate():
    net, index = build((CORPUS / "multi_thread_rw.mir").read_text(), rwlock_model=RwModel.SPECIFIC)
    assert "lk0_gate" not in net.place_index
    assert not any("request" in index.names[t.id] for t in net.transitions)
    assert not any(n.endswith("_ww") for n in net.place_index)


def test_capacity_auto_and_explicit():
    src = (CORPUS / "multi_thread_rw.mir").read_text()
    net, index = build(src)
    reads = sum(1 for s in index.classes[0].sites if s.mode is AcquireMode.READ)
    assert index.capacity[0] == max(2, reads)
    net3, _ = build(src, rwlock_capacity=3)
    assert net3.initial_marking[net3.place_index["lk0_res"]] == 3
    with pytest.raises(BuildError):
        build(src, rwlock_capacity=0)


def test_guard_bound_to_two_classes_is_rejected():
    src = """mutex a; mutex b;
fn main() {
  bb0: { switchInt(const 0) -> [bb1, otherwise: bb3]; }
  bb1: { g = lock(a) -> bb2; }
  bb2: { drop(g) -> bb5; }
  bb3: { g = lock(b) -> bb4; }
  bb4: { drop(g) -> bb5; }
  bb5: { return; }
}"""
    with pytest.raises(BuildError, match="bound to different locks"):
        build(src)


def test_lock_kind_filter_drops_fragments():
    from mirpn import LockKindFilter

    net, index = build((CORPUS / "multi_call.mir").read_text(), lock_kind_filter=LockKindFilter.MUTEX_ONLY)
    kinds = {index.lock_class(i.lock_class).kind for i in index.nodes.values() if i.role == "resource"}
    assert kinds == {LockKind.MUTEX}
    assert "main.bb0:call stats (skipped)" in names(net, index)


def test_unwind_model():
    src = (CORPUS / "unwind.mir").read_text()
    net, index = build(src, include_unwind=True)
    all_names = names(net, index)
    assert "thread#1(worker).bb1:call may_fail (skipped)" in all_names
    assert "thread#1(worker).bb1:panic in may_fail" in all_names
    assert "main.bb1:join thread#1(worker) (panicked)" in all_names
    plain, pindex = build(src)
    assert not any("panic" in n for n in names(plain, pindex))


def test_unreached_class_warns():
    src = """mutex m;
fn never() { bb0: { g = lock(m) -> bb1; } bb1: { drop(g) -> bb2; } bb2: { return; } }
fn main() { bb0: { return; } }"""
    _net, index = build(src)
    assert index.warnings == ["lock class m is never acquired on any path from main"]


@pytest.mark.parametrize("name", CORPUS_FILES)
def test_build_is_deterministic(name):
    src = (CORPUS / name).read_text()
    a = canonical_dump(*build(src))
    b = canonical_dump(*build(src))
    assert a == b


@pytest.mark.parametrize("name", CORPUS_FILES)
@pytest.mark.parametrize("model", list(RwModel))
def test_corpus_deadlock_counts(corpus_pipelines, name, model):
    pipe = corpus_pipelines[(name, model)]
    assert len(pipe.search.deadlocks) == EXPECT[name][model.value]
    assert not pipe.graph.truncated


def test_unwind_corpus_with_unwinding():
    pipe = run_pipeline(CORPUS / "unwind.mir", include_unwind=True)
    assert len(pipe.search.deadlocks) == EXPECT["unwind.mir"]["unwind"]


# -- invariants over all reachable markings ---------------------------------------


@pytest.mark.parametrize("name", CORPUS_FILES)
@pytest.mark.parametrize("model", list(RwModel))
def test_conservation_invariants_on_corpus(corpus_pipelines, name, model):
    conservation_holds(corpus_pipelines[(name, model)], model)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.sampled_from(list(RwModel)))
def test_conservation_invariants_on_random_programs(seed, model):
    conservation_holds(run_pipeline(random_program(seed, GenConfig(rwlock_prob=0.6)), model), model)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_one_control_token_per_live_copy(seed):
    """A copy's block and write-wait places never hold more than one token together."""
    pipe = run_pipeline(random_program(seed))
    by_copy: dict[int, list[int]] = {}
    for pid in pipe.index.control_places():
        by_copy.setdefault(pipe.index.node(pid).copy, []).append(pipe.net.place_index[pid])
    for m in pipe.graph.states:
        for cols in by_copy.values():
            assert sum(m[i] for i in cols) <= 1


def test_chain_shape():
    """A straight-line function of n blocks becomes a chain of n transitions."""
    n = 6
    blocks = " ".join(f"bb{i}: {{ goto -> bb{i + 1}; }}" for i in range(n - 1))
    net, index = build(f"fn main() {{ {blocks} bb{n - 1}: {{ return; }} }}")
    assert len(net.places) == n + 1
    assert len(net.transitions) == n
    g = explore(net)
    assert len(g.states) == n + 1
    assert enabled(net, g.states[-1]) == ()


def test_write_weight_matches_capacity():
    net, index = build((CORPUS / "multi_thread_rw.mir").read_text(), rwlock_capacity=3)
    weights = {a.weight for a in net.arcs if a.source == "lk0_res" or a.target == "lk0_res"}
    assert 3 in weights
