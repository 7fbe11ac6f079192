from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import pytest

from mirpn import BuildConfig, RwModel, analyze, build_net, parse_files, parse_program, prepare
from mirpn.analysis import AliasReport
from mirpn.builder import NetIndex
from mirpn.mir import AcquireMode, LockKind, Program
from mirpn.petri import DeadlockSearch, PetriNet, ReachabilityGraph, explore, find_deadlocks

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"
GOLDEN = Path(__file__).resolve().parent / "golden"
EXPECT = json.loads((CORPUS / "expect.json").read_text())
CORPUS_FILES = sorted(EXPECT)


def pytest_addoption(parser):
    parser.addoption("--update-golden", action="store_true", help="rewrite golden files instead of comparing")


@pytest.fixture
def update_golden(request) -> bool:
    return request.config.getoption("--update-golden")


@dataclass
class Pipeline:
    program: Program
    report: AliasReport
    net: PetriNet
    index: NetIndex
    graph: ReachabilityGraph
    search: DeadlockSearch

    @property
    def rw_capacity(self) -> dict[str, int]:
        idx = self.index
        return {l: idx.capacity[c.id] for c in idx.classes if c.id in idx.capacity for l in c.locks}


def run_pipeline(source: str | Path, model: RwModel = RwModel.GENERAL, **cfg) -> Pipeline:
    """Parse (a path or source text), prepare, analyze, build and explore."""
    unwind = cfg.get("include_unwind", False)
    if isinstance(source, Path):
        prog = parse_files([source])
    else:
        prog = parse_program(source)
    prog, _ = prepare(prog, include_unwind=unwind)
    report = analyze(prog, cfg.get("lock_kind_filter", BuildConfig().lock_kind_filter))
    net, index = build_net(prog, report, BuildConfig(model, **cfg))
    graph = explore(net)
    search = find_deadlocks(graph, net, index.goal, index.control_places())
    return Pipeline(prog, report, net, index, graph, search)


@pytest.fixture(scope="session")
def corpus_pipelines() -> dict[tuple[str, RwModel], Pipeline]:
    return {
        (name, model): run_pipeline(CORPUS / name, model)
        for name in CORPUS_FILES
        for model in RwModel
    }


def conservation_holds(pipe, model: RwModel) -> None:
    """Free tokens plus tokens lent to holders always equal the capacity.

    Holders are read off the places: every block, write-wait and end place
    records the guards held while a token sits there.  Only valid without
    unwinding, where leaked guards would break the balance on purpose.
    """
    net, index, graph = pipe.net, pipe.index, pipe.graph
    pidx = net.place_index
    holders = [(pidx[n], i) for n, i in index.nodes.items() if i.role in ("block", "write_wait", "end")]
    for c in index.classes:
        if c.id not in index.active:
            continue
        res = pidx[f"lk{c.id}_res"]
        n = index.capacity.get(c.id, 1)
        for m in graph.states:
            lent = writers = pending = 0
            for col, info in holders:
                k = m[col]
                if not k:
                    continue
                if info.role == "write_wait" and info.lock_class == c.id:
                    pending += k
                for cid, mode in info.held:
                    if cid == c.id:
                        lent += k * (n if mode is AcquireMode.WRITE else 1)
                        writers += k * (mode is AcquireMode.WRITE)
            assert m[res] + lent == n, (c.label, net.as_dict(m))
            if model is RwModel.GENERAL and c.kind is LockKind.RWLOCK:
                assert m[pidx[f"lk{c.id}_gate"]] + pending + writers == 1


# -- acceptance report ----------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
