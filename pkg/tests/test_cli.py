from __future__ import annotations

import json
import subprocess
import sys

import pytest

from mirpn import RwModel
from mirpn.cli import main
from mirpn.driver import RunConfig, Severity, WitnessStep, render_witness, run
from mirpn.petri import DeadlockReport, replay

from conftest import CORPUS, CORPUS_FILES, EXPECT, run_pipeline


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_mini_text_output(capsys):
    code, out, err = cli(capsys, CORPUS / "mini.mir")
    assert code == 1
    assert err == ""
    lines = out.splitlines()
    assert lines[0] == "deadlock: main waiting on m0"
    assert lines[1:3] == ["  main bb0 line 3: acquire m0 [mutex]", "  STUCK: main bb1 line 4 waiting on m0"]
    assert lines[3].startswith("summary: 1 deadlock(s); 1 mutex and 0 rwlock class(es)")


def test_lock_free_program_is_silent(capsys):
    code, out, _ = cli(capsys, CORPUS / "lockfree.mir")
    assert code == 0
    assert [l for l in out.splitlines() if not l.startswith("summary:")] == []


def test_multi_call_oracle_agrees(capsys):
    code, out, _ = cli(capsys, CORPUS / "multi_call.mir", "--oracle-check")
    assert code == 1
    assert out.count("\ndeadlock: ") + out.startswith("deadlock: ") == 2
    assert "oracle: AGREE (net 2 deadlock(s), oracle 2 stuck state(s))" in out


def test_specific_model_flag(capsys):
    assert cli(capsys, CORPUS / "multi_thread_rw.mir")[0] == 1
    assert cli(capsys, CORPUS / "multi_thread_rw.mir", "--rwlock-model", "specific")[0] == 0


def test_lock_type_filter(capsys):
    code, out, _ = cli(capsys, CORPUS / "multi_thread.mir", "--lock-type", "rwlock")
    assert code == 1
    assert "0 mutex and 2 rwlock class(es)" in out


def test_include_unwind_flag(capsys):
    assert cli(capsys, CORPUS / "unwind.mir")[0] == 0
    code, out, _ = cli(capsys, CORPUS / "unwind.mir", "--include-unwind", "--oracle-check")
    assert code == 1
    assert "oracle: AGREE" in out


def test_parse_error_goes_to_stderr(tmp_path, capsys):
    bad = tmp_path / "bad.mir"
    bad.write_text("fn main() {\n  bb0: { goto -> bb7; }\n}\n")
    code, out, err = cli(capsys, bad)
    assert code == 3
    assert out == ""
    assert err.startswith(f"error: {bad}:2:")
    assert "dangling block reference bb7" in err


def test_missing_file(capsys):
    code, _, err = cli(capsys, "/nonexistent/x.mir")
    assert code == 3
    assert err.startswith("error:")


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--max-states", "0", str(CORPUS / "mini.mir")])
    assert exc.value.code == 3


def test_state_cap_is_inconclusive(capsys):
    code, out, _ = cli(capsys, CORPUS / "conflict_rw.mir", "--max-states", "3")
    assert code == 2
    assert "inconclusive: state cap of 3 reached" in out
    assert "(truncated)" in out


def test_state_cap_with_deadlock_still_reports_it(capsys):
    code, out, _ = cli(capsys, CORPUS / "mini.mir", "--max-states", "3")
    assert code == 1


def test_emitted_files(tmp_path, capsys):
    pnml, dump, aliases, reach = (tmp_path / n for n in ("n.pnml", "n.txt", "a.json", "r.txt"))
    code, _, _ = cli(
        capsys, CORPUS / "mini.mir", "--emit-pnml", pnml, "--emit-netdump", dump,
        "--dump-aliases", aliases, "--dump-reachability", reach,
    )
    assert code == 1
    assert pnml.read_text().startswith("<?xml")
    assert dump.read_text().startswith("place fc0_main_bb0 init=1")
    assert json.loads(aliases.read_text())["classes"][0]["locks"] == ["m0"]
    assert reach.read_text().startswith("state0: {")


def test_pnml_written_even_when_capped(tmp_path, capsys):
    pnml = tmp_path / "n.pnml"
    code, _, _ = cli(capsys, CORPUS / "multi_thread.mir", "--max-states", "1", "--emit-pnml", pnml)
    assert code in (1, 2)
    assert pnml.exists()


@pytest.mark.parametrize("name", CORPUS_FILES)
def test_text_and_json_parity(capsys, name):
    _, text, _ = cli(capsys, CORPUS / name)
    code, raw, _ = cli(capsys, CORPUS / name, "--format", "json")
    doc = json.loads(raw)
    assert doc["exit_code"] == code
    rendered = []
    for d in doc["diagnostics"]:
        rendered.append(f"{d['severity']}: {d['message']}")
        rendered.extend(f"  {w}" for w in d["witness"])
    assert rendered == [l for l in text.splitlines() if not l.startswith("summary:")]
    assert doc["summary"]["deadlocks"] == EXPECT[name]["general"]


@pytest.mark.parametrize("name", CORPUS_FILES)
def test_output_is_deterministic(capsys, name):
    first = cli(capsys, CORPUS / name, "--oracle-check")
    second = cli(capsys, CORPUS / name, "--oracle-check")
    assert first == second


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "mirpn", str(CORPUS / "mini.mir")], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 1
    assert "deadlock:" in proc.stdout


def test_multiple_inputs_are_merged(tmp_path, capsys):
    locks = tmp_path / "locks.mir"
    locks.write_text("mutex m0;\n")
    prog = tmp_path / "main.mir"
    prog.write_text(
        "fn main() {\n  bb0: { a = lock(m0) -> bb1; }\n  bb1: { b = lock(m0) -> bb2; }\n  bb2: { return; }\n}\n"
    )
    code, out, _ = cli(capsys, locks, prog)
    assert code == 1


# -- diagnostics ----------------------------------------------------------------


def test_exit_code_matches_deadlock_diagnostics():
    for name in CORPUS_FILES:
        result = run(RunConfig((str(CORPUS / name),)))
        assert (result.exit_code == 1) == bool(result.deadlocks)
        assert (result.exit_code == 0) == (not result.deadlocks and not any(
            d.severity is Severity.INCONCLUSIVE for d in result.diagnostics))


def test_every_deadlock_witness_replays():
    for name in CORPUS_FILES:
        for model in RwModel:
            pipe = run_pipeline(CORPUS / name, model)
            for d in pipe.search.deadlocks:
                assert replay(pipe.net, d.witness) == d.marking


def test_abba_witness_interleaves_threads():
    pipe = run_pipeline(CORPUS / "abba.mir")
    (d,) = pipe.search.deadlocks
    rows = render_witness(d, pipe.index, pipe.program, pipe.net)
    prefixes = [r.removeprefix("STUCK: ").split(" ")[0] for r in rows]
    assert {"main", "thread#1(ab)", "thread#2(ba)"} <= set(prefixes)


def test_stuck_at_entry():
    pipe = run_pipeline(CORPUS / "mini.mir")
    empty = DeadlockReport(0, tuple(0 for _ in pipe.net.place_order), ())
    assert render_witness(empty, pipe.index, pipe.program, pipe.net) == ["STUCK at entry"]


def test_witness_step_rendering():
    assert WitnessStep("main", "main", 0, 3, "acquire m0 [mutex]").render() == "main bb0 line 3: acquire m0 [mutex]"
    assert WitnessStep("main", "main", 1, 4, "waiting on m0", True).render() == "STUCK: main bb1 line 4 waiting on m0"


def test_branching_witness_is_flagged_path_insensitive():
    result = run(RunConfig((str(CORPUS / "multi_thread.mir"),)))
    assert all("path-insensitive" in d.message for d in result.deadlocks)


def test_run_config_invariants():
    with pytest.raises(ValueError):
        RunConfig(())
    with pytest.raises(ValueError):
        RunConfig(("x",), max_states=0)
