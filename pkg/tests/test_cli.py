from __future__ import annotations

import pytest

from programs import MINIMAL, TWO_COMP
from secomp_kit.cli import FAIL, OK, USAGE, main


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "min.sexp").write_text(MINIMAL)
    (tmp_path / "two.sexp").write_text(TWO_COMP)
    (tmp_path / "io.txt").write_text("WRITEACK 1\n")
    return tmp_path


def test_run_source_minimal(work, capsys):
    assert main(["run-source", "min.sexp", "--fuel", "100", "--trace", "t.txt"]) == OK
    assert (work / "t.txt").read_text() == ""
    assert capsys.readouterr().out == "final 0\n"


def test_compile_then_run_both_sides(work):
    assert main(["compile", "two.sexp", "-o", "two.t"]) == OK
    assert main(["run-source", "two.sexp", "--io", "io.txt", "--trace", "s.txt"]) == OK
    assert main(["run-target", "two.t", "--io", "io.txt", "--trace", "t.txt", "--itrace", "it.txt"]) == OK
    assert (work / "s.txt").read_text() == (work / "t.txt").read_text()
    assert (work / "s.txt").read_text().startswith("CALL C0 C1.add (40,2)\n")


def test_check_trace_and_backtranslate(work, capsys):
    main(["compile", "two.sexp", "-o", "two.t"])
    main(["run-target", "two.t", "--io", "io.txt", "--trace", "t.txt", "--itrace", "it.txt"])
    capsys.readouterr()
    assert main(["check-trace", "it.txt", "--interface", "two.t"]) == OK
    assert capsys.readouterr().out.startswith("PASS 3 events")
    assert main(["backtranslate", "--interface", "two.t", "--itrace", "it.txt", "-o", "bt.sexp"]) == OK
    assert main(["run-source", "bt.sexp", "--io", "io.txt", "--max-events", "3", "--trace", "b.txt"]) == FAIL
    assert (work / "b.txt").read_text() == (work / "t.txt").read_text()
    assert main(["backtranslate", "--interface", "two.sexp", "--itrace", "it.txt",
                 "--comp", "C1", "-o", "c1.sexp"]) == OK
    assert "(compartment C1" in (work / "c1.sexp").read_text()


def test_check_trace_reports_the_bad_event(work, capsys):
    (work / "bad.txt").write_text("I main RET C0 C1 0\n")
    assert main(["check-trace", "bad.txt", "--interface", "two.sexp"]) == FAIL
    assert capsys.readouterr().out.startswith("FAIL event 0: StackUnderflow")


def test_stuck_run_exits_one(work, capsys):
    (work / "ub.sexp").write_text("(compartment C0 (exports (main 0 ret)) (proc main () (return (op / 1 0))))")
    assert main(["run-source", "ub.sexp", "--trace", "t.txt"]) == FAIL
    assert capsys.readouterr().out.startswith("stuck C0")
    assert (work / "t.txt").read_text() == "UB C0\n"


def test_link_partials(work):
    c0, c1 = TWO_COMP.split("(compartment C1")
    (work / "a.sexp").write_text(c0)
    (work / "b.sexp").write_text("(compartment C1" + c1)
    assert main(["link", "a.sexp", "b.sexp", "-o", "ab.sexp"]) == OK
    assert main(["run-source", "ab.sexp", "--io", "io.txt"]) == OK
    assert main(["link", "a.sexp", "min.sexp", "-o", "x.sexp"]) == USAGE


@pytest.mark.parametrize("argv", [
    ["run-source", "missing.sexp"],
    ["frobnicate"],
    ["run-source", "min.sexp", "--bogus"],
    ["fuzz", "nonsense"],
])
def test_usage_errors(work, argv):
    assert main(argv) == USAGE


def test_parse_error_names_the_file_and_position(work, capsys):
    (work / "bad.sexp").write_text("(compartment C0\n  (exports (main 0 ret))\n  (proc main () (frob 1)))")
    assert main(["compile", "bad.sexp"]) == USAGE
    assert "bad.sexp:3:17" in capsys.readouterr().err


def test_fuzz_twice_gives_identical_verdicts(work, capsys):
    assert main(["fuzz", "fcc", "--trials", "10", "--seed", "1", "--out", "a", "--jobs", "1"]) == OK
    assert main(["fuzz", "fcc", "--trials", "10", "--seed", "1", "--out", "b", "--jobs", "1"]) == OK
    a = (work / "a" / "fcc" / "verdicts.txt").read_bytes()
    assert a == (work / "b" / "fcc" / "verdicts.txt").read_bytes()
    assert len(a.splitlines()) == 10
