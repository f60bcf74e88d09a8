from __future__ import annotations

import random
from collections import deque

import pytest

from programs import MINIMAL
from secomp_kit.backtrans import bt_init, check_wf
from secomp_kit.harness import adversarial, corpus
from secomp_kit.harness.gen import (
    GenConfig, gen_environment, gen_informative_trace, gen_pair, gen_program,
    gen_program_case,
)
from secomp_kit.harness.props import (
    check_backtranslation, crosses, prop_bcc, prop_blame, prop_bt_compiles, prop_fcc,
    prop_recomposition,
)
from secomp_kit.lang import Seq, check_interfaces, parse_program
from secomp_kit.sem_source import run
from secomp_kit.sem_target import trun
from secomp_kit.trace import CallEvent, Final, IoScript, Stuck, project


def test_environment_is_deterministic():
    cfg = GenConfig(seed=4, n_compartments=4)
    assert gen_environment(cfg) == gen_environment(cfg)


def test_single_compartment_environment_has_no_imports():
    env, graph = gen_environment(GenConfig(seed=1, n_compartments=1))
    assert list(env.interface) == ["C0"] and env.interface["C0"].imports == {}
    assert graph.edges == frozenset()


@pytest.mark.parametrize("seed", range(20))
def test_environment_graph_is_connected(seed):
    _, graph = gen_environment(GenConfig(seed=seed, n_compartments=3 + seed % 4))
    seen = {graph.vertices[0]}
    todo = deque(seen)
    while todo:
        for v in graph.neighbours(todo.popleft()):
            if v not in seen:
                seen.add(v)
                todo.append(v)
    assert seen == set(graph.vertices)


def test_zero_events_gives_empty_trace():
    cfg = GenConfig(seed=2, max_events=0)
    env, _ = gen_environment(cfg)
    assert gen_informative_trace(env, cfg) == []


@pytest.mark.parametrize("seed", range(100))
def test_generated_traces_are_well_formed_and_follow_edges(seed):
    cfg = GenConfig(seed=seed, n_compartments=2 + seed % 4, max_events=150)
    rng = random.Random(seed)
    env, graph = gen_environment(cfg, rng)
    it = gen_informative_trace(env, cfg, rng)
    assert check_wf(it, bt_init(env))
    for e in project(it):
        if type(e) is CallEvent:
            assert frozenset((e.caller, e.callee)) in graph.edges
            assert e.proc in graph.imports[(e.caller, e.callee)]


@pytest.mark.parametrize("seed", range(40))
def test_generated_programs_check_and_finish(seed):
    p, io = gen_program_case(seed)
    check_interfaces(p)
    _, out = run(p, io)
    assert type(out) in (Final, Stuck)


def test_program_generation_is_deterministic():
    cfg = GenConfig(seed=9)
    env, _ = gen_environment(cfg)
    assert gen_program(env, cfg) == gen_program(env, cfg)
    assert gen_program_case(9) == gen_program_case(9)


def test_minimal_program_passes_compiler_properties():
    p = parse_program(MINIMAL)
    assert prop_fcc(p, IoScript())
    assert prop_bcc(p, IoScript())


@pytest.mark.parametrize("seed", range(15))
def test_backtranslation_properties_on_generated_pairs(seed):
    env, it = gen_pair(seed, max_events=200)
    assert check_backtranslation(env, it)
    assert prop_bt_compiles(env, it)


@pytest.mark.parametrize("seed", range(8))
def test_recomposition_and_blame_on_generated_pairs(seed):
    case = corpus.make_case("recomposition", seed)
    assert crosses(case.it, case.ks)
    assert prop_recomposition(case.env, case.it, None, case.ks)
    v = prop_blame(case.env, case.it, case.ks, rng=random.Random(seed))
    assert v and not v.vacuous


def test_adversarial_suite_size_and_verdicts():
    verdicts = adversarial.run_all()
    assert len(verdicts) >= 10
    assert all(verdicts), [v.detail for v in verdicts if not v]


def test_honest_attacker_completes():
    _, _, out = trun(adversarial.honest_program())
    assert type(out) is Final


def test_trial_seeds_are_stable_and_distinct():
    assert corpus.trial_seed("fcc", 1, 0) == corpus.trial_seed("fcc", 1, 0)
    assert len({corpus.trial_seed("fcc", 1, i) for i in range(100)}) == 100
    assert corpus.trial_seed("fcc", 1, 0) != corpus.trial_seed("bcc", 1, 0)


def test_jobs_reads_environment(monkeypatch):
    monkeypatch.setenv("SECOMP_KIT_JOBS", "3")
    assert corpus.jobs() == 3
    monkeypatch.setenv("SECOMP_KIT_JOBS", "0")
    assert corpus.jobs() == 1


def test_fuzz_is_deterministic_and_writes_the_corpus(tmp_path):
    a = corpus.fuzz("fcc", 1, 3, tmp_path / "a", n_jobs=1)
    b = corpus.fuzz("fcc", 1, 3, tmp_path / "b", n_jobs=2)
    assert a == b and all(line.split()[2] == "PASS" for line in a)
    dirs = [d for d in (tmp_path / "a" / "fcc").iterdir() if d.is_dir()]
    assert len(dirs) == 3
    names = {f.name for f in dirs[0].iterdir()}
    assert {"program.sexp", "target.sexp", "trace.txt", "itrace.txt", "io.txt",
            corpus.VERDICT_FILE} <= names
    assert (tmp_path / "a" / "fcc" / "verdicts.txt").read_text() == "".join(x + "\n" for x in a)


def test_failures_are_shrunk_into_the_shrink_directory(tmp_path, monkeypatch):
    real = corpus.check_case

    def fake(prop, case):
        # pretend any trace with a call fails, so shrinking keeps only a short prefix
        if prop == "backtranslation" and any(type(e) is CallEvent for e in project(case.it)):
            return corpus.Verdict(prop, False, "synthetic failure")
        return real(prop, case)

    monkeypatch.setattr(corpus, "check_case", fake)
    seed = next(s for s in range(50)
                if any(type(e) is CallEvent for e in project(gen_pair(corpus.trial_seed("backtranslation", s, 0))[1])))
    lines = corpus.fuzz("backtranslation", seed, 1, tmp_path, n_jobs=1)
    assert lines[0].split()[2] == "FAIL"
    ts = corpus.trial_seed("backtranslation", seed, 0)
    full = (tmp_path / "backtranslation" / str(ts) / "itrace.txt").read_text()
    small = (tmp_path / "shrink" / "backtranslation" / str(ts) / "itrace.txt").read_text()
    assert len(small) < len(full)
    assert small.count(" CALL ") >= 1


def test_shrink_program_statements(monkeypatch):
    p, io = gen_program_case(3)
    case = corpus.ProgramCase(p, io)
    monkeypatch.setattr(corpus, "check_case", lambda prop, c: corpus.Verdict(prop, False, "always"))
    small = corpus.shrink("fcc", case, budget=400)
    assert _stmt_count(small.program) < _stmt_count(p)


def _stmt_count(p) -> int:
    return sum(len(b.body.stmts) for c in p.compartments.values() for b in c.procs.values()
               if type(b.body) is Seq)
