"""End-to-end acceptance campaign.

Each test checks one criterion at full scale and prints a single
`CRITERION <n> PASS|FAIL ...` line. The campaign is seeded, so reruns are
byte-identical.
"""
from __future__ import annotations

import random
import statistics
import time

import pytest

from secomp_kit.backtrans import back_translate_all
from secomp_kit.compile import compile_program
from secomp_kit.harness import adversarial, corpus
from secomp_kit.harness.gen import gen_pair, gen_program_case, inject_ub
from secomp_kit.harness.props import (
    check_backtranslation, prop_bcc, prop_blame, prop_fcc, prop_recomposition,
)
from secomp_kit.memory import audit_violations
from secomp_kit.sem_source import run
from secomp_kit.sem_target import trun
from secomp_kit.trace import (
    UndefEvent, project, serialize_itrace, serialize_trace, well_bracketed,
)
from secomp_kit.backtrans import env_of_target

N_PAIRS = 1000
N_FCC = 500
N_BCC = 200
N_RECOMP = 300
N_BLAME = 300
BT_BUDGET_S = 600


def report(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'} {detail}")


@pytest.fixture(scope="module")
def pairs():
    return [gen_pair(corpus.trial_seed("campaign", 0, i)) for i in range(N_PAIRS)]


def test_criterion_1_back_translation_compiles(pairs, capsys):
    lengths = [len(it) for _, it in pairs]
    t0 = time.perf_counter()
    failures = []
    for i, (env, it) in enumerate(pairs):
        try:
            compile_program(back_translate_all(env, it))
        except Exception as e:
            failures.append((i, f"{type(e).__name__}: {e}"))
    elapsed = time.perf_counter() - t0
    mean, top = statistics.mean(lengths), max(lengths)
    ok = mean >= 300 and top >= 880 and not failures and elapsed <= BT_BUDGET_S
    report(capsys, 1, ok, f"{N_PAIRS} pairs, mean {mean:.1f} max {top} events, "
                          f"{N_PAIRS - len(failures)}/{N_PAIRS} compiled in {elapsed:.1f}s")
    assert mean >= 300 and top >= 880
    assert not failures, failures[:3]
    assert elapsed <= BT_BUDGET_S


def test_criterion_2_back_translation_reproduces_traces(pairs, capsys):
    bad = []
    for i, (env, it) in enumerate(pairs):
        v = check_backtranslation(env, it)
        if not v.ok:
            bad.append((i, v.detail))
    report(capsys, 2, not bad, f"{N_PAIRS - len(bad)}/{N_PAIRS} byte-identical, Undef-free replays")
    assert not bad, bad[:3]


def test_criterion_3_compiler_correctness(capsys):
    fcc_bad, bcc_bad, fcc_vacuous, bcc_ub = [], [], 0, 0
    for i in range(N_FCC):
        p, io = gen_program_case(corpus.trial_seed("fcc", 0, i))
        v = prop_fcc(p, io)
        fcc_vacuous += v.vacuous
        if not v.ok or v.vacuous:
            fcc_bad.append((i, v.detail))
    for i in range(N_BCC):
        seed = corpus.trial_seed("bcc", 0, i)
        p, io = gen_program_case(seed)
        p, _ = inject_ub(p, random.Random(seed))
        v = prop_bcc(p, io)
        bcc_ub += "source UB" in v.detail
        if not v.ok:
            bcc_bad.append((i, v.detail))
    ok = not fcc_bad and not bcc_bad
    report(capsys, 3, ok, f"FCC {N_FCC - len(fcc_bad)}/{N_FCC} (vacuous {fcc_vacuous}), "
                          f"BCC {N_BCC - len(bcc_bad)}/{N_BCC} ({bcc_ub} runs reached the injected UB)")
    assert not fcc_bad, fcc_bad[:3]
    assert not bcc_bad, bcc_bad[:3]


def test_criterion_4_recomposition(capsys):
    bad = []
    for i in range(N_RECOMP):
        case = corpus.make_case("recomposition", corpus.trial_seed("recomposition", 0, i))
        if not case.ks:
            bad.append((i, "no crossing split"))
            continue
        v = corpus.check_case("recomposition", case)
        if not v.ok or v.vacuous:
            bad.append((i, v.detail))
    report(capsys, 4, not bad, f"{N_RECOMP - len(bad)}/{N_RECOMP} recomposed runs reproduce the trace")
    assert not bad, bad[:3]


def test_criterion_5_blame(capsys):
    bad, undef = [], 0
    for i in range(N_BLAME):
        case = corpus.make_case("blame", corpus.trial_seed("blame", 0, i))
        if not case.ks:
            bad.append((i, "no crossing split"))
            continue
        v = prop_blame(case.env, case.it, case.ks, rng=random.Random(case.rng_seed))
        undef += "Undef in" in v.detail
        if not v.ok or v.vacuous:
            bad.append((i, v.detail))
    report(capsys, 5, not bad, f"{N_BLAME - len(bad)}/{N_BLAME} blame the program side "
                               f"({undef} ended in Undef)")
    assert not bad, bad[:3]


def test_criterion_6_adversarial_suite(capsys):
    verdicts = adversarial.run_all()
    passed = sum(v.ok for v in verdicts)
    ok = len(verdicts) >= 10 and passed == len(verdicts)
    report(capsys, 6, ok, f"{passed}/{len(verdicts)} attackers stuck and blamed")
    assert len(verdicts) >= 10
    assert passed == len(verdicts), [v.detail for v in verdicts if not v.ok]


def test_criterion_7_structural_invariants(pairs, capsys):
    problems = []
    runs = 0
    for i in range(200):
        seed = corpus.trial_seed("structure", 0, i)
        p, io = gen_program_case(seed)
        if i % 2:
            p, _ = inject_ub(p, random.Random(seed))
        tp = compile_program(p)
        slog, tlog = [], []
        ms, _ = run(p, io, audit=slog)
        mt, it, out = trun(tp, io, audit=tlog)
        runs += 2
        for name, m, log in (("source", ms, slog), ("target", mt, tlog)):
            if audit_violations(log):
                problems.append((i, f"{name} audit {audit_violations(log)[0]}"))
            clean = m[:-1] if m and type(m[-1]) is UndefEvent else m
            if not all(well_bracketed(clean[:k]) for k in range(len(clean) + 1)):
                problems.append((i, f"{name} trace not well bracketed"))
        clean = mt[:-1] if mt and type(mt[-1]) is UndefEvent else mt
        if project(it) != clean:
            problems.append((i, "project(informative) differs from the plain trace"))
        ms2, _ = run(p, io)
        mt2, it2, _ = trun(tp, io)
        genv = env_of_target(tp).genv()
        if (serialize_trace(ms2) != serialize_trace(ms) or serialize_trace(mt2) != serialize_trace(mt)
                or serialize_itrace(it2, genv) != serialize_itrace(it, genv)):
            problems.append((i, "repeated run differs"))
    # replays of the back-translation campaign
    for env, it in pairs[:100]:
        log: list = []
        m, _ = run(back_translate_all(env, it), max_events=len(it), audit=log)
        runs += 1
        if audit_violations(log):
            problems.append(("bt", "audit"))
    # every property campaign is a deterministic function of (property, seed, trials)
    for prop in corpus.PROPERTIES:
        if corpus.fuzz(prop, 7, 3, n_jobs=1) != corpus.fuzz(prop, 7, 3, n_jobs=1):
            problems.append((prop, "fuzz verdicts differ between repeats"))
    report(capsys, 7, not problems, f"{runs} audited runs, {len(corpus.PROPERTIES)} campaigns repeated, "
                                    f"{len(problems)} problems")
    assert not problems, problems[:3]
