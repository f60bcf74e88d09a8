"""Seeded fuzz campaigns over the properties, with artifacts and shrinking.

Trial i of a campaign (prop, seed) uses a seed derived by hashing, so any
trial can be replayed alone. Trials run in a process pool bounded by the
SECOMP_KIT_JOBS environment variable; results are merged in trial order.
"""
from __future__ import annotations

import hashlib
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from ..backtrans import attribute, back_translate_all, bt_init, check_wf, env_of_target
from ..compile import CompileError, compile_program
from ..lang import LangError, Program, ProcBody, Seq, check_interfaces, program_text
from ..sem_target import trun
from ..target import target_text
from ..trace import (
    IoScript, io_for_trace, project, serialize_io, serialize_itrace, serialize_trace,
)
from . import adversarial
from .gen import gen_pair, gen_program_case, inject_ub
from .props import (
    Verdict, VariantTraceMismatch, check_backtranslation, crosses, prop_bcc,
    prop_blame, prop_bt_compiles, prop_fcc, prop_recomposition,
)

PROPERTIES = ("fcc", "bcc", "backtranslation", "bt-compiles", "recomposition", "blame", "adversarial")
VERDICT_FILE = "verdict.json-line"
SHRINK_BUDGET = 200


def trial_seed(prop: str, seed: int, i: int) -> int:
    h = hashlib.sha256(f"{prop}:{seed}:{i}".encode()).digest()
    return int.from_bytes(h[:6], "big")


def jobs() -> int:
    raw = os.environ.get("SECOMP_KIT_JOBS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


# ---------------------------------------------------------------- cases

@dataclass
class ProgramCase:
    program: Program
    io: IoScript


@dataclass
class PairCase:
    env: object
    it: list
    ks: frozenset = frozenset()
    rng_seed: int = 0
    io: IoScript | None = None


@dataclass
class AttackCase:
    attack: adversarial.Attack


def choose_split(env, it, rng: random.Random, program_acts: bool = False):
    """A random proper subset of compartments crossed by at least one call.

    With `program_acts`, the compartments outside the subset must also
    perform at least one event, so that UB injected there is reachable.
    """
    comps = sorted(env.interface)
    if len(comps) < 2:
        return None
    actors = set(attribute(it, bt_init(env))) if program_acts else set(comps)
    for _ in range(32):
        ks = frozenset(rng.sample(comps, rng.randint(1, len(comps) - 1)))
        if crosses(it, ks) and actors - ks:
            return ks
    return None


def make_case(prop: str, seed: int):
    rng = random.Random(seed)
    if prop == "fcc":
        p, io = gen_program_case(seed)
        return ProgramCase(p, io)
    if prop == "bcc":
        p, io = gen_program_case(seed)
        p, _ = inject_ub(p, rng)
        return ProgramCase(p, io)
    if prop in ("backtranslation", "bt-compiles"):
        env, it = gen_pair(seed)
        return PairCase(env, it)
    if prop in ("recomposition", "blame"):
        # regenerate until the trace crosses some context/program split
        for attempt in range(64):
            env, it = gen_pair(trial_seed(prop, seed, -attempt) if attempt else seed)
            ks = choose_split(env, it, rng, program_acts=prop == "blame")
            if ks is not None:
                return PairCase(env, it, ks, rng.randrange(1 << 30))
        return PairCase(env, it, frozenset(), 0)
    if prop == "adversarial":
        return AttackCase(adversarial.ATTACKS[seed % len(adversarial.ATTACKS)])
    raise ValueError(f"unknown property {prop}")


def check_case(prop: str, case) -> Verdict:
    if prop == "fcc":
        return prop_fcc(case.program, case.io)
    if prop == "bcc":
        return prop_bcc(case.program, case.io)
    if prop == "backtranslation":
        return check_backtranslation(case.env, case.it, case.io)
    if prop == "bt-compiles":
        return prop_bt_compiles(case.env, case.it)
    if prop == "recomposition":
        if not case.ks:
            return Verdict(prop, True, "no crossing split", vacuous=True)
        try:
            return prop_recomposition(case.env, case.it, case.io, case.ks)
        except VariantTraceMismatch as e:
            return Verdict(prop, False, f"variant mismatch: {e}")
    if prop == "blame":
        if not case.ks:
            return Verdict(prop, True, "no crossing split", vacuous=True)
        return prop_blame(case.env, case.it, case.ks, case.io, rng=random.Random(case.rng_seed))
    if prop == "adversarial":
        v = adversarial.run_attack(case.attack)
        return Verdict(prop, v.ok, f"{case.attack.name}: {v.detail}")
    raise ValueError(f"unknown property {prop}")


def run_trial(prop: str, seed: int) -> Verdict:
    return check_case(prop, make_case(prop, seed))


# ---------------------------------------------------------------- artifacts

def artifacts(prop: str, seed: int, case, verdict: Verdict) -> dict[str, str]:
    files: dict[str, str] = {VERDICT_FILE: verdict.line(seed) + "\n"}
    try:
        if type(case) is ProgramCase:
            p, io = case.program, case.io
        elif type(case) is PairCase:
            p = back_translate_all(case.env, case.it)
            io = case.io if case.io is not None else io_for_trace(project(case.it))
        else:
            p, io = None, IoScript()
        if p is not None:
            files["program.sexp"] = program_text(p)
            tp = compile_program(p, check=False)
        else:
            files["program.sexp"] = adversarial.VICTIM_SOURCE.lstrip("\n")
            tp = adversarial.attack_program(case.attack)
        files["target.sexp"] = target_text(tp)
        files["io.txt"] = serialize_io(io)
        m, it, _ = trun(tp, io, 50_000_000)
        genv = env_of_target(tp).genv()
        files["trace.txt"] = serialize_trace(m)
        files["itrace.txt"] = serialize_itrace(it, genv)
    except (LangError, CompileError) as e:
        files["error.txt"] = f"{type(e).__name__}: {e}\n"
    return files


def write_dir(d: Path, files: dict[str, str]) -> None:
    d.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (d / name).write_text(text)


# ---------------------------------------------------------------- shrinking

def _prefix_candidates(case: PairCase):
    n = len(case.it)
    sizes = []
    k = n // 2
    while k > 0:
        sizes.append(n - k)
        k //= 2
    for size in sizes:
        yield PairCase(case.env, case.it[:size], case.ks, case.rng_seed, case.io)


def _delta_candidates(case: PairCase):
    for i, e in enumerate(case.it):
        if e.deltas:
            it = list(case.it)
            it[i] = replace(e, deltas=())
            if check_wf(it, bt_init(case.env)):
                yield PairCase(case.env, it, case.ks, case.rng_seed, case.io)


def _stmt_candidates(case: ProgramCase):
    p = case.program
    for k in sorted(p.compartments):
        c = p.compartments[k]
        for name in sorted(c.procs):
            pb = c.procs[name]
            body = pb.body
            if type(body) is not Seq:
                continue
            for i in range(len(body.stmts)):
                stmts = body.stmts[:i] + body.stmts[i + 1:]
                procs = dict(c.procs)
                procs[name] = ProcBody(pb.params, pb.locals, Seq(stmts))
                comps = dict(p.compartments)
                comps[k] = replace(c, procs=procs)
                q = Program(comps, p.main)
                try:
                    check_interfaces(q)
                except LangError:
                    continue
                yield ProgramCase(q, case.io)


def shrink(prop: str, case, budget: int = SHRINK_BUDGET):
    """Greedy minimisation: fewer events first, then a smaller program."""
    def fails(c) -> bool:
        try:
            return not check_case(prop, c).ok
        except Exception:
            return False

    passes = []
    if type(case) is PairCase:
        passes = [_prefix_candidates, _delta_candidates]
    elif type(case) is ProgramCase:
        passes = [_stmt_candidates]
    for make in passes:
        progress = True
        while progress and budget > 0:
            progress = False
            for cand in make(case):
                budget -= 1
                if fails(cand):
                    case = cand
                    progress = True
                    break
                if budget <= 0:
                    break
    return case


# ---------------------------------------------------------------- campaigns

def _worker(args):
    prop, seed, i, out = args
    # the adversarial suite is finite, so trials walk through it in order
    ts = i if prop == "adversarial" else trial_seed(prop, seed, i)
    case = make_case(prop, ts)
    v = check_case(prop, case)
    if out is not None:
        root = Path(out)
        write_dir(root / prop / str(ts), artifacts(prop, ts, case, v))
        if not v.ok:
            small = shrink(prop, case)
            sv = check_case(prop, small)
            write_dir(root / "shrink" / prop / str(ts), artifacts(prop, ts, small, sv))
    return v.line(ts)


def fuzz(prop: str, seed: int, trials: int, out: str | os.PathLike | None = None,
         n_jobs: int | None = None) -> list[str]:
    """Run a campaign; returns one verdict line per trial, in trial order."""
    if prop not in PROPERTIES:
        raise ValueError(f"unknown property {prop}")
    n_jobs = n_jobs or jobs()
    work = [(prop, seed, i, None if out is None else str(out)) for i in range(trials)]
    if n_jobs == 1 or trials <= 1:
        lines = [_worker(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            lines = list(ex.map(_worker, work, chunksize=max(1, trials // (4 * n_jobs))))
    if out is not None:
        d = Path(out) / prop
        d.mkdir(parents=True, exist_ok=True)
        (d / "verdicts.txt").write_text("".join(line + "\n" for line in lines))
    return lines
