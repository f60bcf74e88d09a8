"""Executable secure-compilation properties.

Each `prop_*` function returns a `Verdict`. A verdict is vacuous when the
property's premise does not hold for the given input (for instance the
source run did not finish); vacuous verdicts count as passes.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, replace

from ..backtrans import (
    TraceEnv, back_translate_all, bt_event, bt_init, check_wf, counter_name,
    dispatcher, env_of_target, events_by_compartment,
)
from ..compile import CompileError, compile_program
from ..lang import (
    BinOp, Call, CompartmentDecl, Const, GlobalDecl, GLoad, GStore, Local,
    ProcBody, Program, Return, Seq, Target, While, Assign, check_interfaces,
)
from ..memory import audit_violations
from ..sem_source import run
from ..sem_target import trun
from ..target import target_link, target_split
from ..trace import (
    CallEvent, Final, IoScript, UndefEvent, blame_rel,
    io_for_trace, prefix_rel, project, serialize_trace, well_bracketed,
)

SOURCE_FUEL = 20_000_000
TARGET_FUEL = 400_000_000


@dataclass(frozen=True)
class Verdict:
    prop: str
    ok: bool
    detail: str = ""
    vacuous: bool = False

    def __bool__(self) -> bool:
        return self.ok

    def line(self, seed) -> str:
        status = "PASS" if self.ok else "FAIL"
        detail = self.detail.replace("\n", " ")
        return f"{self.prop} {seed} {status} {detail}".rstrip()


class VariantTraceMismatch(Exception):
    """A recomposition variant did not reproduce the shared trace."""


def _undef_free(m) -> bool:
    return not any(type(e) is UndefEvent for e in m)


def _structural(m, it, audit) -> str:
    """Problems with the invariants every recorded target run must satisfy."""
    clean = m[:-1] if m and type(m[-1]) is UndefEvent else m
    if project(it) != list(clean):
        return "informative trace does not project to the plain trace"
    if not well_bracketed(clean):
        return "call/return events are not well bracketed"
    if audit is not None and audit_violations(audit):
        return f"cross-compartment memory access {audit_violations(audit)[0]}"
    return ""


# ---------------------------------------------------------------- compiler correctness

def prop_fcc(p: Program, io: IoScript, fuel: int = SOURCE_FUEL, audit: bool = True) -> Verdict:
    m, out = run(p, io, fuel)
    if not _undef_free(m) or type(out) is not Final:
        return Verdict("fcc", True, f"premise unmet ({type(out).__name__})", vacuous=True)
    try:
        tp = compile_program(p)
    except CompileError as e:
        return Verdict("fcc", True, f"compilation undefined: {e}", vacuous=True)
    log = [] if audit else None
    mt, it, tout = trun(tp, io, fuel * 40, audit=log)
    problem = _structural(mt, it, log)
    if problem:
        return Verdict("fcc", False, problem)
    if mt != m:
        return Verdict("fcc", False, f"target trace differs after {_common(m, mt)} events ({type(tout).__name__})")
    if tout != out:
        return Verdict("fcc", False, f"exit {tout} vs source {out}")
    return Verdict("fcc", True, f"{len(m)} events")


def prop_bcc(p: Program, io: IoScript, fuel: int = SOURCE_FUEL, audit: bool = True) -> Verdict:
    try:
        tp = compile_program(p)
    except CompileError as e:
        return Verdict("bcc", True, f"compilation undefined: {e}", vacuous=True)
    log = [] if audit else None
    mt, it, tout = trun(tp, io, fuel * 40, audit=log)
    problem = _structural(mt, it, log)
    if problem:
        return Verdict("bcc", False, problem)
    ms, sout = run(p, io, fuel)
    if type(tout).__name__ == "OutOfFuel" or type(sout).__name__ == "OutOfFuel":
        return Verdict("bcc", True, "out of fuel", vacuous=True)
    if not prefix_rel(ms, mt):
        return Verdict("bcc", False, f"source trace is not a prefix of the target trace "
                                     f"(diverge at {_common(ms, mt)})")
    tail = f"UB {ms[-1].comp}" if ms and type(ms[-1]) is UndefEvent else "no UB"
    return Verdict("bcc", True, f"{len(mt)} target events, source {tail}")


def _common(a, b) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


# ---------------------------------------------------------------- back-translation

def check_backtranslation(env: TraceEnv, it, io: IoScript | None = None,
                          fuel: int = SOURCE_FUEL) -> Verdict:
    """The linked back-translation reproduces project(it) exactly, without UB."""
    m = project(it)
    io = io if io is not None else io_for_trace(m)
    report = check_wf(it, bt_init(env))
    if not report:
        return Verdict("backtranslation", False, f"not well formed at {report.failed_at}: {report.error}")
    p = back_translate_all(env, it)
    got, out = run(p, io, fuel, max_events=len(m))
    if not _undef_free(got):
        return Verdict("backtranslation", False, f"source run hit {serialize_trace(got[-1:]).strip()}")
    if serialize_trace(got) != serialize_trace(m):
        return Verdict("backtranslation", False,
                       f"diverges after {_common(got, m)} of {len(m)} events ({type(out).__name__})")
    return Verdict("backtranslation", True, f"{len(m)} events")


def prop_backtranslation(tp, io: IoScript, fuel: int = TARGET_FUEL) -> Verdict:
    log: list = []
    m, it, out = trun(tp, io, fuel, audit=log)
    problem = _structural(m, it, log)
    if problem:
        return Verdict("backtranslation", False, problem)
    v = check_backtranslation(env_of_target(tp), it, io)
    return replace(v, detail=f"{v.detail}; target {type(out).__name__}")


def prop_bt_compiles(env: TraceEnv, it) -> Verdict:
    try:
        p = back_translate_all(env, it)
        check_interfaces(p)
        tp = compile_program(p, check=False)
    except CompileError as e:
        return Verdict("bt-compiles", False, f"compile failed: {e}")
    except Exception as e:  # any static rejection counts as a failure here
        return Verdict("bt-compiles", False, f"{type(e).__name__}: {e}")
    size = sum(len(code) for c in tp.compartments.values() for code in c.procs.values())
    return Verdict("bt-compiles", True, f"{len(it)} events, {size} instructions")


# ---------------------------------------------------------------- recomposition

PAD_PROC = "__padf"
PAD_LOCAL = "__t"


def fresh_global(base: str, globals_) -> str:
    names = {g.name for g in globals_}
    name, k = base, 0
    while name in names:
        k += 1
        name = f"{base}{k}"
    return name


def _pad_compartment(c: CompartmentDecl, salt: int) -> CompartmentDecl:
    """Add internal-only work to every exported dispatcher of `c`."""
    pad = fresh_global("__pad", c.globals)
    acc, i = "acc", "i"
    loop = While(BinOp("<", Local(i), Const(2 + salt % 3)),
                 Seq((Assign(acc, BinOp("+", BinOp("*", Local(acc), Const(3 + salt)), Local(i))),
                      Assign(i, BinOp("+", Local(i), Const(1))))))
    helper = ProcBody(("x",), (acc, i), Seq((
        Assign(acc, Local("x")), Assign(i, Const(0)), loop,
        GStore(pad, Const(0), Local(acc)), Return(Local(acc)))))
    procs = {}
    for name, pb in c.procs.items():
        if type(pb.body) is While:
            work = Seq((Call(PAD_LOCAL, Target(None, PAD_PROC), (GLoad(pad, Const(0)),)),
                        GStore(pad, Const(1), Local(PAD_LOCAL))))
            procs[name] = ProcBody(pb.params, pb.locals + (PAD_LOCAL,),
                                   While(pb.body.cond, Seq((work, pb.body.body))))
        else:
            procs[name] = pb
    procs[PAD_PROC] = helper
    return replace(c, globals=c.globals + (GlobalDecl(pad, 2, False),), procs=procs)


def padded_variant(p: Program, padded, salt: int = 0) -> Program:
    comps = {k: (_pad_compartment(c, salt) if k in padded else c) for k, c in p.compartments.items()}
    return Program(comps, p.main)


def crosses(it, ks) -> bool:
    ks = set(ks)
    for e in project(it):
        if type(e) is CallEvent and ((e.caller in ks) != (e.callee in ks)):
            return True
    return False


def prop_recomposition(env: TraceEnv, it, io: IoScript | None, split_ks,
                       fuel: int = TARGET_FUEL, salt: int = 0) -> Verdict:
    """Mix the context of one trace-equal run with the program of another.

    W1 and W2 are two different compilations producing the trace of `it`:
    W1 pads the compartments of `split_ks`, W2 pads the rest. The context
    half of W1 linked with the program half of W2 must yield the same trace.
    Raises VariantTraceMismatch if W1 or W2 themselves miss the trace.
    """
    m = project(it)
    io = io if io is not None else io_for_trace(m)
    ks = set(split_ks)
    if not crosses(it, ks):
        return Verdict("recomposition", True, "no context/program crossing", vacuous=True)
    base = back_translate_all(env, it)
    others = set(env.interface) - ks
    w1 = compile_program(padded_variant(base, ks, salt))
    w2 = compile_program(padded_variant(base, others, salt + 1))
    for label, w in (("W1", w1), ("W2", w2)):
        got, _, _ = trun(w, io, fuel, max_events=len(m))
        if got != m:
            raise VariantTraceMismatch(f"{label} diverges after {_common(got, m)} events")
    w3 = target_link(target_split(w1, ks)[0], target_split(w2, ks)[1])
    log: list = []
    got, it3, out = trun(w3, io, fuel, max_events=len(m), audit=log)
    problem = _structural(got, it3, log)
    if problem:
        return Verdict("recomposition", False, problem)
    if got != m:
        return Verdict("recomposition", False,
                       f"recomposed run diverges after {_common(got, m)} of {len(m)} events")
    return Verdict("recomposition", True, f"{len(m)} events, context {sorted(ks)}")


# ---------------------------------------------------------------- blame

def mutate_program_side(env: TraceEnv, it, ks, rng: random.Random):
    """Back-translation whose program side carries one injected UB.

    The UB is placed in front of a randomly chosen dispatcher case of a
    program-side compartment that performs at least one event, so the run
    reaches it after replaying a prefix of the trace. Returns
    (program, mutated compartment, description) or None when no
    program-side compartment performs an event.
    """
    per = events_by_compartment(env, it)
    candidates = [k for k in sorted(set(env.interface) - set(ks)) if per[k]]
    if not candidates:
        return None
    base = back_translate_all(env, it)
    genv = env.genv()
    k = rng.choice(candidates)
    events = per[k]
    c = base.compartments[k]
    ctr = counter_name(tuple(env.globals.get(k, ())))
    kind = rng.choice(("div", "oob"))
    if kind == "div":
        ub = GStore(ctr, Const(0), BinOp("/", Const(1), BinOp("-", Const(2), Const(2))))
    else:
        ub = GStore(ctr, BinOp("+", Const(1), Const(0)), Const(0))
    at = rng.randrange(len(events))
    procs = dict(c.procs)
    for name, sig in c.exports.items():
        codes = [bt_event(k, e, genv, sig.returns_value) for e in events]
        codes[at] = Seq((ub, codes[at]))
        procs[name] = ProcBody(c.procs[name].params, c.procs[name].locals,
                               dispatcher(ctr, codes, sig.returns_value))
    comps = dict(base.compartments)
    comps[k] = replace(c, procs=procs)
    return Program(comps, base.main), k, f"{kind} UB in {k} at case {at}"


def prop_blame(env: TraceEnv, it, split_ks, io: IoScript | None = None,
               fuel: int = SOURCE_FUEL, rng: random.Random | None = None) -> Verdict:
    """Undef in a run of the back-translated context with a faulty program names the program."""
    rng = rng or random.Random(0)
    ks = set(split_ks)
    good = set(env.interface) - ks
    m = project(it)
    io = io if io is not None else io_for_trace(m)
    mutated = mutate_program_side(env, it, ks, rng)
    if mutated is None:
        return Verdict("blame", True, "program side performs no event", vacuous=True)
    p, k, desc = mutated
    got, _ = run(p, io, fuel, max_events=len(m))
    if not prefix_rel(got, m):
        return Verdict("blame", True, f"{desc}: source run not a prefix", vacuous=True)
    if not blame_rel(got, m, good):
        return Verdict("blame", False, f"{desc}: source run blames {got[-1].comp}")
    tgot, _, _ = trun(compile_program(p), io, fuel * 40, max_events=len(m))
    if prefix_rel(tgot, m) and not blame_rel(tgot, m, good):
        return Verdict("blame", False, f"{desc}: compiled run blames {tgot[-1].comp}")
    tail = f"Undef in {got[-1].comp}" if got and type(got[-1]) is UndefEvent else "no Undef"
    return Verdict("blame", True, f"{desc}: {tail} after {len(got)} events")
