"""Small-step, trace-producing interpreter for source programs.

A `SourceState` is a single-owner mutable object: `step` advances it in
place and returns it alongside the emitted event and the updated IO
script. Use `clone()` to checkpoint a state.
"""
from __future__ import annotations

from .lang import (
    ArithUB, Assign, BinOp, Call, Const, GLoad, GlobalRef, GStore, If, Local,
    NoMain, Program, Return, Seq, Skip, UnOp, While, check_main, eval_binop,
    eval_unop, signature_of,
)
from .memory import GlobalEnv, MemError, Memory
from .trace import (
    READ_CAP, CallEvent, EventLimit, Final, IoScript, OutOfFuel, ReturnEvent,
    Stuck, SyscallEvent, UndefEvent,
)

REGULAR, CALLING, RETURNING, FINAL, STUCK = "regular", "call", "return", "final", "stuck"


class _UB(Exception):
    pass


class Frame:
    __slots__ = ("comp", "proc", "locals", "kont", "dest", "cross")

    def __init__(self, comp, proc, locals_, kont, dest, cross):
        self.comp = comp
        self.proc = proc
        self.locals = locals_
        self.kont = kont
        self.dest = dest
        self.cross = cross

    def clone(self) -> "Frame":
        return Frame(self.comp, self.proc, dict(self.locals), list(self.kont), self.dest, self.cross)


class _Context:
    """Immutable per-program tables shared by every state of one run."""

    def __init__(self, p: Program):
        self.program = p
        self.genv = GlobalEnv({k: c.globals for k, c in p.compartments.items()})
        self.sigs = {}
        for k, c in p.compartments.items():
            for name in c.procs:
                self.sigs[(k, name)] = signature_of(c, name)


class SourceState:
    __slots__ = ("ctx", "kind", "comp", "proc", "kont", "locals", "mem", "stack",
                 "callee", "args", "ret_val", "ret_from", "value", "offender", "reason")

    def clone(self) -> "SourceState":
        s = SourceState.__new__(SourceState)
        for name in self.__slots__:
            setattr(s, name, getattr(self, name))
        s.kont = list(self.kont) if self.kont is not None else None
        s.locals = dict(self.locals) if self.locals is not None else None
        s.mem = self.mem.copy()
        s.stack = [f.clone() for f in self.stack]
        return s

    def outcome(self):
        if self.kind == FINAL:
            return Final(self.value)
        if self.kind == STUCK:
            return Stuck(self.offender, self.reason)
        return None


def init(p: Program, globals_image: dict | None = None, audit: list | None = None) -> SourceState:
    """Initial state at main. `globals_image` optionally maps (comp, global) to slot values."""
    check_main(p)
    ctx = _Context(p)
    mem = Memory(audit)
    ctx.genv.populate(mem)
    for (comp, g), vals in (globals_image or {}).items():
        bid = ctx.genv.block(comp, g)
        if bid is None:
            raise NoMain(f"globals image names unknown global {comp}.{g}")
        for i, v in enumerate(vals):
            mem.store(comp, bid, i, v)
    comp, proc = p.main
    s = SourceState.__new__(SourceState)
    s.ctx = ctx
    s.kind = CALLING
    s.comp = comp
    s.proc = proc
    s.kont = None
    s.locals = None
    s.mem = mem
    s.stack = []
    s.callee = (comp, proc)
    s.args = ()
    s.ret_val = None
    s.ret_from = None
    s.value = None
    s.offender = None
    s.reason = ""
    _enter(s)
    return s


def _enter(s: SourceState) -> None:
    comp, proc = s.callee
    body = s.ctx.program.compartments[comp].procs[proc]
    loc = dict(zip(body.params, s.args))
    for v in body.locals:
        loc[v] = 0
    s.kind = REGULAR
    s.comp = comp
    s.proc = proc
    s.locals = loc
    s.kont = [body.body]


def _stuck(s: SourceState, comp: str, reason: str) -> None:
    s.kind = STUCK
    s.offender = comp
    s.reason = reason


def _eval(e, s: SourceState):
    t = type(e)
    if t is Const:
        return e.value
    if t is Local:
        return s.locals[e.name]
    if t is BinOp:
        return eval_binop(e.op, _eval(e.left, s), _eval(e.right, s))
    if t is GLoad:
        off = _eval(e.off, s)
        bid = s.ctx.genv.by_name[(s.comp, e.glob)]
        v = s.mem.load(s.comp, bid, off)
        if type(v) is not int:
            raise _UB("non-scalar global")
        return v
    if t is UnOp:
        return eval_unop(e.op, _eval(e.arg, s))
    raise _UB(f"cannot evaluate {e!r}")


def step(s: SourceState, io: IoScript):
    """Advance one step. Returns (state, event or None, io)."""
    kind = s.kind
    if kind == REGULAR:
        try:
            return _step_regular(s, io)
        except (ArithUB, MemError, _UB) as exc:
            _stuck(s, s.comp, str(exc))
            return s, UndefEvent(s.comp), io
    if kind == CALLING:
        _enter(s)
        return s, None, io
    if kind == RETURNING:
        return _step_return(s, io)
    raise ValueError(f"cannot step a {kind} state")


def _step_regular(s: SourceState, io: IoScript):
    kont = s.kont
    if not kont:
        if s.ctx.sigs[(s.comp, s.proc)].returns_value:
            raise _UB("fell off the end of a value-returning procedure")
        s.kind = RETURNING
        s.ret_val = None
        s.ret_from = s.comp
        return s, None, io
    st = kont.pop()
    t = type(st)
    if t is If:
        kont.append(st.then if _eval(st.cond, s) != 0 else st.els)
    elif t is Seq:
        kont.extend(reversed(st.stmts))
    elif t is GStore:
        off = _eval(st.off, s)
        val = _eval(st.val, s)
        s.mem.store(s.comp, s.ctx.genv.by_name[(s.comp, st.glob)], off, val)
    elif t is While:
        if _eval(st.cond, s) != 0:
            kont.append(st)
            kont.append(st.body)
    elif t is Assign:
        s.locals[st.name] = _eval(st.expr, s)
    elif t is Call:
        return _step_call(s, st, io)
    elif t is Return:
        s.kind = RETURNING
        s.ret_val = None if st.expr is None else _eval(st.expr, s)
        s.ret_from = s.comp
    elif t is Skip:
        pass
    else:
        raise _UB(f"unknown statement {st!r}")
    return s, None, io


def _step_call(s: SourceState, st: Call, io: IoScript):
    tgt = st.target
    if tgt.is_sys:
        return _syscall(s, st, io)
    args = tuple(_eval(a, s) for a in st.args)
    comp = s.comp
    prog = s.ctx.program
    if tgt.comp is None or tgt.comp == comp:
        callee = (comp, tgt.proc)
        sig = s.ctx.sigs.get(callee)
        if sig is None or sig.param_count != len(args):
            raise _UB(f"bad internal call to {tgt.proc}")
        cross = False
        event = None
    else:
        callee = (tgt.comp, tgt.proc)
        target = prog.compartments.get(tgt.comp)
        sig = target.exports.get(tgt.proc) if target is not None else None
        if sig is None:
            raise _UB(f"{tgt} is not exported")
        if prog.compartments[comp].imports.get(callee) != sig:
            raise _UB(f"{tgt} is not imported by {comp}")
        if sig.param_count != len(args) or any(type(a) is not int for a in args):
            raise _UB(f"bad arguments for {tgt}")
        cross = True
        event = CallEvent(comp, tgt.comp, tgt.proc, args)
    s.stack.append(Frame(comp, s.proc, s.locals, s.kont, st.dest, cross))
    s.kind = CALLING
    s.callee = callee
    s.args = args
    s.kont = None
    s.locals = None
    return s, event, io


def _syscall(s: SourceState, st: Call, io: IoScript):
    comp = s.comp
    name = st.target.proc
    decl = s.ctx.program.compartments[comp]
    if name not in decl.syscalls:
        raise _UB(f"{comp} may not use {name}")
    buf = st.args[0]
    if type(buf) is not GlobalRef:
        raise _UB("syscall buffer must name a global")
    g = decl.global_decl(buf.name)
    if g is None or not g.public:
        raise _UB("syscall buffer must be a public global")
    n = _eval(st.args[1], s)
    if not 0 <= n <= g.size:
        raise _UB("syscall count outside the buffer")
    bid = s.ctx.genv.by_name[(comp, g.name)]
    mem = s.mem
    if name == "read":
        if n > READ_CAP:
            raise _UB("read count above cap")
        chunk, io = io.next_read()
        data = tuple(chunk[:n])
        for i, b in enumerate(data):
            mem.store(comp, bid, i, b)
        ret = len(data)
        event = SyscallEvent(comp, "read", (n,), data, ret, ())
    else:
        vals = [mem.load(comp, bid, i) for i in range(n)]
        if any(type(v) is not int for v in vals):
            raise _UB("write of a non-scalar slot")
        ack, io = io.next_ack()
        ret = min(max(ack, 0), n)
        event = SyscallEvent(comp, "write", (n,), (), ret, tuple(v & 0xFF for v in vals))
    if st.dest is not None:
        s.locals[st.dest] = ret
    return s, event, io


def _step_return(s: SourceState, io: IoScript):
    val = s.ret_val
    if not s.stack:
        if type(val) is not int:
            _stuck(s, s.ret_from, "main returned no value")
            return s, UndefEvent(s.ret_from), io
        s.kind = FINAL
        s.value = val
        return s, None, io
    fr = s.stack.pop()
    event = None
    if fr.cross:
        if val is not None and type(val) is not int:
            _stuck(s, s.ret_from, "non-scalar return value")
            return s, UndefEvent(s.ret_from), io
        event = ReturnEvent(s.ret_from, fr.comp, val)
    s.kind = REGULAR
    s.comp = fr.comp
    s.proc = fr.proc
    s.locals = fr.locals
    s.kont = fr.kont
    if fr.dest is not None:
        if val is None:
            _stuck(s, fr.comp, "used the result of a void call")
            return s, UndefEvent(fr.comp), io
        s.locals[fr.dest] = val
    return s, event, io


def run(p: Program, io: IoScript = IoScript(), fuel: int = 10_000_000,
        max_events: int | None = None, audit: list | None = None, globals_image=None):
    """Run `p` and return (trace, outcome). Undef(k) ends the trace iff the run got stuck in k."""
    trace: list = []
    if fuel <= 0:
        return trace, OutOfFuel()
    s = init(p, globals_image, audit)
    if max_events is not None and max_events <= 0:
        return trace, EventLimit()
    while fuel > 0:
        kind = s.kind
        if kind == FINAL or kind == STUCK:
            return trace, s.outcome()
        fuel -= 1
        s, ev, io = step(s, io)
        if ev is not None:
            trace.append(ev)
            if s.kind != STUCK and max_events is not None and len(trace) >= max_events:
                return trace, EventLimit()
    if s.kind == FINAL or s.kind == STUCK:
        return trace, s.outcome()
    return trace, OutOfFuel()
