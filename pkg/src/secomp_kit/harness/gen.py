"""Random environments, informative traces, programs and IO scripts.

Everything is a deterministic function of the seed carried by `GenConfig`
(or of an explicit `random.Random`).
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from ..backtrans import TraceEnv
from ..lang import (
    BinOp, Call, CompartmentDecl, CompInterface, Const, GlobalDecl, GlobalRef,
    GLoad, GStore, If, Local, ProcBody, Program, Return, Seq, Signature, Skip,
    Target, UnOp, While, Assign, SYS_COMP,
)
from ..trace import (
    CallEvent, DeltaBytes, DeltaStore, ICall, IoScript, IReturn, ISys,
    ReturnEvent, SyscallEvent,
)

MAIN = Signature(0, True)


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    n_compartments: int = 3
    max_procs: int = 3
    max_events: int = 40
    max_deltas_per_event: int = 3
    max_args: int = 4
    max_globals: int = 3
    max_global_size: int = 6
    edge_prob: float = 0.3


@dataclass(frozen=True)
class EnvGraph:
    vertices: tuple
    edges: frozenset           # frozenset of frozenset({u, v})
    exports: dict              # comp -> {proc: Signature}
    imports: dict              # (u, v) -> frozenset of procs u imports from v

    def neighbours(self, u: str) -> list[str]:
        return sorted(v for e in self.edges if u in e for v in e if v != u)


def comp_names(n: int) -> list[str]:
    return [f"C{i}" for i in range(n)]


def _signature(rng: random.Random, max_args: int) -> Signature:
    return Signature(rng.randint(0, max_args), rng.random() < 0.6)


def gen_environment(cfg: GenConfig, rng: random.Random | None = None) -> tuple[TraceEnv, EnvGraph]:
    """Random connected compartment graph and the interface derived from it."""
    rng = rng or random.Random(cfg.seed)
    names = comp_names(cfg.n_compartments)
    edges: set = set()
    for i in range(1, len(names)):
        edges.add(frozenset((names[i], names[rng.randrange(i)])))
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            e = frozenset((names[i], names[j]))
            if e not in edges and rng.random() < cfg.edge_prob:
                edges.add(e)
    exports: dict = {}
    for c in names:
        procs = {f"f{k}": _signature(rng, cfg.max_args) for k in range(rng.randint(1, cfg.max_procs))}
        exports[c] = procs
    imports: dict = {}
    for e in sorted(edges, key=sorted):
        u, v = sorted(e)
        for a, b in ((u, v), (v, u)):
            pool = sorted(exports[b])
            k = rng.randint(1, len(pool))
            imports[(a, b)] = frozenset(rng.sample(pool, k))
    graph = EnvGraph(tuple(names), frozenset(edges), exports, imports)

    interface: dict = {}
    globals_: dict = {}
    for c in names:
        ex = dict(exports[c])
        if c == names[0]:
            ex = {"main": MAIN, **ex}
        im = {}
        for (a, b), procs in sorted(imports.items()):
            if a == c:
                for p in sorted(procs):
                    im[(b, p)] = exports[b][p]
        sys_ = frozenset(s for s in ("read", "write") if rng.random() < 0.5)
        gl = []
        for k in range(rng.randint(1, cfg.max_globals)):
            gl.append(GlobalDecl(f"g{k}", rng.randint(1, cfg.max_global_size), rng.random() < 0.7))
        if sys_ and not any(g.public for g in gl):
            gl[0] = replace(gl[0], public=True)
        interface[c] = CompInterface(ex, im, sys_)
        globals_[c] = tuple(gl)
    return TraceEnv(interface, globals_, (names[0], "main")), graph


def campaign_config(seed: int, max_events: int = 880) -> GenConfig:
    """Configuration used by the back-translation campaign for one trial."""
    rng = random.Random(seed ^ 0x5EC0)
    return GenConfig(seed=seed, n_compartments=rng.randint(2, 6), max_procs=3,
                     max_events=max_events, max_deltas_per_event=3, max_args=10)


# ---------------------------------------------------------------- traces

def _value(rng: random.Random) -> int:
    r = rng.random()
    if r < 0.8:
        return rng.randint(-1000, 1000)
    if r < 0.9:
        return rng.randint(-(1 << 63), (1 << 63) - 1)
    return rng.choice((0, 1, -1, (1 << 63) - 1, -(1 << 63)))


def trace_length(rng: random.Random, max_events: int) -> int:
    """Mostly uniform lengths with a small mass exactly at the maximum."""
    if max_events <= 0:
        return 0
    if rng.random() < 0.04:
        return max_events
    return rng.randint(0, (max_events * 10) // 11)


def gen_informative_trace(env: TraceEnv, cfg: GenConfig, rng: random.Random | None = None,
                          length: int | None = None) -> list:
    """A well-formed informative trace consistent with `env`."""
    rng = rng or random.Random(cfg.seed * 7919 + 17)
    if length is None:
        length = trace_length(rng, cfg.max_events)
    genv = env.genv()
    # values of every global block, mirrored to compute written bytes
    slots = {bid: [0] * info[2] for bid, info in genv.by_block.items()}
    publics = {c: [b for b in genv.public_blocks(c)] for c in env.interface}
    iface = env.interface
    cur = tuple(env.entry)
    stack: list = []      # (caller (comp, proc), sig)
    out: list = []
    while len(out) < length:
        comp, proc = cur
        deltas = _gen_deltas(rng, comp, publics[comp], genv, slots, cfg.max_deltas_per_event)
        imports = list(iface[comp].imports.items())
        sys_ok = bool(iface[comp].syscalls) and bool(publics[comp])
        choices = []
        if stack:
            choices.append(("ret", 0.35 + 0.04 * min(len(stack), 10)))
        if imports and len(stack) < 40:
            choices.append(("call", 0.45))
        if sys_ok:
            choices.append(("sys", 0.2))
        if not choices:
            break
        kind = rng.choices([c[0] for c in choices], [c[1] for c in choices])[0]
        if kind == "ret":
            caller, sig = stack.pop()
            val = _value(rng) if sig.returns_value else None
            out.append(IReturn(proc, ReturnEvent(comp, caller[0], val), deltas))
            cur = caller
        elif kind == "call":
            (callee, g), sig = rng.choice(imports)
            args = tuple(_value(rng) for _ in range(sig.param_count))
            out.append(ICall(proc, CallEvent(comp, callee, g, args), sig, deltas))
            stack.append((cur, sig))
            cur = (callee, g)
        else:
            name = rng.choice(sorted(iface[comp].syscalls))
            bid = rng.choice(publics[comp])
            size = genv.by_block[bid][2]
            n = rng.randint(0, size)
            if name == "read":
                data = tuple(rng.randint(0, 255) for _ in range(rng.randint(0, n)))
                slots[bid][: len(data)] = data
                ev = SyscallEvent(comp, "read", (n,), data, len(data), ())
            else:
                written = tuple(v & 0xFF for v in slots[bid][:n])
                ev = SyscallEvent(comp, "write", (n,), (), rng.randint(0, n), written)
            out.append(ISys(proc, ev, genv.by_block[bid][1], deltas))
    return out


def _gen_deltas(rng, comp, publics, genv, slots, max_deltas) -> tuple:
    if not publics or max_deltas <= 0:
        return ()
    out = []
    for _ in range(rng.randint(0, max_deltas)):
        bid = rng.choice(publics)
        size = genv.by_block[bid][2]
        if rng.random() < 0.8:
            off = rng.randrange(size)
            v = _value(rng)
            slots[bid][off] = v
            out.append(DeltaStore(bid, off, v, comp))
        else:
            off = rng.randrange(size)
            vals = tuple(rng.randint(0, 255) for _ in range(rng.randint(1, size - off)))
            slots[bid][off: off + len(vals)] = vals
            out.append(DeltaBytes(bid, off, vals, comp))
    return tuple(out)


def gen_pair(seed: int, max_events: int = 880) -> tuple[TraceEnv, list]:
    """One (environment, informative trace) pair of the campaign."""
    cfg = campaign_config(seed, max_events)
    rng = random.Random(seed)
    env, _ = gen_environment(cfg, rng)
    return env, gen_informative_trace(env, cfg, rng)


# ---------------------------------------------------------------- IO scripts

def gen_io(rng: random.Random, n_reads: int = 24, n_acks: int = 24, max_chunk: int = 8) -> IoScript:
    reads = tuple(tuple(rng.randint(0, 255) for _ in range(rng.randint(0, max_chunk)))
                  for _ in range(n_reads))
    acks = tuple(rng.randint(-1, max_chunk) for _ in range(n_acks))
    return IoScript(reads, acks)


# ---------------------------------------------------------------- programs

_SAFE_OPS = ("+", "-", "*", "<", "=", "!=", "<=", "and", "or")
BUDGET = "__b"


@dataclass
class _ProcGen:
    rng: random.Random
    comp: str
    iface: CompInterface
    globals_: tuple
    internal: dict           # proc -> Signature
    returns_value: bool
    locals_: list = field(default_factory=lambda: ["x0", "x1", "x2"])
    loop_depth: int = 0
    budget: int = 8

    def expr(self, depth: int = 0):
        rng = self.rng
        r = rng.random()
        if depth >= 2 or r < 0.3:
            return Const(_value(rng)) if rng.random() < 0.5 else Local(rng.choice(self.locals_))
        if r < 0.45 and self.globals_:
            g = rng.choice(self.globals_)
            return GLoad(g.name, Const(rng.randrange(g.size)))
        if r < 0.55:
            return UnOp(rng.choice(("not", "neg")), self.expr(depth + 1))
        if r < 0.62:
            d = rng.choice((1, 2, 3, 7, -5))
            return BinOp(rng.choice(("/", "%")), self.expr(depth + 1), Const(d))
        return BinOp(rng.choice(_SAFE_OPS), self.expr(depth + 1), self.expr(depth + 1))

    def guarded_call(self):
        rng = self.rng
        # cross-compartment calls are weighted over internal ones
        options = [(c, p, s) for (c, p), s in self.iface.imports.items()] * 3
        options += [(None, p, s) for p, s in self.internal.items()]
        if not options:
            return Skip()
        comp, proc, sig = rng.choice(options)
        dest = rng.choice(self.locals_) if sig.returns_value and rng.random() < 0.7 else None
        call = Call(dest, Target(comp, proc), tuple(self.expr(1) for _ in range(sig.param_count)))
        used = GLoad(BUDGET, Const(0))
        bump = GStore(BUDGET, Const(0), BinOp("+", used, Const(1)))
        return If(BinOp("<", used, Const(self.budget)), Seq((bump, call)), Skip())

    def syscall(self):
        rng = self.rng
        pubs = [g for g in self.globals_ if g.public]
        if not self.iface.syscalls or not pubs:
            return Skip()
        g = rng.choice(pubs)
        name = rng.choice(sorted(self.iface.syscalls))
        dest = rng.choice(self.locals_) if rng.random() < 0.5 else None
        return Call(dest, Target(SYS_COMP, name), (GlobalRef(g.name), Const(rng.randint(0, g.size))))

    def ret(self):
        return Return(self.expr(1)) if self.returns_value else Return(None)

    def stmt(self, depth: int):
        rng = self.rng
        r = rng.random()
        if r < 0.15:
            return Assign(rng.choice(self.locals_), self.expr())
        if r < 0.3 and self.globals_:
            g = rng.choice(self.globals_)
            if self.loop_depth and rng.random() < 0.5:
                idx = Local(f"i{self.loop_depth - 1}")
                off = BinOp("%", idx, Const(g.size))
            else:
                off = Const(rng.randrange(g.size))
            return GStore(g.name, off, self.expr())
        if r < 0.55:
            return self.guarded_call()
        if r < 0.67:
            return self.syscall()
        if r < 0.79 and depth < 2:
            return If(self.expr(), self.block(depth + 1), self.block(depth + 1))
        if r < 0.9 and depth < 2 and self.loop_depth < 2:
            i = f"i{self.loop_depth}"
            self.loop_depth += 1
            body = self.block(depth + 1)
            self.loop_depth -= 1
            step = Assign(i, BinOp("+", Local(i), Const(1)))
            return Seq((Assign(i, Const(0)),
                        While(BinOp("<", Local(i), Const(rng.randint(0, 4))), Seq((body, step)))))
        if r < 0.93 and depth > 0:
            return self.ret()
        return Assign(rng.choice(self.locals_), self.expr())

    def block(self, depth: int):
        return Seq(tuple(self.stmt(depth) for _ in range(self.rng.randint(1, 4))))

    def body(self):
        stmts = [self.stmt(0) for _ in range(self.rng.randint(3, 9))]
        if self.returns_value or self.rng.random() < 0.5:
            stmts.append(self.ret())
        return Seq(tuple(stmts))


def gen_program(env: TraceEnv, cfg: GenConfig, rng: random.Random | None = None) -> Program:
    """A random program with `env`'s interface that terminates by construction.

    Every compartment owns a private call budget; each call first checks and
    bumps it, and loops have constant bounds, so execution is finite.
    """
    rng = rng or random.Random(cfg.seed * 104729 + 3)
    comps: dict = {}
    for c, ci in env.interface.items():
        globals_ = tuple(env.globals[c])
        internal = {f"h{k}": _signature(rng, min(cfg.max_args, 3)) for k in range(rng.randint(0, 2))}
        budget = rng.randint(2, 10)
        procs: dict = {}
        sigs = dict(ci.exports)
        sigs.update(internal)
        for name, sig in sigs.items():
            pg = _ProcGen(rng, c, ci, globals_, internal, sig.returns_value, budget=budget)
            params = tuple(f"p{k}" for k in range(sig.param_count))
            pg.locals_ = pg.locals_ + list(params)
            body = pg.body()
            locs = ("x0", "x1", "x2", "i0", "i1")
            if params:
                # start locals from the parameters so they flow into computations
                body = Seq((Assign("x0", Local(params[0])), body))
            procs[name] = ProcBody(params, locs, body)
        comps[c] = CompartmentDecl(c, dict(ci.exports), dict(ci.imports), ci.syscalls,
                                   globals_ + (GlobalDecl(BUDGET, 1, False),), procs)
    return Program(comps, tuple(env.entry))


def program_config(seed: int) -> GenConfig:
    rng = random.Random(seed ^ 0xFCC)
    return GenConfig(seed=seed, n_compartments=rng.randint(2, 4), max_procs=3,
                     max_events=0, max_args=rng.choice((3, 4, 10)))


def gen_program_case(seed: int) -> tuple[Program, IoScript]:
    cfg = program_config(seed)
    rng = random.Random(seed)
    env, _ = gen_environment(cfg, rng)
    return gen_program(env, cfg, rng), gen_io(rng)


# ---------------------------------------------------------------- UB injection

def _ub_stmt(rng: random.Random, comp: CompartmentDecl):
    g = rng.choice(comp.globals)
    if rng.random() < 0.5:
        return GStore(g.name, Const(0), BinOp("/", Const(1), BinOp("-", Const(3), Const(3))))
    return GStore(g.name, BinOp("+", Const(g.size), Const(0)), Const(1))


def _insert(rng: random.Random, s, ub):
    """Insert `ub` at a random position of statement `s` (one level deep into blocks)."""
    if type(s) is Seq and s.stmts:
        i = rng.randint(0, len(s.stmts))
        if i < len(s.stmts) and type(s.stmts[i]) in (Seq, If) and rng.random() < 0.5:
            inner = s.stmts[i]
            if type(inner) is If:
                inner = If(inner.cond, _insert(rng, inner.then, ub), inner.els)
            else:
                inner = _insert(rng, inner, ub)
            return Seq(s.stmts[:i] + (inner,) + s.stmts[i + 1:])
        return Seq(s.stmts[:i] + (ub,) + s.stmts[i:])
    return Seq((ub, s))


def inject_ub(p: Program, rng: random.Random, comps=None) -> tuple[Program, str]:
    """Insert one UB statement into a random procedure; returns (program, compartment)."""
    names = sorted(comps if comps is not None else p.compartments)
    k = rng.choice(names)
    c = p.compartments[k]
    proc = rng.choice(sorted(c.procs))
    pb = c.procs[proc]
    body = _insert(rng, pb.body, _ub_stmt(rng, c))
    procs = dict(c.procs)
    procs[proc] = ProcBody(pb.params, pb.locals, body)
    comps_ = dict(p.compartments)
    comps_[k] = replace(c, procs=procs)
    return Program(comps_, p.main), k
