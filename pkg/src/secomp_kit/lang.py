"""Source language: compartments, interfaces, statements and expressions.

Programs are written as s-expressions, one `(compartment ...)` form per
compartment plus an optional `(main COMP PROC)` form. Walkers over
statements treat else-if chains iteratively because generated programs nest
them very deeply.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .memory import INT_MIN, wrap64
from .sexp import SexpError, SList, Sym, dumps, parse_int, pos, read_all

SYSCALLS = ("read", "write")
SYS_COMP = "sys"
MAX_PARAMS = 16
REG_ARGS = 8
MAX_GLOBAL_SIZE = 1 << 20
_IDENT = re.compile(r"[A-Za-z0-9_]+\Z")


# ---------------------------------------------------------------- errors

class LangError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.line = line
        self.col = col


class ProgramSyntaxError(LangError):
    pass


class DuplicateName(LangError):
    pass


class UnknownReference(LangError):
    pass


class ImportUnresolved(LangError):
    pass


class SignatureMismatch(LangError):
    pass


class SyscallNotAllowed(LangError):
    pass


class ConstantOutOfBounds(LangError):
    pass


class NameClash(LangError):
    pass


class UnknownCompartment(LangError):
    pass


class NoMain(LangError):
    pass


class ArithUB(Exception):
    """Undefined arithmetic (division or modulo by zero)."""


# ---------------------------------------------------------------- AST

@dataclass(frozen=True, slots=True)
class Signature:
    param_count: int
    returns_value: bool

    def __str__(self) -> str:
        return f"{self.param_count} {'ret' if self.returns_value else 'void'}"


@dataclass(frozen=True, slots=True)
class Const:
    value: int


@dataclass(frozen=True, slots=True)
class Local:
    name: str


@dataclass(frozen=True, slots=True)
class GLoad:
    glob: str
    off: "Expr"


@dataclass(frozen=True, slots=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class UnOp:
    op: str
    arg: "Expr"


@dataclass(frozen=True, slots=True)
class GlobalRef:
    """Names a global buffer; only valid as the first syscall argument."""
    name: str


Expr = Const | Local | GLoad | BinOp | UnOp | GlobalRef


@dataclass(frozen=True, slots=True)
class Skip:
    pass


@dataclass(frozen=True, slots=True)
class Seq:
    stmts: tuple


@dataclass(frozen=True, slots=True)
class Assign:
    name: str
    expr: Expr


@dataclass(frozen=True, slots=True)
class GStore:
    glob: str
    off: Expr
    val: Expr


@dataclass(frozen=True, slots=True)
class If:
    cond: Expr
    then: "Stmt"
    els: "Stmt"


@dataclass(frozen=True, slots=True)
class While:
    cond: Expr
    body: "Stmt"


@dataclass(frozen=True, slots=True)
class Target:
    """Call target: internal when comp is None, a syscall when comp == 'sys'."""
    comp: str | None
    proc: str

    @property
    def is_sys(self) -> bool:
        return self.comp == SYS_COMP

    def __str__(self) -> str:
        return self.proc if self.comp is None else f"{self.comp}.{self.proc}"


@dataclass(frozen=True, slots=True)
class Call:
    dest: str | None
    target: Target
    args: tuple


@dataclass(frozen=True, slots=True)
class Return:
    expr: Expr | None = None


Stmt = Skip | Seq | Assign | GStore | If | While | Call | Return


@dataclass(frozen=True, slots=True)
class GlobalDecl:
    name: str
    size: int
    public: bool


@dataclass(frozen=True)
class ProcBody:
    params: tuple
    locals: tuple
    body: Stmt


@dataclass(frozen=True)
class CompartmentDecl:
    name: str
    exports: dict = field(default_factory=dict)    # proc -> Signature
    imports: dict = field(default_factory=dict)    # (comp, proc) -> Signature
    syscalls: frozenset = frozenset()
    globals: tuple = ()                            # GlobalDecl, declaration order
    procs: dict = field(default_factory=dict)      # proc -> ProcBody

    def global_decl(self, name: str) -> GlobalDecl | None:
        for g in self.globals:
            if g.name == name:
                return g
        return None


@dataclass(frozen=True)
class CompInterface:
    exports: dict
    imports: dict
    syscalls: frozenset


Interface = dict  # comp name -> CompInterface


@dataclass(frozen=True)
class Program:
    compartments: dict
    main: tuple | None = None


# ---------------------------------------------------------------- operators

def _cdiv(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return -q if (a < 0) != (b < 0) else q


def eval_binop(op: str, a: int, b: int) -> int:
    if op == "+":
        return wrap64(a + b)
    if op == "-":
        return wrap64(a - b)
    if op == "*":
        return wrap64(a * b)
    if op == "/":
        if b == 0:
            raise ArithUB("division by zero")
        return wrap64(_cdiv(a, b))
    if op == "%":
        if b == 0:
            raise ArithUB("modulo by zero")
        if a == INT_MIN and b == -1:
            return 0
        return a - _cdiv(a, b) * b
    if op == "<":
        return int(a < b)
    if op == "=":
        return int(a == b)
    if op == "!=":
        return int(a != b)
    if op == "<=":
        return int(a <= b)
    if op == "and":
        return int(a != 0 and b != 0)
    if op == "or":
        return int(a != 0 or b != 0)
    raise ValueError(f"unknown operator {op}")


def eval_unop(op: str, a: int) -> int:
    if op == "not":
        return int(a == 0)
    if op == "neg":
        return wrap64(-a)
    raise ValueError(f"unknown operator {op}")


BINOPS = ("+", "-", "*", "/", "%", "<", "=", "!=", "<=", "and", "or")
UNOPS = ("not", "neg")


# ---------------------------------------------------------------- walkers

def iter_nodes(root):
    """Yield every statement and expression below `root`, iteratively."""
    stack = [root]
    while stack:
        n = stack.pop()
        yield n
        t = type(n)
        if t is Seq:
            stack.extend(reversed(n.stmts))
        elif t is If:
            stack.append(n.els)
            stack.append(n.then)
            stack.append(n.cond)
        elif t is While:
            stack.append(n.body)
            stack.append(n.cond)
        elif t is Assign:
            stack.append(n.expr)
        elif t is GStore:
            stack.append(n.val)
            stack.append(n.off)
        elif t is Call:
            stack.extend(reversed(n.args))
        elif t is Return:
            if n.expr is not None:
                stack.append(n.expr)
        elif t is GLoad:
            stack.append(n.off)
        elif t is BinOp:
            stack.append(n.right)
            stack.append(n.left)
        elif t is UnOp:
            stack.append(n.arg)


def always_returns(s: Stmt) -> bool:
    """True when every path through `s` ends in a return (or never exits)."""
    t = type(s)
    if t is Return:
        return True
    if t is Seq:
        return any(always_returns(x) for x in s.stmts)
    if t is If:
        while type(s) is If:
            if not always_returns(s.then):
                return False
            s = s.els
        return always_returns(s)
    if t is While:
        return type(s.cond) is Const and s.cond.value != 0
    return False


def proc_returns_value(body: ProcBody) -> bool:
    return any(type(n) is Return and n.expr is not None for n in iter_nodes(body.body))


def signature_of(comp: CompartmentDecl, proc: str) -> Signature:
    sig = comp.exports.get(proc)
    if sig is not None:
        return sig
    pb = comp.procs[proc]
    return Signature(len(pb.params), proc_returns_value(pb))


# ---------------------------------------------------------------- parser

def _err(cls, msg, form):
    line, col = pos(form)
    return cls(msg, line, col)


def _ident(tok, what: str) -> str:
    if not isinstance(tok, str) or not _IDENT.match(tok):
        raise _err(ProgramSyntaxError, f"expected {what} identifier, got {_show(tok)}", tok)
    return str(tok)


def _show(form) -> str:
    return dumps(form) if isinstance(form, list) else repr(str(form))


def _sig(count_tok, ret_tok) -> Signature:
    line, col = pos(count_tok)
    n = parse_int(str(count_tok), line, col)
    if not 0 <= n <= MAX_PARAMS:
        raise _err(ProgramSyntaxError, f"arity {n} outside 0..{MAX_PARAMS}", count_tok)
    if ret_tok not in ("ret", "void"):
        raise _err(ProgramSyntaxError, "expected ret or void", ret_tok)
    return Signature(n, ret_tok == "ret")


def _head(form) -> str | None:
    if isinstance(form, list) and form and isinstance(form[0], str):
        return str(form[0])
    return None


class _ProcParser:
    def __init__(self, comp_name: str, globals_: dict, proc_names: set, imports: dict, scope: set):
        self.comp = comp_name
        self.globals = globals_
        self.procs = proc_names
        self.imports = imports
        self.scope = scope

    def expr(self, f) -> Expr:
        if isinstance(f, Sym) or (isinstance(f, str) and not isinstance(f, list)):
            if re.fullmatch(r"-?[0-9]+", f):
                line, col = pos(f)
                return Const(parse_int(str(f), line, col))
            name = _ident(f, "variable")
            if name not in self.scope:
                raise _err(UnknownReference, f"unknown variable {name}", f)
            return Local(name)
        h = _head(f)
        if h == "gload":
            if len(f) != 3:
                raise _err(ProgramSyntaxError, "gload takes a global and an offset", f)
            g = self.glob(f[1])
            return GLoad(g, self.expr(f[2]))
        if h == "op":
            if len(f) < 3:
                raise _err(ProgramSyntaxError, "op needs an operator and operands", f)
            op = str(f[1])
            if op in UNOPS:
                if len(f) != 3:
                    raise _err(ProgramSyntaxError, f"{op} takes one operand", f)
                return UnOp(op, self.expr(f[2]))
            if op in BINOPS:
                if len(f) != 4:
                    raise _err(ProgramSyntaxError, f"{op} takes two operands", f)
                return BinOp(op, self.expr(f[2]), self.expr(f[3]))
            raise _err(ProgramSyntaxError, f"unknown operator {op}", f[1])
        raise _err(ProgramSyntaxError, f"bad expression {_show(f)}", f)

    def glob(self, tok) -> str:
        name = _ident(tok, "global")
        if name not in self.globals:
            raise _err(UnknownReference, f"unknown global {name} in {self.comp}", tok)
        return name

    def stmts(self, forms) -> Stmt:
        parts = [self.stmt(f) for f in forms]
        return parts[0] if len(parts) == 1 else Seq(tuple(parts))

    def stmt(self, f) -> Stmt:
        h = _head(f)
        if h == "if":
            # flatten the else-if spine to avoid deep recursion
            spine = []
            while _head(f) == "if":
                if len(f) not in (3, 4):
                    raise _err(ProgramSyntaxError, "if takes a condition and one or two branches", f)
                spine.append((self.expr(f[1]), self.stmt(f[2])))
                if len(f) == 3:
                    f = None
                    break
                f = f[3]
            s = Skip() if f is None else self.stmt(f)
            for cond, then in reversed(spine):
                s = If(cond, then, s)
            return s
        if h == "skip":
            return Skip()
        if h == "seq":
            return Seq(tuple(self.stmt(x) for x in f[1:]))
        if h == "set":
            if len(f) != 3:
                raise _err(ProgramSyntaxError, "set takes a variable and an expression", f)
            name = _ident(f[1], "variable")
            if name not in self.scope:
                raise _err(UnknownReference, f"unknown variable {name}", f[1])
            return Assign(name, self.expr(f[2]))
        if h == "gstore":
            if len(f) != 4:
                raise _err(ProgramSyntaxError, "gstore takes a global, offset and value", f)
            return GStore(self.glob(f[1]), self.expr(f[2]), self.expr(f[3]))
        if h == "while":
            if len(f) < 3:
                raise _err(ProgramSyntaxError, "while takes a condition and a body", f)
            return While(self.expr(f[1]), self.stmts(f[2:]))
        if h == "return":
            if len(f) > 2:
                raise _err(ProgramSyntaxError, "return takes at most one expression", f)
            return Return(self.expr(f[1]) if len(f) == 2 else None)
        if h == "call":
            return self.call(f)
        raise _err(ProgramSyntaxError, f"bad statement {_show(f)}", f)

    def _is_target(self, tok) -> bool:
        return isinstance(tok, str) and not isinstance(tok, list) and ("." in tok or tok in self.procs)

    def call(self, f) -> Call:
        rest = f[1:]
        if not rest or isinstance(rest[0], list):
            raise _err(ProgramSyntaxError, "call needs a target", f)
        first = rest[0]
        dest: str | None
        if first == "_":
            dest, rest = None, rest[1:]
        elif "." in first:
            dest = None
        else:
            is_var = first in self.scope
            is_proc = first in self.procs
            if is_var and (not is_proc or (len(rest) > 1 and self._is_target(rest[1]))):
                dest, rest = str(first), rest[1:]
            elif is_proc:
                dest = None
            else:
                raise _err(UnknownReference, f"unknown procedure or variable {first}", first)
        if not rest or isinstance(rest[0], list):
            raise _err(ProgramSyntaxError, "call needs a target", f)
        tok = rest[0]
        target = self.target(tok)
        if target.is_sys:
            if len(rest) != 3:
                raise _err(ProgramSyntaxError, f"sys.{target.proc} takes a global and a count", f)
            args = (GlobalRef(self.glob(rest[1])), self.expr(rest[2]))
        else:
            args = tuple(self.expr(a) for a in rest[1:])
        return Call(dest, target, args)

    def target(self, tok) -> Target:
        s = str(tok)
        if "." in s:
            comp, _, proc = s.partition(".")
            _ident(Sym(comp, *pos(tok)), "compartment")
            _ident(Sym(proc, *pos(tok)), "procedure")
            if comp == SYS_COMP:
                if proc not in SYSCALLS:
                    raise _err(UnknownReference, f"unknown syscall {proc}", tok)
                return Target(SYS_COMP, proc)
            if comp == self.comp:
                if proc not in self.procs:
                    raise _err(UnknownReference, f"unknown procedure {proc}", tok)
                return Target(None, proc)
            if (comp, proc) not in self.imports:
                raise _err(UnknownReference, f"{comp}.{proc} is not imported by {self.comp}", tok)
            return Target(comp, proc)
        if s not in self.procs:
            raise _err(UnknownReference, f"unknown procedure {s}", tok)
        return Target(None, s)


def _parse_compartment(form) -> CompartmentDecl:
    if len(form) < 2:
        raise _err(ProgramSyntaxError, "compartment needs a name", form)
    name = _ident(form[1], "compartment")
    if name == SYS_COMP:
        raise _err(ProgramSyntaxError, "'sys' is reserved", form[1])
    exports: dict = {}
    imports: dict = {}
    syscalls: set = set()
    globals_: list[GlobalDecl] = []
    proc_forms: list = []
    for sub in form[2:]:
        h = _head(sub)
        if h == "exports":
            for e in sub[1:]:
                if not isinstance(e, list) or len(e) != 3:
                    raise _err(ProgramSyntaxError, "export entry is (PROC ARITY ret|void)", e)
                p = _ident(e[0], "procedure")
                if p in exports:
                    raise _err(DuplicateName, f"duplicate export {p}", e)
                exports[p] = _sig(e[1], e[2])
        elif h == "imports":
            for e in sub[1:]:
                if not isinstance(e, list) or len(e) != 4:
                    raise _err(ProgramSyntaxError, "import entry is (COMP PROC ARITY ret|void)", e)
                key = (_ident(e[0], "compartment"), _ident(e[1], "procedure"))
                if key[0] == name:
                    raise _err(ImportUnresolved, f"{name} imports from itself", e)
                if key in imports:
                    raise _err(DuplicateName, f"duplicate import {key[0]}.{key[1]}", e)
                imports[key] = _sig(e[2], e[3])
        elif h == "syscalls":
            for s in sub[1:]:
                if s not in SYSCALLS:
                    raise _err(ProgramSyntaxError, f"unknown syscall {_show(s)}", s)
                syscalls.add(str(s))
        elif h == "global":
            if len(sub) != 4 or sub[3] not in ("public", "private"):
                raise _err(ProgramSyntaxError, "global is (global NAME SIZE public|private)", sub)
            g = _ident(sub[1], "global")
            if any(x.name == g for x in globals_):
                raise _err(DuplicateName, f"duplicate global {g}", sub)
            size = parse_int(str(sub[2]), *pos(sub[2]))
            if not 1 <= size <= MAX_GLOBAL_SIZE:
                raise _err(ProgramSyntaxError, f"global size {size} out of range", sub[2])
            globals_.append(GlobalDecl(g, size, sub[3] == "public"))
        elif h == "proc":
            proc_forms.append(sub)
        else:
            raise _err(ProgramSyntaxError, f"unexpected form in compartment {name}: {_show(sub)}", sub)

    proc_names: set = set()
    for pf in proc_forms:
        if len(pf) < 3 or not isinstance(pf[2], list):
            raise _err(ProgramSyntaxError, "proc is (proc NAME (PARAMS...) (locals ...)? STMT...)", pf)
        p = _ident(pf[1], "procedure")
        if p in proc_names:
            raise _err(DuplicateName, f"duplicate procedure {p}", pf)
        proc_names.add(p)

    gmap = {g.name: g for g in globals_}
    procs: dict = {}
    for pf in proc_forms:
        params = tuple(_ident(x, "parameter") for x in pf[2])
        # the locals form is optional
        has_locals = len(pf) > 3 and _head(pf[3]) == "locals"
        locs = tuple(_ident(x, "local") for x in pf[3][1:]) if has_locals else ()
        first = 4 if has_locals else 3
        seen: set = set()
        for v in params + locs:
            if v == "_":
                raise _err(ProgramSyntaxError, "'_' cannot name a variable", pf)
            if v in seen:
                raise _err(DuplicateName, f"duplicate variable {v} in {pf[1]}", pf)
            seen.add(v)
        if len(params) > MAX_PARAMS:
            raise _err(ProgramSyntaxError, f"more than {MAX_PARAMS} parameters", pf[2])
        pp = _ProcParser(name, gmap, proc_names, imports, seen)
        body = pp.stmts(pf[first:]) if len(pf) > first else Seq(())
        procs[str(pf[1])] = ProcBody(params, locs, body)
    return CompartmentDecl(name, exports, imports, frozenset(syscalls), tuple(globals_), procs)


def parse_program(text: str, *, check: bool = True, partial: bool = False) -> Program:
    """Parse program text; by default also run `check_interfaces`."""
    try:
        forms = read_all(text)
    except SexpError as e:
        raise ProgramSyntaxError(str(e).split(": ", 1)[-1], e.line, e.col) from None
    comps: dict = {}
    main = None
    for f in forms:
        h = _head(f)
        if h == "compartment":
            try:
                c = _parse_compartment(f)
            except SexpError as e:
                raise ProgramSyntaxError(str(e).split(": ", 1)[-1], e.line, e.col) from None
            if c.name in comps:
                raise _err(DuplicateName, f"duplicate compartment {c.name}", f)
            comps[c.name] = c
        elif h == "main":
            if len(f) != 3 or main is not None:
                raise _err(ProgramSyntaxError, "expected a single (main COMP PROC)", f)
            main = (_ident(f[1], "compartment"), _ident(f[2], "procedure"))
        else:
            raise _err(ProgramSyntaxError, f"unexpected top-level form {_show(f)}", f)
    if main is None:
        for c in comps.values():
            if "main" in c.exports:
                main = (c.name, "main")
                break
    p = Program(comps, main)
    if check:
        check_interfaces(p, partial=partial)
    return p


# ---------------------------------------------------------------- checks

def check_compartment(c: CompartmentDecl) -> None:
    """Checks that need only the compartment itself."""
    for p, sig in c.exports.items():
        if p not in c.procs:
            raise ImportUnresolved(f"{c.name} exports {p} without a body")
        if len(c.procs[p].params) != sig.param_count:
            raise SignatureMismatch(f"{c.name}.{p} declares {sig.param_count} parameters")
    gsize = {g.name: g.size for g in c.globals}
    for pname, pb in c.procs.items():
        sig = signature_of(c, pname)
        returns = [n for n in iter_nodes(pb.body) if type(n) is Return]
        for r in returns:
            if (r.expr is not None) != sig.returns_value:
                raise SignatureMismatch(f"return form in {c.name}.{pname} does not match its signature")
        if sig.returns_value and not always_returns(pb.body):
            raise SignatureMismatch(f"{c.name}.{pname} may finish without returning a value")
        for n in iter_nodes(pb.body):
            t = type(n)
            if t is GLoad or t is GStore:
                if type(n.off) is Const and not 0 <= n.off.value < gsize[n.glob]:
                    raise ConstantOutOfBounds(f"{c.name}.{pname}: offset {n.off.value} outside {n.glob}")
            elif t is Call:
                _check_call(c, pname, n)


def _check_call(c: CompartmentDecl, pname: str, n: Call) -> None:
    tgt = n.target
    where = f"{c.name}.{pname}"
    if tgt.is_sys:
        if tgt.proc not in c.syscalls:
            raise SyscallNotAllowed(f"{where} uses {tgt.proc} but {c.name} may not")
        return
    if tgt.comp is None:
        if tgt.proc not in c.procs:
            raise UnknownReference(f"{where} calls unknown {tgt.proc}")
        sig = signature_of(c, tgt.proc)
    else:
        sig = c.imports.get((tgt.comp, tgt.proc))
        if sig is None:
            raise UnknownReference(f"{where} calls {tgt} without importing it")
    if len(n.args) != sig.param_count:
        raise SignatureMismatch(f"{where} calls {tgt} with {len(n.args)} arguments, expected {sig.param_count}")
    if n.dest is not None and not sig.returns_value:
        raise SignatureMismatch(f"{where} uses the result of void {tgt}")


def check_interfaces(p: Program, partial: bool = False) -> None:
    """Static interface check. With `partial`, imports from absent compartments are skipped."""
    for c in p.compartments.values():
        check_compartment(c)
        for (cc, g), sig in c.imports.items():
            other = p.compartments.get(cc)
            if other is None:
                if partial:
                    continue
                raise ImportUnresolved(f"{c.name} imports from unknown compartment {cc}")
            if g not in other.exports:
                raise ImportUnresolved(f"{c.name} imports {cc}.{g} which is not exported")
            if other.exports[g] != sig:
                raise SignatureMismatch(f"{c.name} imports {cc}.{g} as ({sig}) but it is ({other.exports[g]})")
    if p.main is not None and p.main[0] in p.compartments:
        check_main(p)


def check_main(p: Program) -> None:
    if p.main is None:
        raise NoMain("program has no main")
    comp, proc = p.main
    c = p.compartments.get(comp)
    if c is None or proc not in c.exports:
        raise NoMain(f"{comp}.{proc} is not an exported procedure")
    if c.exports[proc] != Signature(0, True):
        raise NoMain(f"{comp}.{proc} must take no arguments and return a value")


# ---------------------------------------------------------------- interfaces and linking

def interface_of_compartment(c: CompartmentDecl) -> CompInterface:
    return CompInterface(dict(c.exports), dict(c.imports), frozenset(c.syscalls))


def interface_of(p: Program) -> Interface:
    return {k: interface_of_compartment(c) for k, c in p.compartments.items()}


def project_interface(i: Interface, ks) -> Interface:
    ks = set(ks)
    missing = ks - set(i)
    if missing:
        raise UnknownCompartment(f"unknown compartments {sorted(missing)}")
    return {k: v for k, v in i.items() if k in ks}


def split(p: Program, ks) -> tuple[Program, Program]:
    ks = set(ks)
    missing = ks - set(p.compartments)
    if missing:
        raise UnknownCompartment(f"unknown compartments {sorted(missing)}")
    inside = {k: c for k, c in p.compartments.items() if k in ks}
    outside = {k: c for k, c in p.compartments.items() if k not in ks}
    main_in = p.main if p.main is not None and p.main[0] in ks else None
    main_out = p.main if p.main is not None and p.main[0] not in ks else None
    return Program(inside, main_in), Program(outside, main_out)


def link(a: Program, b: Program, *, partial: bool = False) -> Program:
    clash = set(a.compartments) & set(b.compartments)
    if clash:
        raise NameClash(f"compartments defined twice: {sorted(clash)}")
    if a.main is not None and b.main is not None and a.main != b.main:
        raise NameClash("both sides declare a main")
    p = Program({**a.compartments, **b.compartments}, a.main or b.main)
    check_interfaces(p, partial=partial)
    return p


# ---------------------------------------------------------------- printer

def expr_form(e: Expr):
    t = type(e)
    if t is Const:
        return str(e.value)
    if t is Local:
        return e.name
    if t is GlobalRef:
        return e.name
    if t is GLoad:
        return ["gload", e.glob, expr_form(e.off)]
    if t is BinOp:
        return ["op", e.op, expr_form(e.left), expr_form(e.right)]
    if t is UnOp:
        return ["op", e.op, expr_form(e.arg)]
    raise TypeError(f"not an expression: {e!r}")


def stmt_form(s: Stmt):
    t = type(s)
    if t is If:
        spine = []
        while type(s) is If:
            spine.append(s)
            s = s.els
        tail = stmt_form(s)
        for node in reversed(spine):
            tail = ["if", expr_form(node.cond), stmt_form(node.then), tail]
        return tail
    if t is Skip:
        return ["skip"]
    if t is Seq:
        return ["seq"] + [stmt_form(x) for x in s.stmts]
    if t is Assign:
        return ["set", s.name, expr_form(s.expr)]
    if t is GStore:
        return ["gstore", s.glob, expr_form(s.off), expr_form(s.val)]
    if t is While:
        return ["while", expr_form(s.cond), stmt_form(s.body)]
    if t is Call:
        return ["call", s.dest or "_", str(s.target)] + [expr_form(a) for a in s.args]
    if t is Return:
        return ["return"] if s.expr is None else ["return", expr_form(s.expr)]
    raise TypeError(f"not a statement: {s!r}")


def _body_forms(body: Stmt) -> list:
    if type(body) is Seq and len(body.stmts) != 1:
        return [stmt_form(x) for x in body.stmts]
    return [stmt_form(body)]


def _sig_form(sig: Signature) -> list:
    return [str(sig.param_count), "ret" if sig.returns_value else "void"]


def compartment_text(c: CompartmentDecl) -> str:
    lines = [f"(compartment {c.name}"]
    lines.append("  " + dumps(["exports"] + [[p] + _sig_form(s) for p, s in c.exports.items()]))
    lines.append("  " + dumps(["imports"] + [[cc, g] + _sig_form(s) for (cc, g), s in c.imports.items()]))
    lines.append("  " + dumps(["syscalls"] + [s for s in SYSCALLS if s in c.syscalls]))
    for g in c.globals:
        lines.append("  " + dumps(["global", g.name, str(g.size), "public" if g.public else "private"]))
    for name, pb in c.procs.items():
        form = ["proc", name, list(pb.params), ["locals", *pb.locals]] + _body_forms(pb.body)
        lines.append("  " + dumps(form))
    lines[-1] += ")"
    return "\n".join(lines) + "\n"


def program_text(p: Program) -> str:
    out = "".join(compartment_text(c) for c in p.compartments.values())
    if p.main is not None:
        out += f"(main {p.main[0]} {p.main[1]})\n"
    return out
