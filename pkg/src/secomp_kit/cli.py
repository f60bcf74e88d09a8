"""Command-line front end.

Exit codes: 0 success or PASS, 1 property FAIL or a run that did not finish,
2 usage, parse or static-check errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backtrans import (
    MAX_TRACE_LENGTH, NotWellFormed, back_translate, back_translate_all, bt_init, check_wf,
    env_of_target, load_env,
)
from .compile import compile_program
from .harness.corpus import PROPERTIES, fuzz
from .lang import LangError, compartment_text, link, parse_program, program_text
from .memory import MemError
from .sem_source import run
from .sem_target import NoEntry, trun
from .target import is_target_text, parse_target, target_link, target_text
from .trace import (
    Final, IoScript, ParseError, Stuck, parse_io, parse_itrace, serialize_itrace,
    serialize_trace,
)

OK, FAIL, USAGE = 0, 1, 2


class CliError(Exception):
    """A user-facing error, reported as `path: message` with exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise CliError(f"{path}: {e.strerror}") from None


def _write(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _located(path: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (LangError, ParseError, NotWellFormed, MemError, NoEntry) as e:
        raise CliError(f"{path}:{e}") from None


def _io(path: str | None) -> IoScript:
    return IoScript() if path is None else _located(path, parse_io, _read(path))


def _outcome_line(out) -> str:
    if type(out) is Final:
        return f"final {out.value}"
    if type(out) is Stuck:
        return f"stuck {out.comp}: {out.reason}"
    return type(out).__name__.lower()


def _exit(out) -> int:
    return OK if type(out) is Final else FAIL


# ---------------------------------------------------------------- commands

def cmd_compile(a) -> int:
    p = _located(a.input, parse_program, _read(a.input))
    tp = _located(a.input, compile_program, p, not a.no_spill)
    _write(a.output, target_text(tp))
    return OK


def cmd_run_source(a) -> int:
    p = _located(a.program, parse_program, _read(a.program))
    m, out = _located(a.program, run, p, _io(a.io), a.fuel, a.max_events)
    if a.trace:
        _write(a.trace, serialize_trace(m))
    print(_outcome_line(out))
    return _exit(out)


def cmd_run_target(a) -> int:
    tp = _located(a.program, parse_target, _read(a.program))
    m, it, out = _located(a.program, trun, tp, _io(a.io), a.fuel, a.max_events)
    if a.trace:
        _write(a.trace, serialize_trace(m))
    if a.itrace:
        _write(a.itrace, serialize_itrace(it, env_of_target(tp).genv()))
    print(_outcome_line(out))
    return _exit(out)


def _env_and_itrace(a):
    env = _located(a.interface, load_env, _read(a.interface))
    it = _located(a.itrace, parse_itrace, _read(a.itrace), env.genv())
    return env, it


def cmd_backtranslate(a) -> int:
    env, it = _env_and_itrace(a)
    if a.comp:
        c = _located(a.itrace, back_translate, env, it, a.comp, a.max_length)
        _write(a.output, compartment_text(c))
    else:
        p = _located(a.itrace, back_translate_all, env, it, a.max_length)
        _write(a.output, program_text(p))
    return OK


def cmd_check_trace(a) -> int:
    env, it = _env_and_itrace(a)
    report = check_wf(it, bt_init(env))
    if report:
        print(f"PASS {len(it)} events well formed")
        return OK
    print(f"FAIL event {report.failed_at}: {report.error}")
    return FAIL


def cmd_fuzz(a) -> int:
    lines = fuzz(a.property, a.seed, a.trials, a.out, a.jobs)
    for line in lines:
        print(line)
    fails = sum(1 for line in lines if line.split(" ", 3)[2] == "FAIL")
    print(f"{a.property}: {len(lines) - fails}/{len(lines)} passed", file=sys.stderr)
    return FAIL if fails else OK


def cmd_link(a) -> int:
    texts = [(path, _read(path)) for path in a.inputs]
    if all(is_target_text(t) for _, t in texts):
        tp = None
        for path, t in texts:
            part = _located(path, parse_target, t)
            tp = part if tp is None else _located(path, target_link, tp, part)
        _write(a.output, target_text(tp))
    elif not any(is_target_text(t) for _, t in texts):
        p = None
        for path, t in texts:
            part = _located(path, parse_program, t, partial=True)
            p = part if p is None else _located(path, link, p, part, partial=True)
        _write(a.output, program_text(p))
    else:
        raise CliError("cannot link source and target programs together")
    return OK


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="secomp-kit", description="Compartmentalised compiler workbench.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compile", help="compile a source program to target assembly")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--no-spill", action="store_true",
                   help="reject procedures with more than 8 parameters")
    p.set_defaults(fn=cmd_compile)

    for name, fn, fuel in (("run-source", cmd_run_source, 10_000_000),
                           ("run-target", cmd_run_target, 50_000_000)):
        p = sub.add_parser(name, help=f"run a {name.split('-')[1]} program and record its trace")
        p.add_argument("program")
        p.add_argument("--io")
        p.add_argument("--fuel", type=int, default=fuel)
        p.add_argument("--max-events", type=int)
        p.add_argument("--trace")
        if name == "run-target":
            p.add_argument("--itrace")
        p.set_defaults(fn=fn)

    p = sub.add_parser("backtranslate", help="source program reproducing an informative trace")
    p.add_argument("--interface", required=True)
    p.add_argument("--itrace", required=True)
    p.add_argument("--comp")
    p.add_argument("--max-length", type=int, default=MAX_TRACE_LENGTH,
                   help="refuse traces longer than this many events")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_backtranslate)

    p = sub.add_parser("check-trace", help="check that an informative trace is well formed")
    p.add_argument("itrace")
    p.add_argument("--interface", required=True)
    p.set_defaults(fn=cmd_check_trace)

    p = sub.add_parser("fuzz", help="run a seeded property campaign")
    p.add_argument("property", choices=PROPERTIES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, help="worker processes (default SECOMP_KIT_JOBS or CPU count)")
    p.set_defaults(fn=cmd_fuzz)

    p = sub.add_parser("link", help="link partial source or target programs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_link)
    return ap


def main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
        return a.fn(a)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(main())
