"""Hand-written attacking target compartments.

Each attacker is a target compartment `A` linked with the compiled victim
`V`. The victim is honest; every attack must end Stuck with `A` blamed,
after a well-bracketed, audit-clean trace prefix.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..compile import compile_program
from ..lang import parse_program
from ..memory import audit_violations
from ..sem_target import trun
from ..target import TargetProgram, parse_target, target_link
from ..trace import IoScript, Stuck, UndefEvent, well_bracketed
from .props import Verdict

VICTIM_SOURCE = """
(compartment V
  (exports (main 0 ret) (f 1 ret) (h 0 ret) (g 9 ret))
  (imports (A atk 0 ret) (A atk9 9 ret))
  (syscalls write)
  (global secret 2 private)
  (global out 2 public)
  (proc main () (locals r s)
    (gstore secret 0 424242)
    (call r A.atk)
    (call s A.atk9 1 2 3 4 5 6 7 8 9)
    (call r A.atk)
    (return (op + r s)))
  (proc f (x) (locals) (return (op + x 1)))
  (proc h () (locals) (return 7))
  (proc g (a b c d e f g h i) (locals) (return i))
  (proc hidden () (locals) (return (gload secret 0))))
"""

_A_HEADER = """(tcompartment A
  (interface (exports (atk 0 ret) (atk9 9 ret))
             (imports (V f 1 ret) (V h 0 ret))
             (syscalls read))
  (global stash 2 private)
  (global buf 4 public)
"""

# a well-behaved 9-argument entry point used when an attack lives in `atk`
_HONEST_ATK9 = """  (tproc atk9
    (li a0 0)
    (jr true ra))
"""

_HONEST_ATK = """  (tproc atk
    (li a0 1)
    (jr true ra))
"""


@dataclass(frozen=True)
class Attack:
    name: str
    atk: str            # body of A.atk (instruction forms), or "" for honest
    atk9: str = ""      # body of A.atk9, or "" for honest
    expect: str = "A"


def _proc(name: str, body: str, honest: str) -> str:
    if not body:
        return honest
    return f"  (tproc {name}\n{body})\n"


ATTACKS: tuple[Attack, ...] = (
    Attack("return-address-forgery", """
    (lcode ra V.main 6)
    (li a0 0)
    (jr true ra)"""),
    Attack("sp-confusion", """
    (enter 2)
    (li a0 0)
    (jr true ra)"""),
    Attack("unflagged-cross-call", """
    (li a0 5)
    (jal false V.f)"""),
    Attack("unflagged-cross-return", """
    (li a0 0)
    (jr false ra)"""),
    Attack("spill-frame-write-after-callback", "", """
    (mov t2 sp)
    (li t1 0)
    (store_g stash t1 t2)
    (enter 2)
    (store_f 1 ra)
    (jal true V.h)
    (li t1 0)
    (load_g t3 stash t1)
    (mov sp t3)
    (li t4 99)
    (store_f 1 t4)
    (li a0 0)
    (jr true ra)"""),
    Attack("stale-frame-write-on-reentry", """
    (li t1 1)
    (load_g t3 stash t1)
    (jcond t3 use)
    (store_g stash t1 t1)
    (li t1 0)
    (mov t2 sp)
    (store_g stash t1 t2)
    (li a0 0)
    (jr true ra)
    (label use)
    (li t1 0)
    (load_g t3 stash t1)
    (mov sp t3)
    (li t4 99)
    (store_f 1 t4)
    (li a0 0)
    (jr true ra)"""),
    Attack("non-imported-call", """
    (jal true V.g)"""),
    Attack("non-exported-call", """
    (jal true V.hidden)"""),
    Attack("disallowed-syscall", """
    (la a0 buf)
    (li a1 1)
    (sys write)"""),
    Attack("syscall-on-non-global-buffer", """
    (enter 4)
    (mov a0 sp)
    (li a1 1)
    (sys read)"""),
    Attack("pointer-argument", """
    (la a0 buf)
    (jal true V.f)"""),
    Attack("undefined-argument", """
    (jal true V.f)"""),
    Attack("undefined-return-value", """
    (jr true ra)"""),
    Attack("pointer-return-value", """
    (la a0 buf)
    (jr true ra)"""),
    Attack("cross-compartment-global-read", """
    (li t1 0)
    (load_g a0 V.secret t1)
    (jr true ra)"""),
    Attack("foreign-pointer-store", """
    (la sp V.out)
    (li t1 1)
    (store_f 0 t1)
    (li a0 0)
    (jr true ra)"""),
    Attack("register-leak", """
    (li t1 1)
    (binop add a0 t3 t1)
    (jr true ra)"""),
    Attack("spilled-argument-overread", "", """
    (enter 2)
    (load_arg t0 1)
    (mov a0 t0)
    (jr true ra)"""),
    Attack("sealed-frame-release", "", """
    (leave)
    (li a0 0)
    (jr true ra)"""),
)


def attacker_text(a: Attack) -> str:
    return (_A_HEADER + _proc("atk", a.atk, _HONEST_ATK)
            + _proc("atk9", a.atk9, _HONEST_ATK9)).rstrip("\n") + ")\n"


def victim() -> TargetProgram:
    return compile_program(parse_program(VICTIM_SOURCE, partial=True), check=False)


def attack_program(a: Attack) -> TargetProgram:
    return target_link(victim(), parse_target(attacker_text(a)))


def honest_program() -> TargetProgram:
    """The victim linked with a well-behaved `A`; runs to completion."""
    return target_link(victim(), parse_target(attacker_text(Attack("honest", ""))))


def run_attack(a: Attack, fuel: int = 100_000) -> Verdict:
    tp = attack_program(a)
    log: list = []
    m, it, out = trun(tp, IoScript(), fuel, audit=log)
    name = f"adversarial:{a.name}"
    if type(out) is not Stuck:
        return Verdict(name, False, f"ended {out!r}")
    if out.comp != a.expect:
        return Verdict(name, False, f"blamed {out.comp}, expected {a.expect} ({out.reason})")
    if not m or type(m[-1]) is not UndefEvent or m[-1].comp != a.expect:
        return Verdict(name, False, "trace does not end in Undef of the attacker")
    if not well_bracketed(m[:-1]):
        return Verdict(name, False, "trace prefix is not well bracketed")
    if audit_violations(log):
        return Verdict(name, False, f"memory access across compartments: {audit_violations(log)[0]}")
    return Verdict(name, True, f"Stuck({out.comp}): {out.reason}")


def run_all(fuel: int = 100_000) -> list[Verdict]:
    return [run_attack(a, fuel) for a in ATTACKS]
