"""Leakage contracts, observations and security policies.

A contract partitions mnemonics into leakage classes, lists which operand
positions of a mnemonic leak their value, and names a canonical no-op
("dummy") per class.  The weak observer sees the class and unsafe operand
values; the strong observer additionally sees the address of the slice the
pc is in.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

from .asm import (
    BINARY_OPS, CONTROL_MNEMONICS, MNEMONICS, UNARY_OPS, Binary, Branch, Call,
    Instruction, ParseError, Program, Store, Unary, eval_expr, execute_isa, is_control,
    parse_program,
)
from .semantics import Configuration, slice_addr


class ContractError(ValueError):
    pass


class UnknownClass(KeyError):
    pass


POSITIONS = ("only", "left", "right")


@dataclass(frozen=True)
class LeakageContract:
    class_of: Mapping[str, str]
    unsafe: Mapping[str, frozenset[str]] = field(default_factory=dict)
    dummies: Mapping[str, Instruction] = field(default_factory=dict)
    blocklist: frozenset[str] = frozenset()
    granularity: Mapping[str, int] = field(default_factory=dict)

    def classify(self, instr: Instruction) -> str:
        return self.class_of[instr.mnemonic]

    def is_safe(self, mnemonic: str) -> bool:
        return not self.unsafe.get(mnemonic) and mnemonic not in ("br", "call")

    def leaked_values(self, instr: Instruction, reg: Mapping[str, int]) -> tuple[int, ...]:
        if isinstance(instr, Branch):
            return (int(eval_expr(instr.cond, reg) != 0),)
        if isinstance(instr, Call):
            return (instr.target,)
        positions = self.unsafe.get(instr.mnemonic, frozenset())
        if not positions:
            return ()
        if isinstance(instr, Unary):
            exprs = {"only": instr.src}
        elif isinstance(instr, Binary):
            exprs = {"left": instr.src1, "right": instr.src2}
        elif isinstance(instr, Store):
            exprs = {"left": instr.value, "right": instr.addr}
        else:
            return ()
        mask = self.granularity.get(instr.mnemonic)
        out = []
        for pos in POSITIONS:
            if pos in positions and pos in exprs:
                v = eval_expr(exprs[pos], reg)
                out.append(v & ~(mask - 1) if mask else v)
        return tuple(out)


def _operand_shape(mnemonic: str) -> frozenset[str]:
    if mnemonic in UNARY_OPS:
        return frozenset({"only"})
    if mnemonic in BINARY_OPS or mnemonic == "store":
        return frozenset({"left", "right"})
    return frozenset()


def _is_noop(instr: Instruction, rng: random.Random) -> bool:
    names = ["t0", "t1", "a0", "s1", "sp"] + [e for e in vars(instr).values() if isinstance(e, str)]
    for _ in range(8):
        reg = {n: rng.randrange(-2**63, 2**63) for n in names if n != "zero"}
        mem = {rng.randrange(0, 64): rng.randrange(-100, 100) for _ in range(8)}
        mem2, reg2 = execute_isa(instr, mem, reg)
        if mem2 != mem or reg2 != reg:
            return False
    return True


def load_contract(text: str) -> LeakageContract:
    """Parse and validate a contract file.  Every mnemonic must have a class."""
    class_of: dict[str, str] = {}
    unsafe: dict[str, frozenset[str]] = {}
    dummy_text: dict[str, str] = {}
    blocklist: set[str] = set()
    granularity: dict[str, int] = {}
    known = set(MNEMONICS)

    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, body = line.partition(":")
        if not sep:
            raise ContractError(f"line {n}: expected '<directive>: <values>'")
        words = head.split()
        items = [x.strip() for x in body.split(",") if x.strip()]
        kind = words[0]
        if kind == "class" and len(words) == 2:
            for m in items:
                if m not in known:
                    raise ContractError(f"line {n}: unknown mnemonic {m!r}")
                if m in class_of:
                    raise ContractError(f"line {n}: {m} already in class {class_of[m]}")
                class_of[m] = words[1]
        elif kind == "unsafe" and len(words) == 2:
            m = words[1]
            if m not in known:
                raise ContractError(f"line {n}: unsafe entry for unknown mnemonic {m!r}")
            if m in CONTROL_MNEMONICS:
                raise ContractError(f"line {n}: leakage of {m} is fixed, not configurable")
            pos = frozenset(items)
            if not pos or not pos <= _operand_shape(m):
                raise ContractError(f"line {n}: bad operand positions {sorted(pos)} for {m}")
            unsafe[m] = pos
        elif kind == "dummy" and len(words) == 2:
            dummy_text[words[1]] = body.strip()
        elif kind == "blocklist" and len(words) == 1:
            for m in items:
                if m not in known:
                    raise ContractError(f"line {n}: unknown mnemonic {m!r} in blocklist")
            blocklist.update(items)
        elif kind == "granularity" and len(words) == 2:
            try:
                g = int(body.strip(), 0)
            except ValueError:
                raise ContractError(f"line {n}: granularity must be an integer") from None
            if g <= 0 or g & (g - 1):
                raise ContractError(f"line {n}: granularity {g} is not a power of two")
            granularity[words[1]] = g
        else:
            raise ContractError(f"line {n}: unknown directive {head!r}")

    missing = sorted(known - class_of.keys())
    if missing:
        raise ContractError("no leakage class for " + ", ".join(missing))
    members: dict[str, list[str]] = {}
    for m, c in class_of.items():
        members.setdefault(c, []).append(m)
    for m in CONTROL_MNEMONICS:
        if members[class_of[m]] != [m]:
            raise ContractError(f"control-transfer {m} must have a class of its own")

    rng = random.Random(0)
    dummies: dict[str, Instruction] = {}
    for cls, src in dummy_text.items():
        if cls not in members:
            raise ContractError(f"dummy for unknown class {cls!r}")
        try:
            prog = parse_program(src)
        except ParseError as e:
            raise ContractError(f"dummy {cls}: {e.reason}") from None
        if len(prog.code) != 1:
            raise ContractError(f"dummy {cls} must be a single instruction")
        ins = prog.code[0]
        if is_control(ins) or class_of[ins.mnemonic] != cls:
            raise ContractError(f"dummy {cls}: {ins.mnemonic} is not in class {cls}")
        if not _is_noop(ins, rng):
            raise ContractError(f"dummy {cls}: {src!r} changes architectural state")
        dummies[cls] = ins
    return LeakageContract(class_of, unsafe, dummies, frozenset(blocklist), granularity)


def default_contract_text() -> str:
    return resources.files("levelfold").joinpath("data/default.contract").read_text()


_DEFAULT: LeakageContract | None = None


def default_contract() -> LeakageContract:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_contract(default_contract_text())
    return _DEFAULT


def compose_dummy(class_id: str, k: LeakageContract | None = None) -> Instruction:
    k = k or default_contract()
    if class_id not in k.dummies:
        raise UnknownClass(class_id)
    return k.dummies[class_id]


# -- observations --------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    class_id: str
    leaked: tuple[int, ...] = ()
    slice_addr: int | None = None

    def weak(self) -> "Observation":
        return Observation(self.class_id, self.leaked)

    def render(self) -> str:
        return " ".join([self.class_id, *(str(v) for v in self.leaked)])


def obs_weak(p: Program, c: Configuration, k: LeakageContract) -> Observation:
    ins = p[c.pc]
    return Observation(k.classify(ins), k.leaked_values(ins, c.reg))


def obs_strong(p: Program, c: Configuration, k: LeakageContract) -> Observation:
    ins = p[c.pc]
    return Observation(k.classify(ins), k.leaked_values(ins, c.reg), slice_addr(c.pc, c.ctx.off))


@dataclass(frozen=True)
class Observer:
    """Callable observer for the interpreter: ``mode`` is 'weak' or 'strong'."""

    mode: str = "weak"
    contract: LeakageContract | None = None

    def __post_init__(self):
        if self.mode not in ("weak", "strong"):
            raise ValueError(f"unknown observer mode {self.mode!r}")

    def __call__(self, p: Program, c: Configuration) -> Observation:
        k = self.contract or default_contract()
        return (obs_strong if self.mode == "strong" else obs_weak)(p, c, k)


# -- security policies ---------------------------------------------------------

@dataclass(frozen=True)
class SecurityPolicy:
    """Which registers and memory cells hold secrets.

    Besides the secret locations a policy file may pin public inputs
    (``public reg``/``public mem``) and restrict the values a secret ranges
    over (``domain``); secrets default to the domain {0, 1}.
    """

    secret_regs: tuple[str, ...] = ()
    secret_mem: tuple[tuple[int, int], ...] = ()
    public_regs: Mapping[str, int] = field(default_factory=dict)
    public_mem: Mapping[int, int] = field(default_factory=dict)
    domains: Mapping[tuple[str, object], tuple[int, ...]] = field(default_factory=dict)

    def is_secret_reg(self, name: str) -> bool:
        return name in self.secret_regs

    def is_secret_addr(self, addr: int) -> bool:
        return any(lo <= addr <= hi for lo, hi in self.secret_mem)

    def secret_locations(self) -> list[tuple[str, object]]:
        locs: list[tuple[str, object]] = [("reg", r) for r in self.secret_regs]
        for lo, hi in self.secret_mem:
            locs.extend(("mem", a) for a in range(lo, hi + 1))
        return locs

    def domain(self, loc: tuple[str, object]) -> tuple[int, ...]:
        return self.domains.get(loc, (0, 1))


_RANGE = re.compile(r"^(-?\w+)\s*\.\.\s*(-?\w+)$")


def _addr_range(tok: str, n: int) -> tuple[int, int]:
    m = _RANGE.match(tok.strip())
    try:
        if m:
            lo, hi = int(m.group(1), 0), int(m.group(2), 0)
        else:
            lo = hi = int(tok.strip(), 0)
    except ValueError:
        raise ValueError(f"line {n}: bad address {tok!r}") from None
    if lo > hi:
        raise ValueError(f"line {n}: empty range {tok!r}")
    return lo, hi


def _values(text: str, n: int) -> tuple[int, ...]:
    try:
        return tuple(int(v.strip(), 0) for v in text.split(",") if v.strip())
    except ValueError:
        raise ValueError(f"line {n}: bad value list {text!r}") from None


def parse_policy(text: str) -> SecurityPolicy:
    regs: list[str] = []
    mem: list[tuple[int, int]] = []
    pub_regs: dict[str, int] = {}
    pub_mem: dict[int, int] = {}
    domains: dict[tuple[str, object], tuple[int, ...]] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        lhs, eq, rhs = line.partition("=")
        words = lhs.split(None, 2)
        if len(words) != 3 or words[1] not in ("reg", "mem"):
            raise ValueError(f"line {n}: cannot parse {raw!r}")
        kind, space, where = words
        if kind == "secret" and not eq:
            if space == "reg":
                regs.append(where.strip())
            else:
                mem.append(_addr_range(where, n))
        elif kind == "public" and eq:
            vals = _values(rhs, n)
            if space == "reg":
                if len(vals) != 1:
                    raise ValueError(f"line {n}: one value expected")
                pub_regs[where.strip()] = vals[0]
            else:
                lo, hi = _addr_range(where, n)
                if len(vals) not in (1, hi - lo + 1):
                    raise ValueError(f"line {n}: {len(vals)} values for {hi - lo + 1} cells")
                for i, a in enumerate(range(lo, hi + 1)):
                    pub_mem[a] = vals[i] if len(vals) > 1 else vals[0]
        elif kind == "domain" and eq:
            vals = _values(rhs, n)
            if not vals:
                raise ValueError(f"line {n}: empty domain")
            if space == "reg":
                domains[("reg", where.strip())] = vals
            else:
                lo, hi = _addr_range(where, n)
                for a in range(lo, hi + 1):
                    domains[("mem", a)] = vals
        else:
            raise ValueError(f"line {n}: cannot parse {raw!r}")
    pol = SecurityPolicy(tuple(regs), tuple(mem), pub_regs, pub_mem, domains)
    clash = [r for r in pub_regs if pol.is_secret_reg(r)] + \
            [str(a) for a in pub_mem if pol.is_secret_addr(a)]
    if clash:
        raise ValueError("locations both public and secret: " + ", ".join(clash))
    return pol
