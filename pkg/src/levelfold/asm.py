"""Source (sasm) and target (tasm) instruction languages.

A program is a dense tuple of instructions (one instruction per address
unit), a label table and an entry location.  Expressions are either an
``int`` literal or a ``str`` register name.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Union

Expr = Union[int, str]

WORD_BITS = 64
_MASK = (1 << WORD_BITS) - 1

ABI_NAMES = (
    "zero ra sp gp tp t0 t1 t2 s0 s1 a0 a1 a2 a3 a4 a5 a6 a7 "
    "s2 s3 s4 s5 s6 s7 s8 s9 s10 s11 t3 t4 t5 t6"
).split()
_X_ALIASES = {f"x{i}": name for i, name in enumerate(ABI_NAMES)}
_X_ALIASES["fp"] = "s0"

UNARY_OPS = frozenset({"neg", "not", "mv", "seqz", "snez", "load"})
BINARY_OPS = frozenset({
    "add", "addi", "sub", "mul", "div", "divu", "rem", "remu",
    "and", "andi", "or", "ori", "xor", "xori",
    "sll", "slli", "srl", "srli", "sra", "srai",
    "slt", "slti", "sltu", "sltiu",
})
CONTROL_MNEMONICS = ("br", "s.br", "lo.br", "call", "s.call", "lo.call", "ret")
MNEMONICS = tuple(sorted(UNARY_OPS | BINARY_OPS)) + ("store",) + CONTROL_MNEMONICS


def to_signed(v: int) -> int:
    v &= _MASK
    return v - (1 << WORD_BITS) if v >> (WORD_BITS - 1) else v


def canonical_register(name: str) -> str:
    return _X_ALIASES.get(name, name)


# -- instructions -----------------------------------------------------------

@dataclass(frozen=True)
class Unary:
    op: str
    dest: str
    src: Expr

    @property
    def mnemonic(self) -> str:
        return self.op


@dataclass(frozen=True)
class Binary:
    op: str
    dest: str
    src1: Expr
    src2: Expr

    @property
    def mnemonic(self) -> str:
        return self.op


@dataclass(frozen=True)
class Store:
    value: Expr
    addr: Expr
    mnemonic = "store"


@dataclass(frozen=True)
class Branch:
    cond: Expr
    target_true: int
    target_false: int
    mnemonic = "br"


@dataclass(frozen=True)
class SecretBranch:
    cond: Expr
    target_true: int
    target_false: int
    mnemonic = "s.br"


@dataclass(frozen=True)
class Call:
    target: int
    mnemonic = "call"


@dataclass(frozen=True)
class SecretCall:
    flag: bool
    real: int
    dummy: int
    mnemonic = "s.call"


@dataclass(frozen=True)
class Ret:
    mnemonic = "ret"


@dataclass(frozen=True)
class LevelOffsetBranch:
    cond: Expr
    off_true: int
    off_false: int
    bbc: int
    mnemonic = "lo.br"


@dataclass(frozen=True)
class LevelOffsetCall:
    flag: bool
    target: int
    mnemonic = "lo.call"


Instruction = Union[
    Unary, Binary, Store, Branch, SecretBranch, Call, SecretCall, Ret,
    LevelOffsetBranch, LevelOffsetCall,
]

BRANCHES = (Branch, SecretBranch)
TERMINATORS = (Branch, SecretBranch, LevelOffsetBranch, Ret)
SOURCE_ONLY = (SecretBranch, SecretCall)
TARGET_ONLY = (LevelOffsetBranch, LevelOffsetCall)


def is_control(instr: Instruction) -> bool:
    return instr.mnemonic in CONTROL_MNEMONICS


def code_refs(instr: Instruction) -> tuple[int, ...]:
    """Code locations an instruction refers to."""
    if isinstance(instr, BRANCHES):
        return (instr.target_true, instr.target_false)
    if isinstance(instr, (Call, LevelOffsetCall)):
        return (instr.target,)
    if isinstance(instr, SecretCall):
        return (instr.real, instr.dummy)
    return ()


def read_registers(instr: Instruction) -> tuple[str, ...]:
    if isinstance(instr, Unary):
        exprs = (instr.src,)
    elif isinstance(instr, Binary):
        exprs = (instr.src1, instr.src2)
    elif isinstance(instr, Store):
        exprs = (instr.value, instr.addr)
    elif isinstance(instr, (Branch, SecretBranch, LevelOffsetBranch)):
        exprs = (instr.cond,)
    else:
        exprs = ()
    return tuple(e for e in exprs if isinstance(e, str))


def written_register(instr: Instruction) -> str | None:
    if isinstance(instr, (Unary, Binary)):
        return instr.dest
    return None


# -- programs ---------------------------------------------------------------

@dataclass(frozen=True)
class Program:
    code: tuple[Instruction, ...]
    labels: Mapping[str, int] = field(default_factory=dict)
    entry: int = 0

    def __len__(self) -> int:
        return len(self.code)

    def __getitem__(self, loc: int) -> Instruction:
        return self.code[loc]

    @property
    def halt(self) -> int:
        return len(self.code)

    def label_at(self, loc: int) -> str | None:
        names = [n for n, v in self.labels.items() if v == loc]
        return names[0] if names else None

    def labels_at(self, loc: int) -> list[str]:
        return [n for n, v in self.labels.items() if v == loc]

    def same_structure(self, other: "Program") -> bool:
        return self.code == other.code and self.entry == other.entry


def dialect_of(p: Program) -> str:
    """'source', 'target' or 'mixed'. Plain programs count as source."""
    has_src = any(isinstance(i, SOURCE_ONLY) for i in p.code)
    has_tgt = any(isinstance(i, TARGET_ONLY) for i in p.code)
    if has_src and has_tgt:
        return "mixed"
    return "target" if has_tgt else "source"


# -- parsing ----------------------------------------------------------------

class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class MixedDialect(ParseError):
    pass


_IDENT = r"[A-Za-z_.][A-Za-z0-9_.']*"
_IDENT_RE = re.compile(rf"^{_IDENT}$")
_LABEL_RE = re.compile(rf"^({_IDENT})\s*:(.*)$")
_TRIPLE_RE = re.compile(r"^(\d+):(\d+):(\d+)$")


def _split_operands(rest: str) -> list[str]:
    rest = rest.strip()
    if not rest:
        return []
    return [tok for tok in re.split(r"[,\s]+", rest) if tok]


def _parse_expr(tok: str, line: int) -> Expr:
    try:
        return int(tok, 0)
    except ValueError:
        pass
    if not _IDENT_RE.match(tok):
        raise ParseError(line, f"bad operand {tok!r}")
    return canonical_register(tok)


def _parse_reg(tok: str, line: int) -> str:
    e = _parse_expr(tok, line)
    if isinstance(e, int):
        raise ParseError(line, f"expected register, got {tok!r}")
    return e


def _parse_flag(tok: str, line: int) -> bool:
    if tok in ("T", "⊤", "1", "true"):
        return True
    if tok in ("F", "⊥", "0", "false"):
        return False
    raise ParseError(line, f"bad boolean immediate {tok!r}")


def _parse_nat(tok: str, line: int) -> int:
    try:
        v = int(tok, 0)
    except ValueError:
        raise ParseError(line, f"expected integer, got {tok!r}") from None
    if v < 0:
        raise ParseError(line, f"expected non-negative integer, got {tok!r}")
    return v


def _arity(mn: str, ops: list[str], n: int, line: int) -> None:
    if len(ops) != n:
        raise ParseError(line, f"{mn} expects {n} operands, got {len(ops)}")


def _parse_instruction(mn: str, ops: list[str], line: int):
    """Returns an instruction whose location fields may still be label names."""
    if mn in UNARY_OPS:
        _arity(mn, ops, 2, line)
        return Unary(mn, _parse_reg(ops[0], line), _parse_expr(ops[1], line))
    if mn in BINARY_OPS:
        _arity(mn, ops, 3, line)
        return Binary(mn, _parse_reg(ops[0], line), _parse_expr(ops[1], line),
                      _parse_expr(ops[2], line))
    if mn == "store":
        _arity(mn, ops, 2, line)
        return Store(_parse_expr(ops[0], line), _parse_expr(ops[1], line))
    if mn in ("br", "s.br"):
        _arity(mn, ops, 3, line)
        cls = Branch if mn == "br" else SecretBranch
        return cls(_parse_expr(ops[0], line), ops[1], ops[2])
    if mn == "j":
        _arity(mn, ops, 1, line)
        return Branch(0, ops[0], ops[0])
    if mn == "call":
        _arity(mn, ops, 1, line)
        return Call(ops[0])
    if mn == "s.call":
        _arity(mn, ops, 3, line)
        return SecretCall(_parse_flag(ops[0], line), ops[1], ops[2])
    if mn == "ret":
        _arity(mn, ops, 0, line)
        return Ret()
    if mn == "lo.br":
        _arity(mn, ops, 2, line)
        m = _TRIPLE_RE.match(ops[1])
        if not m:
            raise ParseError(line, f"expected offT:offF:bbc, got {ops[1]!r}")
        t, f, bbc = (int(x) for x in m.groups())
        return LevelOffsetBranch(_parse_expr(ops[0], line), t, f, bbc)
    if mn == "lo.j":
        if not ops:
            return LevelOffsetBranch(0, 0, 0, 1)
        _arity(mn, ops, 1, line)
        n = _parse_nat(ops[0], line)
        return LevelOffsetBranch(0, n, n, 2)
    if mn == "lo.call":
        _arity(mn, ops, 2, line)
        return LevelOffsetCall(_parse_flag(ops[0], line), ops[1])
    raise ParseError(line, f"unknown mnemonic {mn!r}")


def _resolve(instr, labels: Mapping[str, int], line: int):
    def loc(name):
        if isinstance(name, int):
            return name
        if name not in labels:
            raise ParseError(line, f"unresolved label {name!r}")
        return labels[name]

    if isinstance(instr, (Branch, SecretBranch)):
        return type(instr)(instr.cond, loc(instr.target_true), loc(instr.target_false))
    if isinstance(instr, Call):
        return Call(loc(instr.target))
    if isinstance(instr, LevelOffsetCall):
        return LevelOffsetCall(instr.flag, loc(instr.target))
    if isinstance(instr, SecretCall):
        return SecretCall(instr.flag, loc(instr.real), loc(instr.dummy))
    return instr


def parse_program(text: str, dialect: str | None = None) -> Program:
    """Parse assembly text.

    ``dialect`` is ``"source"``, ``"target"``, ``"mixed"`` or ``None`` (infer,
    but refuse to mix source-only and target-only instructions).  The entry
    point is the ``main`` label if present, else an ``.entry <label>``
    directive, else location 0.
    """
    labels: dict[str, int] = {}
    pending: list[tuple[object, int]] = []
    entry_label: str | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        while line:
            m = _LABEL_RE.match(line)
            if not m:
                break
            name = m.group(1)
            if name in labels:
                raise ParseError(lineno, f"duplicate label {name!r}")
            labels[name] = len(pending)
            line = m.group(2).strip()
        if not line:
            continue
        # several instructions may share a line, separated by ';'
        for part in (s.strip() for s in line.split(";")):
            if not part:
                continue
            mn, _, rest = part.partition(" ")
            if mn == ".entry":
                entry_label = rest.strip()
                continue
            pending.append((_parse_instruction(mn, _split_operands(rest), lineno), lineno))

    code = tuple(_resolve(ins, labels, ln) for ins, ln in pending)
    if entry_label is not None and entry_label not in labels:
        raise ParseError(0, f"unresolved entry label {entry_label!r}")
    entry = labels.get("main", labels.get(entry_label, 0) if entry_label else 0)

    for loc in labels.values():
        if loc > len(code):
            raise ParseError(0, f"label beyond end of code: {loc}")

    p = Program(code, labels, entry)
    if dialect is None and dialect_of(p) == "mixed":
        raise MixedDialect(0, "source-only and target-only instructions coexist")
    bad = {"source": TARGET_ONLY, "target": SOURCE_ONLY}.get(dialect, ())
    for ins, ln in pending:
        if isinstance(ins, bad):
            raise MixedDialect(ln, f"{ins.mnemonic} not allowed in {dialect} dialect")
    return p


# -- serialization ----------------------------------------------------------

def _fmt_expr(e: Expr) -> str:
    return str(e)


def _fmt_flag(b: bool) -> str:
    return "T" if b else "F"


def format_instruction(instr: Instruction, name_of=str) -> str:
    """Render one instruction; ``name_of`` maps a code location to a label."""
    if isinstance(instr, Unary):
        return f"{instr.op} {instr.dest},{_fmt_expr(instr.src)}"
    if isinstance(instr, Binary):
        return f"{instr.op} {instr.dest},{_fmt_expr(instr.src1)},{_fmt_expr(instr.src2)}"
    if isinstance(instr, Store):
        return f"store {_fmt_expr(instr.value)},{_fmt_expr(instr.addr)}"
    if isinstance(instr, Branch) and instr.cond == 0 and instr.target_true == instr.target_false:
        return f"j {name_of(instr.target_true)}"
    if isinstance(instr, (Branch, SecretBranch)):
        return (f"{instr.mnemonic} {_fmt_expr(instr.cond)},"
                f"{name_of(instr.target_true)},{name_of(instr.target_false)}")
    if isinstance(instr, Call):
        return f"call {name_of(instr.target)}"
    if isinstance(instr, SecretCall):
        return f"s.call {_fmt_flag(instr.flag)},{name_of(instr.real)},{name_of(instr.dummy)}"
    if isinstance(instr, Ret):
        return "ret"
    if isinstance(instr, LevelOffsetBranch):
        if instr.cond == 0 and (instr.off_true, instr.off_false, instr.bbc) == (0, 0, 1):
            return "lo.j"
        if instr.cond == 0 and instr.bbc == 2 and instr.off_true == instr.off_false:
            return f"lo.j {instr.off_true}"
        return f"lo.br {_fmt_expr(instr.cond)},{instr.off_true}:{instr.off_false}:{instr.bbc}"
    if isinstance(instr, LevelOffsetCall):
        return f"lo.call {_fmt_flag(instr.flag)},{name_of(instr.target)}"
    raise TypeError(f"not an instruction: {instr!r}")


def serialize_program(p: Program) -> str:
    names: dict[int, list[str]] = {}
    for name, loc in p.labels.items():
        names.setdefault(loc, []).append(name)
    # referenced locations without a label get a synthetic one
    for instr in p.code:
        for loc in code_refs(instr):
            names.setdefault(loc, [f"_L{loc}"])
    if p.entry != 0 and "main" not in p.labels:
        names.setdefault(p.entry, [f"_L{p.entry}"])

    def name_of(loc: int) -> str:
        return names[loc][0]

    lines = []
    if p.entry != 0 and "main" not in p.labels:
        lines.append(f".entry {name_of(p.entry)}")
    width = max((len(n) for ns in names.values() for n in ns), default=0) + 2
    for loc in range(len(p.code) + 1):
        labs = names.get(loc, [])
        for extra in labs[:-1]:
            lines.append(f"{extra}:")
        prefix = f"{labs[-1]}:" if labs else ""
        if loc == len(p.code):
            if prefix:
                lines.append(prefix)
            break
        lines.append(f"{prefix:<{width}}{format_instruction(p.code[loc], name_of)}".rstrip())
    return "\n".join(lines) + "\n"


def _zero_to_literal(instr: Instruction) -> Instruction:
    def z(e):
        return 0 if e == "zero" else e
    if isinstance(instr, Unary):
        return Unary(instr.op, instr.dest, z(instr.src))
    if isinstance(instr, Binary):
        return Binary(instr.op, instr.dest, z(instr.src1), z(instr.src2))
    if isinstance(instr, Store):
        return Store(z(instr.value), z(instr.addr))
    if isinstance(instr, (Branch, SecretBranch, LevelOffsetBranch)):
        return replace(instr, cond=z(instr.cond))
    return instr


def canonical_text(p: Program) -> str:
    """Label-free rendering for comparing programs.

    Code references print as ``@loc``, the ``zero`` register as ``0``, and the
    entry as a leading ``.entry`` line, so two programs print the same iff they
    have the same instructions at the same addresses.
    """
    lines = [f".entry @{p.entry}"]
    lines += [format_instruction(_zero_to_literal(i), lambda loc: f"@{loc}") for i in p.code]
    return "\n".join(lines) + "\n"


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    code: str
    location: int | None
    message: str

    def __str__(self) -> str:
        where = "-" if self.location is None else str(self.location)
        return f"{self.code}@{where}: {self.message}"


def validate_program(p: Program, dialect: str = "source") -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    forbidden = TARGET_ONLY if dialect == "source" else SOURCE_ONLY if dialect == "target" else ()
    n = len(p.code)
    if n and not 0 <= p.entry < n:
        diags.append(Diagnostic("BAD_ENTRY", p.entry, "entry outside code"))
    for loc, instr in enumerate(p.code):
        if isinstance(instr, forbidden):
            diags.append(Diagnostic("DIALECT_VIOLATION", loc,
                                    f"{instr.mnemonic} not allowed in {dialect} dialect"))
        for ref in code_refs(instr):
            if not 0 <= ref < n:
                diags.append(Diagnostic("DANGLING_LOCATION", loc, f"target {ref} outside code"))
        if isinstance(instr, LevelOffsetBranch):
            if instr.bbc < 1:
                diags.append(Diagnostic("BAD_BBC", loc, "bbc must be positive"))
            elif instr.off_true >= instr.bbc or instr.off_false >= instr.bbc:
                diags.append(Diagnostic("OFFSET_OUT_OF_RANGE", loc,
                                        f"offsets {instr.off_true}:{instr.off_false} vs bbc {instr.bbc}"))
        if isinstance(instr, (Unary, Binary)) and instr.op not in (UNARY_OPS | BINARY_OPS):
            diags.append(Diagnostic("UNKNOWN_OP", loc, instr.op))
        for e in _exprs(instr):
            if isinstance(e, int) and not -(1 << 63) <= e < (1 << 64):
                diags.append(Diagnostic("LITERAL_RANGE", loc, f"{e} does not fit 64 bits"))
    for name, loc in p.labels.items():
        if not 0 <= loc <= n:
            diags.append(Diagnostic("DANGLING_LABEL", loc, name))
    return diags


def _exprs(instr: Instruction) -> Iterable[Expr]:
    if isinstance(instr, Unary):
        return (instr.src,)
    if isinstance(instr, Binary):
        return (instr.src1, instr.src2)
    if isinstance(instr, Store):
        return (instr.value, instr.addr)
    if isinstance(instr, (Branch, SecretBranch, LevelOffsetBranch)):
        return (instr.cond,)
    return ()


# -- ISA effects of non-control instructions --------------------------------

def eval_expr(e: Expr, reg: Mapping[str, int]) -> int:
    if isinstance(e, int):
        return to_signed(e)
    if e == "zero":
        return 0
    return reg.get(e, 0)


def _u(v: int) -> int:
    return v & _MASK


def _div(a: int, b: int) -> int:
    if b == 0:
        return -1
    q = abs(a) // abs(b)
    return to_signed(q if (a < 0) == (b < 0) else -q)


def _rem(a: int, b: int) -> int:
    if b == 0:
        return a
    r = abs(a) % abs(b)
    return r if a >= 0 else -r


_BINARY_FN = {
    "add": lambda a, b: a + b,
    "addi": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": _div,
    "divu": lambda a, b: _MASK if b == 0 else _u(a) // _u(b),
    "rem": _rem,
    "remu": lambda a, b: a if b == 0 else _u(a) % _u(b),
    "and": lambda a, b: a & b,
    "andi": lambda a, b: a & b,
    "or": lambda a, b: a | b,
    "ori": lambda a, b: a | b,
    "xor": lambda a, b: a ^ b,
    "xori": lambda a, b: a ^ b,
    "sll": lambda a, b: a << (b & 63),
    "slli": lambda a, b: a << (b & 63),
    "srl": lambda a, b: _u(a) >> (b & 63),
    "srli": lambda a, b: _u(a) >> (b & 63),
    "sra": lambda a, b: a >> (b & 63),
    "srai": lambda a, b: a >> (b & 63),
    "slt": lambda a, b: int(a < b),
    "slti": lambda a, b: int(a < b),
    "sltu": lambda a, b: int(_u(a) < _u(b)),
    "sltiu": lambda a, b: int(_u(a) < _u(b)),
}

_UNARY_FN = {
    "neg": lambda a: -a,
    "not": lambda a: ~a,
    "mv": lambda a: a,
    "seqz": lambda a: int(a == 0),
    "snez": lambda a: int(a != 0),
}


def execute_isa(instr: Instruction, mem: Mapping[int, int], reg: Mapping[str, int]):
    """Apply a non-control instruction; returns ``(mem', reg')``.

    Inputs are not mutated; unchanged maps are returned as-is.
    """
    if isinstance(instr, Store):
        new_mem = dict(mem)
        new_mem[eval_expr(instr.addr, reg)] = eval_expr(instr.value, reg)
        return new_mem, reg
    if isinstance(instr, Unary):
        a = eval_expr(instr.src, reg)
        value = mem.get(a, 0) if instr.op == "load" else _UNARY_FN[instr.op](a)
    elif isinstance(instr, Binary):
        value = _BINARY_FN[instr.op](eval_expr(instr.src1, reg), eval_expr(instr.src2, reg))
    else:
        raise TypeError(f"{instr.mnemonic} is a control-transfer instruction")
    if instr.dest == "zero":
        return mem, reg
    new_reg = dict(reg)
    new_reg[instr.dest] = to_signed(value)
    return mem, new_reg
