"""Mask-based linearization of secret-dependent diamonds (baseline).

Both sides of a secret branch run unconditionally; every register write is
blended with the old value under an all-ones/all-zeros mask so only the
selected side changes state.  One nested level of branching is supported.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .asm import (
    Binary, Branch, Call, Instruction, Program, Ret, SecretBranch, SecretCall,
    Store, Unary, read_registers, written_register,
)
from .cfg import ControlFlowGraph, SecretRegion, build_cfg
from .fold import FoldError, plan_folding

SCRATCH = ("t1", "t2", "t3", "t4", "t5", "t6")


class UnsupportedShape(ValueError):
    pass


@dataclass(frozen=True)
class MaskPair:
    true_mask: str
    false_mask: str


TOP = MaskPair("t1", "t2")
NESTED = MaskPair("t5", "t6")


def mask_derivation(cond) -> list[Instruction]:
    """t1 = all ones iff ``cond`` is nonzero; t2 = ~t1."""
    return [Unary("seqz", "t1", cond), Binary("addi", "t1", "t1", -1), Unary("not", "t2", "t1")]


def masked(ins: Instruction, m: MaskPair) -> list[Instruction]:
    """Blend the write of ``ins`` under ``m.true_mask``."""
    if isinstance(ins, Store):
        raise UnsupportedShape("stores inside a secret region")
    if isinstance(ins, (Call, SecretCall, Ret)):
        raise UnsupportedShape(f"{ins.mnemonic} inside a secret region")
    d = written_register(ins)
    if d is None or d == "zero":
        return [ins]
    return [
        Binary("and", "t3", d, m.false_mask),
        ins,
        Binary("and", d, d, m.true_mask),
        Binary("or", d, d, "t3"),
    ]


def _side(g: ControlFlowGraph, bid: int, exit_: int, m: MaskPair, depth: int) -> list[Instruction]:
    if bid == exit_:
        return []
    b = g.blocks[bid]
    out: list[Instruction] = []
    body, term = b.instrs, b.terminator
    if isinstance(term, (Branch, SecretBranch)):
        body = body[:-1]
    for ins in body:
        out.extend(masked(ins, m))
    if not isinstance(term, (Branch, SecretBranch)):
        if g.succs[bid] != (exit_,):
            raise UnsupportedShape(f"{g.name(bid)} does not lead to the region exit")
        return out
    t, f = g.block_at(term.target_true), g.block_at(term.target_false)
    if t == f:
        if t != exit_:
            raise UnsupportedShape(f"{g.name(bid)} jumps inside the region")
        return out
    if depth >= 1:
        raise UnsupportedShape("nesting deeper than two levels")
    out += [Unary("seqz", "t4", term.cond), Binary("addi", "t4", "t4", -1),
            Binary("and", "t5", "t4", m.true_mask), Unary("not", "t6", "t5")]
    out += _side(g, t, exit_, NESTED, depth + 1)
    out += [Unary("not", "t5", "t4"), Binary("and", "t5", "t5", m.true_mask), Unary("not", "t6", "t5")]
    out += _side(g, f, exit_, NESTED, depth + 1)
    return out


def linearize_region(g: ControlFlowGraph, region: SecretRegion) -> list[Instruction]:
    """Straight-line replacement for the region's entry block and body."""
    entry = g.blocks[region.entry]
    term = entry.terminator
    out = list(entry.instrs[:-1])
    out += mask_derivation(term.cond)
    t = g.block_at(term.target_true)
    f = g.block_at(term.target_false)
    out += _side(g, t, region.exit, TOP, 0)
    out += _side(g, f, region.exit, MaskPair(TOP.false_mask, TOP.true_mask), 0)
    return out


@dataclass(frozen=True)
class _Src:
    loc: int


def linearize(p: Program) -> Program:
    """Linearize every outermost secret region of ``p``."""
    if any(isinstance(i, SecretCall) for i in p.code):
        raise UnsupportedShape("secret calls cannot be linearized")
    for ins in p.code:
        if set(read_registers(ins)) & set(SCRATCH) or written_register(ins) in SCRATCH:
            raise UnsupportedShape(f"{ins.mnemonic} uses a reserved mask register")
    try:
        plan = plan_folding(p)
    except FoldError as e:
        raise UnsupportedShape(str(e)) from None
    if not plan.regions:
        return p
    g = build_cfg(p, strict=False)
    regions = {}
    for r in plan.regions:
        rg = build_cfg(p, entry=plan.roots[r.entry], strict=False)
        regions[g.blocks[r.entry].start] = (rg, r)
    skip = {bid for rg, r in regions.values() for bid in r.body}

    code: list = []
    labels: dict[str, int] = {}
    block_at: dict[int, int] = {}
    fallthroughs: list[tuple[int, int]] = []
    emitted: set[int] = set()

    def emit(bid: int) -> None:
        if bid in emitted or bid in skip:
            return
        emitted.add(bid)
        b = g.blocks[bid]
        block_at[b.start] = len(code)
        for name in p.labels_at(b.start):
            labels[name] = len(code)
        if b.start in regions:
            rg, r = regions[b.start]
            code.extend(_placeholder(i) for i in linearize_region(rg, r))
            emit(r.exit)
            return
        code.extend(_placeholder(i) for i in b.instrs)
        if g.falls_through(bid) and b.end < len(p):
            fallthroughs.append((len(code), b.end))

    for b in g.blocks:
        emit(b.id)
    for name in p.labels_at(len(p)):
        labels[name] = len(code)
    block_at[len(p)] = len(code)
    for pos, succ in fallthroughs:
        if block_at.get(succ) != pos:
            raise UnsupportedShape("fallthrough successor is not laid out next")

    def loc(x):
        return block_at[x.loc] if isinstance(x, _Src) else x

    out = []
    for ins in code:
        if isinstance(ins, (Branch, SecretBranch)):
            ins = dataclasses.replace(ins, target_true=loc(ins.target_true),
                                      target_false=loc(ins.target_false))
        elif isinstance(ins, Call):
            ins = Call(loc(ins.target))
        out.append(ins)
    return Program(tuple(out), labels, block_at[p.entry])


def _placeholder(ins: Instruction) -> Instruction:
    if isinstance(ins, (Branch, SecretBranch)):
        return dataclasses.replace(ins, target_true=_Src(ins.target_true),
                                   target_false=_Src(ins.target_false))
    if isinstance(ins, Call):
        return Call(_Src(ins.target))
    return ins
