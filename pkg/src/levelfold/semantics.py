"""Small-step interpreter for source and folded target programs.

A configuration carries data memory, registers, the pc, a return stack and
a stack of level contexts ``(bbc, off)``.  Straight-line instructions move
the pc by the current ``bbc`` so that execution walks down one column of
an interleaved level; level-offset branches pick the column of the next
level.  Execution halts when the pc reaches one past the last instruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from .asm import (
    Branch, Call, LevelOffsetBranch, LevelOffsetCall, Program, Ret,
    SecretBranch, SecretCall, TARGET_ONLY, eval_expr, execute_isa,
)

HW_MAX_BBC = 16
HW_MAX_TERMINATING_BBC = 8
HW_STACK_DEPTH = 2


class Stuck(RuntimeError):
    def __init__(self, reason: str, step: int | None = None, pc: int | None = None):
        where = "" if step is None else f" at step {step}"
        super().__init__(f"stuck{where}: {reason}")
        self.reason = reason
        self.step = step
        self.pc = pc


class HwLimit(Stuck):
    pass


class MaxStepsExceeded(RuntimeError):
    pass


class Underflow(ValueError):
    pass


@dataclass(frozen=True)
class LevelContext:
    bbc: int = 1
    off: int = 0


INITIAL_CONTEXT = LevelContext(1, 0)


@dataclass(frozen=True)
class Configuration:
    mem: Mapping[int, int] = field(default_factory=dict)
    reg: Mapping[str, int] = field(default_factory=dict)
    pc: int = 0
    ret_stack: tuple[int, ...] = ()
    ctx_stack: tuple[LevelContext, ...] = (INITIAL_CONTEXT,)

    @property
    def ctx(self) -> LevelContext:
        if not self.ctx_stack:
            raise Stuck("context stack is empty", pc=self.pc)
        return self.ctx_stack[-1]


def initial_configuration(p: Program, reg: Mapping[str, int] | None = None,
                          mem: Mapping[int, int] | None = None) -> Configuration:
    regs = {k: v for k, v in (reg or {}).items() if k != "zero"}
    return Configuration(dict(mem or {}), regs, p.entry)


def slice_addr(pc: int, off: int) -> int:
    if off > pc:
        raise Underflow(f"offset {off} exceeds pc {pc}")
    return pc - off


def next_slice(pc: int, bbc: int, off: int) -> int:
    return slice_addr(pc, off) + bbc


Observer = Callable[[Program, Configuration], object]


@dataclass(frozen=True)
class StepResult:
    next: Configuration
    obs: object


def _fetch(p: Program, c: Configuration):
    if not 0 <= c.pc < len(p):
        raise Stuck(f"no instruction at pc {c.pc}", pc=c.pc)
    return p[c.pc]


def step_target(p: Program, c: Configuration, observer: Observer | None = None,
                hw_mode: bool = False) -> StepResult:
    ins = _fetch(p, c)
    obs = observer(p, c) if observer else None
    ctx = c.ctx
    if isinstance(ins, LevelOffsetBranch):
        taken = eval_expr(ins.cond, c.reg) != 0
        off = ins.off_true if taken else ins.off_false
        if off >= ins.bbc:
            raise Stuck(f"offset {off} not below bbc {ins.bbc}", pc=c.pc)
        if hw_mode and ins.bbc > HW_MAX_BBC:
            raise HwLimit(f"level of {ins.bbc} blocks exceeds {HW_MAX_BBC}", pc=c.pc)
        if hw_mode and ins.bbc == 1 and ctx.bbc > HW_MAX_TERMINATING_BBC:
            raise HwLimit(f"terminating level of {ctx.bbc} blocks exceeds "
                          f"{HW_MAX_TERMINATING_BBC}", pc=c.pc)
        pc = next_slice(c.pc, ctx.bbc, ctx.off) + off
        nxt = replace(c, pc=pc, ctx_stack=c.ctx_stack[:-1] + (LevelContext(ins.bbc, off),))
    elif isinstance(ins, LevelOffsetCall):
        off = 0 if ins.flag else 1
        nxt = _push_call(c, ins.target + off, c.pc + ctx.bbc, LevelContext(2, off), hw_mode)
    elif isinstance(ins, Call):
        nxt = _push_call(c, ins.target, c.pc + ctx.bbc, INITIAL_CONTEXT, hw_mode)
    elif isinstance(ins, Ret):
        nxt = _pop_call(c)
    elif isinstance(ins, Branch):
        if ctx != INITIAL_CONTEXT:
            raise Stuck(f"plain branch under context ({ctx.bbc},{ctx.off})", pc=c.pc)
        taken = eval_expr(ins.cond, c.reg) != 0
        nxt = replace(c, pc=ins.target_true if taken else ins.target_false)
    elif isinstance(ins, (SecretBranch, SecretCall)):
        raise Stuck(f"{ins.mnemonic} is not a target instruction", pc=c.pc)
    else:
        mem, reg = execute_isa(ins, c.mem, c.reg)
        nxt = replace(c, mem=mem, reg=reg, pc=c.pc + ctx.bbc)
    return StepResult(nxt, obs)


def _push_call(c: Configuration, target: int, ret: int, ctx: LevelContext,
               hw_mode: bool) -> Configuration:
    if hw_mode and len(c.ctx_stack) + 1 > HW_STACK_DEPTH:
        raise HwLimit(f"context stack deeper than {HW_STACK_DEPTH}", pc=c.pc)
    return replace(c, pc=target, ret_stack=c.ret_stack + (ret,),
                   ctx_stack=c.ctx_stack + (ctx,))


def _pop_call(c: Configuration) -> Configuration:
    if not c.ret_stack:
        raise Stuck("ret with empty return stack", pc=c.pc)
    if len(c.ctx_stack) < 2:
        raise Stuck("ret would empty the context stack", pc=c.pc)
    return replace(c, pc=c.ret_stack[-1], ret_stack=c.ret_stack[:-1],
                   ctx_stack=c.ctx_stack[:-1])


def step_source(p: Program, c: Configuration, observer: Observer | None = None) -> StepResult:
    ins = _fetch(p, c)
    obs = observer(p, c) if observer else None
    if isinstance(ins, (Branch, SecretBranch)):
        taken = eval_expr(ins.cond, c.reg) != 0
        nxt = replace(c, pc=ins.target_true if taken else ins.target_false)
    elif isinstance(ins, (Call, SecretCall)):
        target = ins.target if isinstance(ins, Call) else (ins.real if ins.flag else ins.dummy)
        nxt = replace(c, pc=target, ret_stack=c.ret_stack + (c.pc + 1,))
    elif isinstance(ins, Ret):
        if not c.ret_stack:
            raise Stuck("ret with empty return stack", pc=c.pc)
        nxt = replace(c, pc=c.ret_stack[-1], ret_stack=c.ret_stack[:-1])
    elif isinstance(ins, TARGET_ONLY):
        raise Stuck(f"{ins.mnemonic} is not a source instruction", pc=c.pc)
    else:
        mem, reg = execute_isa(ins, c.mem, c.reg)
        nxt = replace(c, mem=mem, reg=reg, pc=c.pc + 1)
    return StepResult(nxt, obs)


def is_target(p: Program) -> bool:
    return any(isinstance(i, TARGET_ONLY) for i in p.code)


def make_stepper(p: Program, dialect: str | None = None, hw_mode: bool = False):
    """Pick the semantics for ``p``; programs without folded code run as source."""
    target = is_target(p) if dialect is None else dialect == "target"
    if target:
        return lambda prog, c, obs: step_target(prog, c, obs, hw_mode)
    return step_source


@dataclass(frozen=True)
class RunResult:
    final: Configuration
    trace: tuple
    steps: int
    halt_reason: str          # "halt" or "max-steps"
    pcs: tuple[int, ...]      # pre-state pc of each step
    slices: tuple[int, ...]   # pre-state slice address of each step

    @property
    def halted(self) -> bool:
        return self.halt_reason == "halt"


def run(p: Program, c0: Configuration, observer: Observer | None = None, max_steps: int = 100_000,
        *, dialect: str | None = None, hw_mode: bool = False, strict: bool = False) -> RunResult:
    """Step until the halt location or ``max_steps``.

    With ``strict`` running out of steps raises :class:`MaxStepsExceeded`;
    otherwise the result reports ``halt_reason == "max-steps"``.  A stuck
    step raises :class:`Stuck` annotated with the step index.
    """
    step = make_stepper(p, dialect, hw_mode)
    c = c0
    trace, pcs, slices = [], [], []
    n = 0
    halt = len(p)
    while c.pc != halt:
        if n >= max_steps:
            if strict:
                raise MaxStepsExceeded(f"no halt within {max_steps} steps")
            return RunResult(c, tuple(trace), n, "max-steps", tuple(pcs), tuple(slices))
        try:
            pcs.append(c.pc)
            slices.append(slice_addr(c.pc, c.ctx.off))
            r = step(p, c, observer)
        except Stuck as e:
            e.step = n
            raise
        except Underflow as e:
            raise Stuck(str(e), n, c.pc) from None
        trace.append(r.obs)
        c = r.next
        n += 1
    return RunResult(c, tuple(trace), n, "halt", tuple(pcs), tuple(slices))
