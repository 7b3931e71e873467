"""Observational non-interference and lockstep correctness checks."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .asm import Program
from .fold import CorrMap
from .leakage import SecurityPolicy
from .semantics import Configuration, Stuck, initial_configuration, make_stepper, run


Assignment = tuple[tuple[tuple[str, object], int], ...]


@dataclass(frozen=True)
class Fixture:
    """Concrete values of the public inputs."""

    reg: Mapping[str, int] = field(default_factory=dict)
    mem: Mapping[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class InputSpace:
    policy: SecurityPolicy
    fixtures: tuple[Fixture, ...] = (Fixture(),)

    @classmethod
    def from_policy(cls, policy: SecurityPolicy, seed: int | None = None,
                    extra: int = 3) -> "InputSpace":
        base = Fixture(dict(policy.public_regs), dict(policy.public_mem))
        fixtures = [base]
        if seed is not None:
            rng = random.Random(seed)
            for _ in range(extra):
                fixtures.append(Fixture(
                    {r: rng.randrange(0, 16) for r in base.reg},
                    {a: rng.randrange(0, 16) for a in base.mem},
                ))
        return cls(policy, tuple(fixtures))

    def assignments(self) -> Iterator[Assignment]:
        locs = self.policy.secret_locations()
        for values in itertools.product(*(self.policy.domain(l) for l in locs)):
            yield tuple(zip(locs, values))

    def size(self) -> int:
        n = 1
        for loc in self.policy.secret_locations():
            n *= len(self.policy.domain(loc))
        return n * len(self.fixtures)

    def configuration(self, p: Program, fixture: Fixture, assignment: Assignment) -> Configuration:
        reg = dict(fixture.reg)
        mem = dict(fixture.mem)
        for (space, where), v in assignment:
            if space == "reg":
                reg[where] = v
            else:
                mem[where] = v
        return initial_configuration(p, reg, mem)


def indistinguishable(c1: Configuration, c2: Configuration, policy: SecurityPolicy) -> bool:
    """Configurations agree on every public register and memory cell."""
    regs = (set(c1.reg) | set(c2.reg)) - {"zero"}
    for r in regs:
        if not policy.is_secret_reg(r) and c1.reg.get(r, 0) != c2.reg.get(r, 0):
            return False
    for a in set(c1.mem) | set(c2.mem):
        if not policy.is_secret_addr(a) and c1.mem.get(a, 0) != c2.mem.get(a, 0):
            return False
    return True


@dataclass(frozen=True)
class Counterexample:
    fixture: int
    first: Assignment
    second: Assignment
    step: int
    obs_first: object
    obs_second: object
    cause: str = "observation"


@dataclass(frozen=True)
class OniVerdict:
    status: str                      # "pass", "fail" or "inconclusive"
    counterexample: Counterexample | None = None
    runs: int = 0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _run_safely(p, c, observer, max_steps, dialect, hw_mode):
    try:
        return run(p, c, observer, max_steps, dialect=dialect, hw_mode=hw_mode), None
    except Stuck as e:
        return None, e


def check_oni(p: Program, observer, space: InputSpace, max_steps: int = 100_000, *,
              dialect: str | None = None, hw_mode: bool = False) -> OniVerdict:
    """Compare every execution's trace with the first one of the same fixture.

    Equality is transitive, so comparing against one reference run covers
    all pairs.  A pair where a run does not halt within ``max_steps`` and no
    earlier divergence exists is inconclusive.
    """
    runs = 0
    inconclusive = ""
    for fi, fx in enumerate(space.fixtures):
        ref_assignment = None
        ref = None
        for a in space.assignments():
            res, err = _run_safely(p, space.configuration(p, fx, a), observer, max_steps, dialect, hw_mode)
            runs += 1
            if err is not None:
                return OniVerdict("fail", Counterexample(
                    fi, ref_assignment or a, a, err.step or 0, None, None, f"stuck: {err.reason}"),
                    runs, str(err))
            if ref is None:
                ref, ref_assignment = res, a
                if not res.halted:
                    inconclusive = f"fixture {fi}: no halt within {max_steps} steps"
                continue
            for i, (o1, o2) in enumerate(zip(ref.trace, res.trace)):
                if o1 != o2:
                    return OniVerdict("fail", Counterexample(fi, ref_assignment, a, i, o1, o2), runs)
            if not (ref.halted and res.halted):
                inconclusive = f"fixture {fi}: no halt within {max_steps} steps"
                continue
            if len(ref.trace) != len(res.trace):
                i = min(len(ref.trace), len(res.trace))
                get = lambda t: t[i] if i < len(t) else None  # noqa: E731
                return OniVerdict("fail", Counterexample(
                    fi, ref_assignment, a, i, get(ref.trace), get(res.trace), "length"), runs)
    if inconclusive:
        return OniVerdict("inconclusive", None, runs, inconclusive)
    return OniVerdict("pass", None, runs)


def replay(p: Program, observer, space: InputSpace, cex: Counterexample,
           max_steps: int = 100_000, **kw) -> tuple[object, object]:
    """Re-run a counterexample and return the two observations at its step."""
    fx = space.fixtures[cex.fixture]
    out = []
    for a in (cex.first, cex.second):
        res = run(p, space.configuration(p, fx, a), observer, max_steps, **kw)
        out.append(res.trace[cex.step] if cex.step < len(res.trace) else None)
    return out[0], out[1]


# -- correctness -----------------------------------------------------------------

def _nonzero(m: Mapping) -> dict:
    return {k: v for k, v in m.items() if v != 0 and k != "zero"}


@dataclass(frozen=True)
class Violation:
    fixture: int
    assignment: Assignment
    step: int
    cause: str


@dataclass(frozen=True)
class CorrectnessVerdict:
    status: str
    violation: Violation | None = None
    runs: int = 0

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _lockstep(src: Program, tgt: Program, corr: CorrMap, c_src: Configuration,
              c_tgt: Configuration, max_steps: int) -> tuple[str, int, str]:
    step_s = make_stepper(src, "source")
    step_t = make_stepper(tgt, "target")
    for n in range(max_steps + 1):
        if not corr.related(c_src.pc, c_tgt.pc):
            return "fail", n, f"pc {c_src.pc} not related to {c_tgt.pc}"
        if _nonzero(c_src.reg) != _nonzero(c_tgt.reg):
            return "fail", n, "registers differ"
        if _nonzero(c_src.mem) != _nonzero(c_tgt.mem):
            return "fail", n, "memory differs"
        if c_src.pc == len(src):
            return "pass", n, ""
        if n == max_steps:
            break
        try:
            c_src = step_s(src, c_src, None).next
        except Stuck as e:
            return "fail", n, f"source stuck: {e.reason}"
        try:
            c_tgt = step_t(tgt, c_tgt, None).next
        except Stuck as e:
            return "fail", n, f"target stuck: {e.reason}"
    return "inconclusive", max_steps, f"no halt within {max_steps} steps"


def check_correctness(src: Program, tgt: Program, corr: CorrMap, space: InputSpace,
                      max_steps: int = 100_000) -> CorrectnessVerdict:
    """Run source and target side by side on every input of ``space``.

    After each step memory and registers must agree and the two pcs must
    be related by ``corr``.
    """
    runs = 0
    inconclusive = None
    for fi, fx in enumerate(space.fixtures):
        for a in space.assignments():
            runs += 1
            status, n, cause = _lockstep(src, tgt, corr, space.configuration(src, fx, a),
                                         space.configuration(tgt, fx, a), max_steps)
            if status == "fail":
                return CorrectnessVerdict("fail", Violation(fi, a, n, cause), runs)
            if status == "inconclusive" and inconclusive is None:
                inconclusive = Violation(fi, a, n, cause)
    if inconclusive:
        return CorrectnessVerdict("inconclusive", inconclusive, runs)
    return CorrectnessVerdict("pass", None, runs)


def check_final_equivalence(p: Program, q: Program, space: InputSpace, max_steps: int = 100_000,
                            ignore: Iterable[str] = ()) -> CorrectnessVerdict:
    """Both programs halt with equal memory and registers (minus ``ignore``)."""
    skip = set(ignore)
    runs = 0
    for fi, fx in enumerate(space.fixtures):
        for a in space.assignments():
            runs += 1
            r1 = run(p, space.configuration(p, fx, a), None, max_steps)
            r2 = run(q, space.configuration(q, fx, a), None, max_steps)
            if not (r1.halted and r2.halted):
                return CorrectnessVerdict("inconclusive", Violation(fi, a, max_steps, "no halt"), runs)
            regs1 = {k: v for k, v in _nonzero(r1.final.reg).items() if k not in skip}
            regs2 = {k: v for k, v in _nonzero(r2.final.reg).items() if k not in skip}
            if regs1 != regs2 or _nonzero(r1.final.mem) != _nonzero(r2.final.mem):
                return CorrectnessVerdict("fail", Violation(fi, a, r1.steps, "final state differs"), runs)
    return CorrectnessVerdict("pass", None, runs)
