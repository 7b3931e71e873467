"""Folding balanced secret-dependent regions and function pairs.

The building blocks mirror the classic pipeline: terminators are rewritten
into level-offset branches (:func:`insert_lob`), the blocks of one level
are interleaved instruction by instruction (:func:`fold_level`), and
levels are laid out back to back (:func:`fold_region`,
:func:`fold_function`).  :func:`transform` assembles a whole program and
the location correspondence used by the lockstep checker.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .asm import (
    Branch, Call, Diagnostic, Instruction, LevelOffsetBranch, LevelOffsetCall,
    Program, Ret, SecretBranch, SecretCall, TARGET_ONLY,
)
from .cfg import (
    BasicBlock, ControlFlowGraph, NoUniqueExit, SecretRegion, build_cfg,
    function_pair_levels, level_structure, secret_regions,
    validate_foldable, validate_function_pair,
)


class FoldError(ValueError):
    def __init__(self, diagnostics: Sequence[Diagnostic], context: str = ""):
        self.diagnostics = list(diagnostics)
        self.context = context
        head = f"{context}: " if context else ""
        super().__init__(head + "; ".join(str(d) for d in self.diagnostics))


# -- correspondence -----------------------------------------------------------

@dataclass
class CorrMap:
    """Relation between source and target locations (one-to-many)."""

    pairs: dict[int, set[int]] = field(default_factory=dict)

    def add(self, src: int, tgt: int) -> None:
        self.pairs.setdefault(src, set()).add(tgt)

    def related(self, src: int, tgt: int) -> bool:
        return tgt in self.pairs.get(src, ())

    def targets(self, src: int) -> set[int]:
        return self.pairs.get(src, set())

    def dumps(self) -> str:
        return "".join(
            f"{s} -> {','.join(str(t) for t in sorted(ts))}\n"
            for s, ts in sorted(self.pairs.items())
        )

    @classmethod
    def loads(cls, text: str) -> "CorrMap":
        cm = cls()
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            src, sep, rest = line.partition("->")
            if not sep:
                raise ValueError(f"line {n}: expected 'src -> tgt[,tgt]'")
            for t in rest.split(","):
                cm.add(int(src), int(t))
        return cm

    @classmethod
    def identity(cls, n: int) -> "CorrMap":
        cm = cls()
        for i in range(n + 1):
            cm.add(i, i)
        return cm


# -- algorithms on levels -----------------------------------------------------

def insert_lob(level: Sequence[BasicBlock], next_level: Sequence[BasicBlock]) -> list[BasicBlock]:
    """Rewrite each block's branch terminator into a level-offset branch.

    Offsets index blocks of ``next_level`` (which is empty for the last
    level of a function, where only ``ret`` is accepted).
    """
    index = {b.start: i for i, b in enumerate(next_level)}
    out = []
    for b in level:
        term = b.terminator
        if isinstance(term, Ret):
            out.append(b)
            continue
        loc = b.end - 1
        if not isinstance(term, (Branch, SecretBranch)):
            raise FoldError([Diagnostic("BAD_TERMINATOR", loc, f"{term.mnemonic} cannot end a folded block")])
        missing = [t for t in (term.target_true, term.target_false) if t not in index]
        if missing:
            raise FoldError([Diagnostic("TARGET_NOT_IN_NEXT_LEVEL", loc, f"target {missing[0]}")])
        lob = LevelOffsetBranch(term.cond, index[term.target_true], index[term.target_false],
                                len(next_level))
        out.append(dataclasses.replace(b, instrs=b.instrs[:-1] + (lob,)))
    return out


def fold_level(level: Sequence[Sequence]) -> tuple:
    """Interleave equally long blocks: ``out[j*bbc + i] == level[i][j]``.

    Accepts BasicBlocks or plain sequences of instructions.
    """
    rows = [tuple(b.instrs if isinstance(b, BasicBlock) else b) for b in level]
    if not rows:
        return ()
    n = len(rows[0])
    if any(len(r) != n for r in rows):
        raise FoldError([Diagnostic("UNEQUAL_LEVEL_LENGTHS", None,
                                    "lengths " + ",".join(str(len(r)) for r in rows))])
    return tuple(rows[i][j] for j in range(n) for i in range(len(rows)))


def unfold_level(folded: Sequence, bbc: int) -> list[tuple]:
    """Inverse of :func:`fold_level`."""
    if bbc <= 0 or len(folded) % bbc:
        raise ValueError(f"{len(folded)} instructions do not split into {bbc} blocks")
    return [tuple(folded[i::bbc]) for i in range(bbc)]


@dataclass(frozen=True)
class FoldedLevel:
    bbc: int
    instrs: tuple
    # source location -> offset inside this folded level
    slots: Mapping[int, int]


def _fold_levels(levels: list[list[BasicBlock]], after_last: list[BasicBlock]) -> list[FoldedLevel]:
    out = []
    for i, lvl in enumerate(levels):
        nxt = levels[i + 1] if i + 1 < len(levels) else after_last
        rewritten = insert_lob(lvl, nxt)
        bbc = len(lvl)
        slots = {loc: j * bbc + k
                 for k, b in enumerate(lvl) for j, loc in enumerate(b.locations)}
        out.append(FoldedLevel(bbc, fold_level(rewritten), slots))
    return out


@dataclass(frozen=True)
class FoldedRegion:
    region: SecretRegion
    levels: tuple[FoldedLevel, ...]

    @property
    def size(self) -> int:
        return sum(len(lv.instrs) for lv in self.levels)


def fold_region(g: ControlFlowGraph, region: SecretRegion, *, hw_mode: bool = False,
                blocklist: Iterable[str] = ()) -> FoldedRegion:
    """Fold every level of ``region``; the exit block itself stays unfolded."""
    diags = validate_foldable(g, region, hw_mode=hw_mode, blocklist=blocklist)
    if diags:
        raise FoldError(diags, f"region at {g.name(region.entry)}")
    ls = level_structure(g, region)
    levels = [[g.blocks[b] for b in lvl] for lvl in ls.levels[:-1]]
    return FoldedRegion(region, tuple(_fold_levels(levels, [g.blocks[region.exit]])))


@dataclass(frozen=True)
class FoldedFunction:
    label: str
    real: int
    dummy: int
    levels: tuple[FoldedLevel, ...]

    @property
    def size(self) -> int:
        return sum(len(lv.instrs) for lv in self.levels)


def fold_function(g_real: ControlFlowGraph, g_dummy: ControlFlowGraph, label: str, *,
                  hw_mode: bool = False, blocklist: Iterable[str] = ()) -> FoldedFunction:
    """Fold a function together with its dummy; real blocks come first in each level."""
    diags = validate_function_pair(g_real, g_dummy, hw_mode=hw_mode, blocklist=blocklist)
    if diags:
        raise FoldError(diags, f"function pair {label}")
    levels = [[g_real.blocks[b] for b in lvl] for lvl in function_pair_levels(g_real, g_dummy)]
    folded = _fold_levels(levels, [])
    return FoldedFunction(label, g_real.blocks[g_real.entry].start,
                          g_dummy.blocks[g_dummy.entry].start, tuple(folded))


def insert_locall(instrs: Sequence[Instruction], folded_at: Mapping[tuple[int, int], int]) -> tuple:
    """Replace ``s.call b,f,f'`` by ``lo.call b,<folded f/f'>``.

    ``folded_at`` maps (real, dummy) entry pairs to the folded function's
    location.
    """
    out = []
    for ins in instrs:
        if isinstance(ins, SecretCall):
            key = (ins.real, ins.dummy)
            if key not in folded_at:
                raise FoldError([Diagnostic("UNREGISTERED_FUNCTION_PAIR", None, f"{key}")])
            ins = LevelOffsetCall(ins.flag, folded_at[key])
        out.append(ins)
    return tuple(out)


# -- whole-program transformation ---------------------------------------------

@dataclass(frozen=True)
class FunctionPair:
    real: int
    dummy: int
    label: str


@dataclass(frozen=True)
class FoldPlan:
    regions: tuple[SecretRegion, ...]
    pairs: tuple[FunctionPair, ...]
    kept_functions: frozenset[int]
    # region entry block -> start of the procedure containing it
    roots: Mapping[int, int] = field(default_factory=dict)


def _call_targets(p: Program) -> tuple[set[int], list[tuple[int, int]]]:
    plain: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for ins in p.code:
        if isinstance(ins, Call):
            plain.add(ins.target)
        elif isinstance(ins, SecretCall) and (ins.real, ins.dummy) not in pairs:
            pairs.append((ins.real, ins.dummy))
    return plain, pairs


def _name(p: Program, loc: int) -> str:
    return p.label_at(loc) or f"_L{loc}"


def plan_folding(p: Program) -> FoldPlan:
    """Decide which regions and function pairs get folded."""
    plain, pair_locs = _call_targets(p)
    pairs = tuple(FunctionPair(r, d, f"f{_name(p, r)}{_name(p, d)}") for r, d in pair_locs)
    paired = {x for pr in pairs for x in (pr.real, pr.dummy)}
    roots = [p.entry] + sorted(t for t in plain if t != p.entry)
    regions: list[SecretRegion] = []
    root_of: dict[int, int] = {}
    for root in roots:
        g = build_cfg(p, entry=root, strict=False)
        if not any(isinstance(g.blocks[b].terminator, SecretBranch) for b in g.reachable):
            continue
        if g.exit is None:
            raise FoldError([Diagnostic("NOT_SESE", root, "secret branch in code without a unique exit")],
                            f"function at {_name(p, root)}")
        for r in secret_regions(g):
            if r not in regions:
                regions.append(r)
                root_of[r.entry] = root
    # a region nested in another root's region is still handled by the outer one
    regions = [r for r in regions if not any(r.entry in o.body for o in regions if o is not r)]
    kept = frozenset(x for x in paired if x in plain)
    return FoldPlan(tuple(sorted(regions, key=lambda r: r.entry)), pairs, kept,
                    {r.entry: root_of[r.entry] for r in regions})


@dataclass(frozen=True)
class _Src:
    """Placeholder for a source location not yet mapped to the target."""
    loc: int


@dataclass(frozen=True)
class _Pair:
    key: tuple[int, int]


class _Layout:
    def __init__(self, p: Program):
        self.p = p
        self.code: list = []
        self.labels: dict[str, int] = {}
        self.corr = CorrMap()
        self.block_at: dict[int, int] = {}     # source block start -> target loc
        self.pair_at: dict[tuple[int, int], int] = {}
        self.used = set(p.labels)
        self.counter = 0
        # (target position, source successor start) for blocks that fall through
        self.fallthroughs: list[tuple[int, int]] = []
        # (start, bbc, length) of every folded level in the output
        self.levels: list[tuple[int, int, int]] = []

    def fresh(self) -> str:
        while True:
            self.counter += 1
            name = f"L{self.counter}"
            if name not in self.used:
                self.used.add(name)
                return name

    def label(self, name: str, at: int | None = None) -> None:
        self.used.add(name)
        self.labels[name] = len(self.code) if at is None else at

    def emit_block(self, g: ControlFlowGraph, b: BasicBlock, keep_labels: bool = True) -> None:
        start = len(self.code)
        self.block_at.setdefault(b.start, start)
        if keep_labels:
            for name in self.p.labels_at(b.start):
                self.label(name)
        for loc, ins in zip(b.locations, b.instrs):
            self.corr.add(loc, len(self.code))
            self.code.append(_placeholders(ins))
        if g.falls_through(b.id) and b.end < len(self.p):
            self.fallthroughs.append((len(self.code), b.end))

    def emit_levels(self, levels: Sequence[FoldedLevel], first_label: str | None) -> int:
        start = len(self.code)
        for i, lv in enumerate(levels):
            if i == 0 and first_label is not None:
                self.label(first_label)
            elif i > 0:
                self.label(self.fresh())
            base = len(self.code)
            self.levels.append((base, lv.bbc, len(lv.instrs)))
            for loc, off in lv.slots.items():
                self.corr.add(loc, base + off)
            self.code.extend(_placeholders(ins) for ins in lv.instrs)
        return start


def _placeholders(ins: Instruction) -> Instruction:
    if isinstance(ins, (Branch, SecretBranch)):
        return dataclasses.replace(ins, target_true=_Src(ins.target_true),
                                   target_false=_Src(ins.target_false))
    if isinstance(ins, Call):
        return Call(_Src(ins.target))
    if isinstance(ins, SecretCall):
        return LevelOffsetCall(ins.flag, _Pair((ins.real, ins.dummy)))
    return ins


def _resolve(ins, block_at: Mapping[int, int], pair_at: Mapping[tuple[int, int], int]):
    def loc(x):
        if isinstance(x, _Src):
            if x.loc not in block_at:
                raise FoldError([Diagnostic("NOT_SESE", x.loc, "jump into folded code")])
            return block_at[x.loc]
        if isinstance(x, _Pair):
            if x.key not in pair_at:
                raise FoldError([Diagnostic("UNREGISTERED_FUNCTION_PAIR", None, str(x.key))])
            return pair_at[x.key]
        return x

    if isinstance(ins, (Branch, SecretBranch)):
        return dataclasses.replace(ins, target_true=loc(ins.target_true),
                                   target_false=loc(ins.target_false))
    if isinstance(ins, (Call, LevelOffsetCall)):
        return dataclasses.replace(ins, target=loc(ins.target))
    return ins


@dataclass(frozen=True)
class TransformResult:
    program: Program
    corrmap: CorrMap
    plan: FoldPlan
    levels: tuple[tuple[int, int, int], ...] = ()

    def level_containing(self, loc: int) -> tuple[int, int, int] | None:
        for lv in self.levels:
            if lv[0] <= loc < lv[0] + lv[2]:
                return lv
        return None

    def __iter__(self):
        return iter((self.program, self.corrmap))


def transform(p: Program, *, hw_mode: bool = False, blocklist: Iterable[str] = ()) -> TransformResult:
    """Fold every outermost secret region and every secretly called function pair."""
    if any(isinstance(i, TARGET_ONLY) for i in p.code):
        raise FoldError([Diagnostic("DIALECT_VIOLATION", None, "input must be a source program")])
    if not p.code:
        return TransformResult(p, CorrMap.identity(0), FoldPlan((), (), frozenset()))
    try:
        plan = plan_folding(p)
        g = build_cfg(p, strict=False)
    except NoUniqueExit as e:
        raise FoldError([Diagnostic("NOT_SESE", None, str(e))]) from None

    folded_regions = {}
    for r in plan.regions:
        root = build_cfg(p, entry=plan.roots[r.entry], strict=False)
        folded_regions[r.entry] = fold_region(root, r, hw_mode=hw_mode, blocklist=blocklist)
    folded_funcs = {}
    for pr in plan.pairs:
        gr = build_cfg(p, entry=pr.real, strict=False)
        gd = build_cfg(p, entry=pr.dummy, strict=False)
        folded_funcs[pr.real] = folded_funcs.get(pr.real, []) + [
            (pr, fold_function(gr, gd, pr.label, hw_mode=hw_mode, blocklist=blocklist))]

    # blocks that are emitted by some other unit or dropped entirely
    region_of = {r.entry: r for r in plan.regions}
    skip: set[int] = set()
    for r in plan.regions:
        skip |= r.body
    for pr in plan.pairs:
        for fn in (pr.real, pr.dummy):
            if fn not in plan.kept_functions:
                skip |= build_cfg(p, entry=fn, strict=False).reachable

    out = _Layout(p)
    emitted: set[int] = set()

    def emit(bid: int) -> None:
        if bid in emitted:
            return
        emitted.add(bid)
        b = g.blocks[bid]
        for pr, ff in folded_funcs.pop(b.start, []):
            out.pair_at[(pr.real, pr.dummy)] = out.emit_levels(ff.levels, pr.label)
        if bid in skip:
            return
        if bid in region_of:
            r = region_of[bid]
            fr = folded_regions[bid]
            for name in p.labels_at(b.start):
                out.label(name)
            out.block_at[b.start] = out.emit_levels(fr.levels, None)
            emit(r.exit)
        else:
            out.emit_block(g, b)

    for b in g.blocks:
        emit(b.id)
    for name in p.labels_at(len(p)):
        out.label(name)
    out.corr.add(len(p), len(out.code))
    out.block_at.setdefault(len(p), len(out.code))

    for pos, succ in out.fallthroughs:
        if out.block_at.get(succ) != pos:
            raise FoldError([Diagnostic("BAD_TERMINATOR", succ - 1,
                                        "fallthrough successor is not laid out next")])
    code = tuple(_resolve(ins, out.block_at, out.pair_at) for ins in out.code)
    if p.entry not in out.block_at:
        raise FoldError([Diagnostic("BAD_ENTRY", p.entry, "entry block was folded away")])
    tgt = Program(code, out.labels, out.block_at[p.entry])
    return TransformResult(tgt, out.corr, plan, tuple(out.levels))

