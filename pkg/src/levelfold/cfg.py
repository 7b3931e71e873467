"""Control-flow graphs, distances, postdominators and level structures.

Calls do not end basic blocks: they return to the next instruction, so
intraprocedurally they behave like straight-line code.  A block that ends
without a control-transfer instruction falls through to the next block;
the block that runs off the end of the code is a program exit.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable

from .asm import (
    Branch, Diagnostic, Instruction, LevelOffsetBranch, Program, Ret,
    SecretBranch, TERMINATORS,
)


class NoUniqueExit(ValueError):
    pass


class NotSecretBranch(ValueError):
    pass


class CyclicRegion(ValueError):
    pass


@dataclass(frozen=True)
class BasicBlock:
    id: int
    start: int
    instrs: tuple[Instruction, ...]

    @property
    def end(self) -> int:
        return self.start + len(self.instrs)

    @property
    def terminator(self) -> Instruction:
        return self.instrs[-1]

    @property
    def locations(self) -> range:
        return range(self.start, self.end)

    def __len__(self) -> int:
        return len(self.instrs)


@dataclass(frozen=True)
class ControlFlowGraph:
    program: Program
    blocks: tuple[BasicBlock, ...]
    succs: tuple[tuple[int, ...], ...]
    preds: tuple[tuple[int, ...], ...]
    entry: int
    exit: int | None
    reachable: frozenset[int]

    def block_at(self, loc: int) -> int:
        """Id of the block starting at ``loc``."""
        return self._starts()[loc]

    def block_containing(self, loc: int) -> int:
        for b in self.blocks:
            if b.start <= loc < b.end:
                return b.id
        raise KeyError(loc)

    def _starts(self) -> dict[int, int]:
        return {b.start: b.id for b in self.blocks}

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(a, b) for a, ss in enumerate(self.succs) for b in ss}

    def name(self, bid: int) -> str:
        return self.program.label_at(self.blocks[bid].start) or f"B{bid}"

    def by_name(self, name: str) -> int:
        return self.block_at(self.program.labels[name])

    def falls_through(self, bid: int) -> bool:
        return not isinstance(self.blocks[bid].terminator, TERMINATORS)


def _leaders(p: Program) -> list[int]:
    n = len(p.code)
    leaders = {0} if n else set()
    leaders.update(loc for loc in p.labels.values() if loc < n)
    for loc, instr in enumerate(p.code):
        if isinstance(instr, (Branch, SecretBranch)):
            leaders.update((instr.target_true, instr.target_false))
        if isinstance(instr, TERMINATORS) and loc + 1 < n:
            leaders.add(loc + 1)
    return sorted(x for x in leaders if x < n)


def build_cfg(p: Program, entry: int | None = None, strict: bool = True) -> ControlFlowGraph:
    """Partition ``p`` into basic blocks and connect them.

    The graph is rooted at ``entry`` (default: the program entry).  With
    ``strict`` the blocks reachable from the root must have exactly one
    exit, otherwise :class:`NoUniqueExit` is raised; without it ``exit`` is
    None when there are several.
    """
    if not p.code:
        raise NoUniqueExit("empty program has no entry block")
    leaders = _leaders(p)
    bounds = leaders + [len(p.code)]
    blocks = tuple(
        BasicBlock(i, s, p.code[s:e]) for i, (s, e) in enumerate(zip(bounds, bounds[1:]))
    )
    start_of = {b.start: b.id for b in blocks}
    for b in blocks:
        t = b.terminator
        if isinstance(t, (Branch, SecretBranch)):
            for loc in (t.target_true, t.target_false):
                if loc not in start_of:
                    raise NoUniqueExit(f"branch at {b.end - 1} targets {loc}, which holds no instruction")

    succs: list[tuple[int, ...]] = []
    for b in blocks:
        t = b.terminator
        if isinstance(t, (Branch, SecretBranch)):
            out = tuple(dict.fromkeys((start_of[t.target_true], start_of[t.target_false])))
        elif isinstance(t, (Ret, LevelOffsetBranch)):
            out = ()
        else:
            out = (b.id + 1,) if b.id + 1 < len(blocks) else ()
        succs.append(out)
    preds: list[list[int]] = [[] for _ in blocks]
    for a, ss in enumerate(succs):
        for s in ss:
            preds[s].append(a)

    root = p.entry if entry is None else entry
    if root not in start_of:
        raise NoUniqueExit(f"entry {root} does not start a block")
    root_id = start_of[root]
    seen = {root_id}
    queue = deque([root_id])
    while queue:
        b = queue.popleft()
        for s in succs[b]:
            if s not in seen:
                seen.add(s)
                queue.append(s)
    exits = sorted(b for b in seen if not succs[b])
    if len(exits) != 1 and strict:
        raise NoUniqueExit(f"{len(exits)} exit blocks reachable from {root}")
    return ControlFlowGraph(
        p, blocks, tuple(succs), tuple(tuple(x) for x in preds), root_id,
        exits[0] if len(exits) == 1 else None, frozenset(seen),
    )


def cfg_dump(g: ControlFlowGraph) -> str:
    lines = [f"block {g.name(b.id)} @{b.start} len={len(b)}" for b in g.blocks]
    lines += [f"{g.name(a)} -> {g.name(b)}" for a, b in sorted(g.edges)]
    return "\n".join(lines) + "\n"


def bfs_distances(g: ControlFlowGraph, src: int, allowed: Iterable[int] | None = None) -> dict[int, int]:
    allowed_set = None if allowed is None else set(allowed)
    dist = {src: 0}
    queue = deque([src])
    while queue:
        b = queue.popleft()
        for s in g.succs[b]:
            if s in dist or (allowed_set is not None and s not in allowed_set):
                continue
            dist[s] = dist[b] + 1
            queue.append(s)
    return dist


def distance(g: ControlFlowGraph, a: int, b: int) -> int | None:
    """Shortest-path edge count from ``a`` to ``b``; None if unreachable."""
    return bfs_distances(g, a).get(b)


def postdominators(g: ControlFlowGraph) -> dict[int, frozenset[int]]:
    """Postdominator sets for blocks that reach the exit."""
    if g.exit is None:
        raise NoUniqueExit("postdominance needs a unique exit")
    # blocks that can reach the exit, restricted to the rooted graph
    live = {g.exit}
    queue = deque([g.exit])
    while queue:
        b = queue.popleft()
        for q in g.preds[b]:
            if q in g.reachable and q not in live:
                live.add(q)
                queue.append(q)
    pdom = {b: frozenset(live) for b in live}
    pdom[g.exit] = frozenset({g.exit})
    changed = True
    while changed:
        changed = False
        for b in sorted(live, reverse=True):
            if b == g.exit:
                continue
            outs = [pdom[s] for s in g.succs[b] if s in live]
            new = frozenset({b}).union(frozenset.intersection(*outs)) if outs else frozenset({b})
            if new != pdom[b]:
                pdom[b] = new
                changed = True
    return pdom


def immediate_postdominator(g: ControlFlowGraph, b: int, pdom: dict | None = None) -> int:
    pdom = postdominators(g) if pdom is None else pdom
    strict = pdom[b] - {b}
    for cand in strict:
        if all(other in pdom[cand] for other in strict):
            return cand
    raise ValueError(f"block {b} has no immediate postdominator")


# -- secret-dependent regions -----------------------------------------------

@dataclass(frozen=True)
class SecretRegion:
    entry: int
    exit: int
    body: frozenset[int]

    def blocks(self) -> frozenset[int]:
        return self.body | {self.entry}


def _region_body(g: ControlFlowGraph, entry: int, exit_: int) -> frozenset[int]:
    body: set[int] = set()
    queue = deque(s for s in g.succs[entry] if s != exit_)
    while queue:
        b = queue.popleft()
        if b in body or b == exit_ or b == entry:
            continue
        body.add(b)
        queue.extend(g.succs[b])
    return frozenset(body)


def secret_region(g: ControlFlowGraph, branch_block: int, pdom: dict | None = None) -> SecretRegion:
    if not isinstance(g.blocks[branch_block].terminator, SecretBranch):
        raise NotSecretBranch(f"block {g.name(branch_block)} does not end in s.br")
    exit_ = immediate_postdominator(g, branch_block, pdom)
    return SecretRegion(branch_block, exit_, _region_body(g, branch_block, exit_))


def secret_regions(g: ControlFlowGraph, outermost: bool = True) -> list[SecretRegion]:
    """All regions rooted at reachable s.br blocks, in layout order."""
    pdom = postdominators(g)
    regions = [
        secret_region(g, b, pdom) for b in sorted(g.reachable)
        if isinstance(g.blocks[b].terminator, SecretBranch)
    ]
    if outermost:
        regions = [r for r in regions
                   if not any(r.entry in o.body for o in regions if o is not r)]
    return regions


def _has_cycle(g: ControlFlowGraph, nodes: frozenset[int], start: int) -> bool:
    state: dict[int, int] = {}

    def visit(n: int) -> bool:
        state[n] = 1
        for s in g.succs[n]:
            if s not in nodes:
                continue
            if state.get(s) == 1 or (s not in state and visit(s)):
                return True
        state[n] = 2
        return False

    return visit(start)


@dataclass(frozen=True)
class LevelStructure:
    """``levels[0]`` is the entry level; ``levels[-1]`` is ``[exit]`` for
    regions (functions have no exit level)."""

    levels: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> tuple[int, ...]:
        return self.levels[i]

    def level_of(self, bid: int) -> int:
        for i, lvl in enumerate(self.levels):
            if bid in lvl:
                return i
        raise KeyError(bid)


def _levels_from(g: ControlFlowGraph, root: int, nodes: frozenset[int]) -> list[list[int]]:
    dist = bfs_distances(g, root, allowed=nodes)
    depth = max(dist.values(), default=0)
    levels: list[list[int]] = [[] for _ in range(depth + 1)]
    for b, d in dist.items():
        levels[d].append(b)
    for lvl in levels:
        lvl.sort(key=lambda b: g.blocks[b].start)
    return levels


def level_structure(g: ControlFlowGraph, region: SecretRegion) -> LevelStructure:
    nodes = region.blocks()
    if _has_cycle(g, nodes, region.entry):
        raise CyclicRegion(f"region at {g.name(region.entry)} contains a cycle")
    levels = _levels_from(g, region.entry, nodes)
    levels.append([region.exit])
    return LevelStructure(tuple(tuple(lvl) for lvl in levels))


def function_blocks(g: ControlFlowGraph) -> frozenset[int]:
    """Blocks of the procedure rooted at ``g.entry``."""
    return g.reachable


def function_level_structure(g: ControlFlowGraph) -> LevelStructure:
    nodes = g.reachable
    if _has_cycle(g, nodes, g.entry):
        raise CyclicRegion(f"function {g.name(g.entry)} contains a cycle")
    levels = _levels_from(g, g.entry, nodes)
    return LevelStructure(tuple(tuple(lvl) for lvl in levels))


# -- slices -----------------------------------------------------------------

def instruction_distances(g: ControlFlowGraph, anchor: int,
                          within: Iterable[int] | None = None) -> dict[int, int]:
    """BFS over individual instructions starting from location ``anchor``."""
    allowed = None
    if within is not None:
        allowed = {loc for b in within for loc in g.blocks[b].locations}
    owner = {loc: b.id for b in g.blocks for loc in b.locations}

    def next_locs(loc: int) -> list[int]:
        b = g.blocks[owner[loc]]
        if loc + 1 < b.end:
            return [loc + 1]
        return [g.blocks[s].start for s in g.succs[b.id]]

    dist = {anchor: 0}
    queue = deque([anchor])
    while queue:
        loc = queue.popleft()
        for n in next_locs(loc):
            if n in dist or (allowed is not None and n not in allowed):
                continue
            dist[n] = dist[loc] + 1
            queue.append(n)
    return dist


def level_slice(g: ControlFlowGraph, anchor: int, delta: int, *, block: bool = False,
                within: Iterable[int] | None = None) -> tuple[int, ...]:
    """Locations of the instructions at instruction distance ``delta``.

    ``anchor`` is a code location, or a block id when ``block`` is set (the
    block's first instruction is then the anchor).  ``within`` restricts
    the walk to a set of blocks, e.g. a region's blocks.
    """
    start = g.blocks[anchor].start if block else anchor
    dist = instruction_distances(g, start, within)
    if delta < 0 or delta > max(dist.values()):
        raise IndexError(f"slice distance {delta} out of range")
    return tuple(sorted(loc for loc, d in dist.items() if d == delta))


# -- foldability --------------------------------------------------------------

HW_MAX_BBC = 16
HW_MAX_TERMINATING = 8


def _level_checks(g: ControlFlowGraph, levels: list[tuple[int, ...]], next_of,
                  allow_ret_last: bool, diags: list[Diagnostic]) -> None:
    for i, lvl in enumerate(levels):
        lengths = {len(g.blocks[b]) for b in lvl}
        if len(lengths) > 1:
            diags.append(Diagnostic(
                "UNEQUAL_LEVEL_LENGTHS", g.blocks[lvl[0]].start,
                f"level {i} block lengths " + ", ".join(
                    f"{g.name(b)}={len(g.blocks[b])}" for b in lvl)))
        last = i == len(levels) - 1
        allowed_next = next_of(i)
        for b in lvl:
            term = g.blocks[b].terminator
            loc = g.blocks[b].end - 1
            if isinstance(term, Ret):
                if not (allow_ret_last and last):
                    diags.append(Diagnostic("BAD_TERMINATOR", loc,
                                            f"ret in level {i} of {g.name(b)}"))
                continue
            if allow_ret_last and last:
                diags.append(Diagnostic("BAD_TERMINATOR", loc,
                                        f"last-level block {g.name(b)} does not return"))
                continue
            if not isinstance(term, (Branch, SecretBranch)):
                diags.append(Diagnostic("BAD_TERMINATOR", loc,
                                        f"{g.name(b)} ends in {term.mnemonic}, not a branch"))
                continue
            for s in g.succs[b]:
                if s not in allowed_next:
                    diags.append(Diagnostic("CROSS_LEVEL_EDGE", loc,
                                            f"{g.name(b)} (level {i}) -> {g.name(s)}"))


def validate_foldable(g: ControlFlowGraph, region: SecretRegion, *, hw_mode: bool = False,
                      blocklist: Iterable[str] = ()) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    nodes = region.blocks()
    entry_loc = g.blocks[region.entry].start
    if _has_cycle(g, nodes, region.entry):
        return [Diagnostic("CYCLIC_REGION", entry_loc, f"cycle in region at {g.name(region.entry)}")]
    for b in sorted(region.body):
        outside = [q for q in g.preds[b] if q in g.reachable and q not in nodes]
        if outside:
            diags.append(Diagnostic("NOT_SESE", g.blocks[b].start,
                                    f"{g.name(b)} entered from {g.name(outside[0])}"))
    ls = level_structure(g, region)
    levels = list(ls.levels[:-1])
    _level_checks(g, levels, lambda i: set(ls.levels[i + 1]), False, diags)
    _hw_and_blocklist(g, ls.levels, hw_mode, blocklist, diags)
    last = ls.levels[-2]
    if hw_mode and len(ls.levels) > 2 and len(last) > HW_MAX_TERMINATING:
        diags.append(Diagnostic("HW_LIMIT", g.blocks[last[0]].start,
                                f"terminating level has {len(last)} blocks (max {HW_MAX_TERMINATING})"))
    return diags


def validate_function(g: ControlFlowGraph, *, hw_mode: bool = False,
                      blocklist: Iterable[str] = ()) -> list[Diagnostic]:
    """Hypotheses for a function folded with its dummy (rooted at ``g.entry``)."""
    if _has_cycle(g, g.reachable, g.entry):
        return [Diagnostic("CYCLIC_REGION", g.blocks[g.entry].start,
                           f"cycle in function {g.name(g.entry)}")]
    ls = function_level_structure(g)
    levels = list(ls.levels)
    diags: list[Diagnostic] = []
    _level_checks(g, levels,
                  lambda i: set(levels[i + 1]) if i + 1 < len(levels) else set(), True, diags)
    _hw_and_blocklist(g, levels, hw_mode, blocklist, diags)
    return diags


def _hw_and_blocklist(g, levels, hw_mode, blocklist, diags) -> None:
    if hw_mode:
        for i, lvl in enumerate(levels):
            if len(lvl) > HW_MAX_BBC:
                diags.append(Diagnostic("HW_LIMIT", g.blocks[lvl[0]].start,
                                        f"level {i} has {len(lvl)} blocks (max {HW_MAX_BBC})"))
    banned = set(blocklist)
    if banned:
        for lvl in levels:
            for b in lvl:
                for loc in g.blocks[b].locations:
                    if g.program[loc].mnemonic in banned:
                        diags.append(Diagnostic("BLOCKLISTED", loc, g.program[loc].mnemonic))


def function_pair_levels(g_real: ControlFlowGraph, g_dummy: ControlFlowGraph) -> list[tuple[int, ...]]:
    """Componentwise union of two functions' level structures, real blocks first."""
    a = function_level_structure(g_real).levels
    b = function_level_structure(g_dummy).levels
    if len(a) != len(b):
        raise ValueError("real and dummy functions have different depths")
    return [la + lb for la, lb in zip(a, b)]


def validate_function_pair(g_real: ControlFlowGraph, g_dummy: ControlFlowGraph, *,
                           hw_mode: bool = False, blocklist: Iterable[str] = ()) -> list[Diagnostic]:
    """Hypotheses for folding a function with its dummy.

    Both CFGs share one block partition (they come from the same program).
    """
    diags = (validate_function(g_real, hw_mode=hw_mode, blocklist=blocklist)
             + validate_function(g_dummy, hw_mode=hw_mode, blocklist=blocklist))
    if any(d.code == "CYCLIC_REGION" for d in diags):
        return diags
    a = function_level_structure(g_real).levels
    b = function_level_structure(g_dummy).levels
    where = g_real.blocks[g_real.entry].start
    if len(a) != len(b):
        diags.append(Diagnostic("UNEQUAL_LEVEL_LENGTHS", where,
                                f"{g_real.name(g_real.entry)} has {len(a)} levels, "
                                f"{g_dummy.name(g_dummy.entry)} has {len(b)}"))
        return diags
    for i, (la, lb) in enumerate(zip(a, b)):
        lengths = {len(g_real.blocks[x]) for x in la + lb}
        if len(lengths) > 1 and not any(
                d.code == "UNEQUAL_LEVEL_LENGTHS" and d.message.startswith(f"level {i} ")
                for d in diags):
            diags.append(Diagnostic("UNEQUAL_LEVEL_LENGTHS", where,
                                    f"level {i} differs between real and dummy function"))
        if hw_mode and len(la + lb) > HW_MAX_BBC:
            diags.append(Diagnostic("HW_LIMIT", where,
                                    f"folded level {i} has {len(la + lb)} blocks (max {HW_MAX_BBC})"))
    return diags
