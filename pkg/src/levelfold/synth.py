"""Random and hand-built programs for property tests and hardware-limit checks.

Generated regions are balanced by construction: every block in a level has
the same length, holds only ALU instructions and ends with the same kind of
terminator, so the weak observer sees one trace whatever the secrets are.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .asm import Program, parse_program
from .leakage import SecurityPolicy

SECRET_REGS = ("a0", "a1", "a2")
WORK_REGS = ("s1", "s2", "s3", "s4", "s5")
_ALU = ("add", "sub", "xor", "and", "or", "sll", "srl", "slt", "addi", "xori", "andi", "slli")


def random_alu(rng: random.Random, regs=WORK_REGS) -> str:
    op = rng.choice(_ALU + ("mv", "not", "neg", "seqz"))
    d = rng.choice(regs)
    if op in ("mv", "not", "neg", "seqz"):
        return f"{op} {d},{rng.choice(regs)}"
    if op.endswith("i"):
        imm = rng.randrange(0, 8) if op == "slli" else rng.randrange(-64, 64)
        return f"{op} {d},{rng.choice(regs)},{imm}"
    return f"{op} {d},{rng.choice(regs)},{rng.choice(regs)}"


def random_widths(rng: random.Random, depth: int, cap: int = 8) -> list[int]:
    """Level widths below the entry; each level at most doubles the previous."""
    widths, w = [], 1
    for _ in range(depth):
        w = rng.randint(1, min(2 * w, cap))
        widths.append(w)
    return widths


def _children(rng: random.Random, w_parent: int, w_child: int, single_prob: float) -> list[tuple[int, int]]:
    kids = [((2 * p) % w_child, (2 * p + 1) % w_child) for p in range(w_parent)]
    # collapse a pair to one successor when the dropped child stays reachable
    for p in rng.sample(range(w_parent), w_parent):
        if rng.random() >= single_prob:
            continue
        a, b = kids[p]
        if a == b:
            continue
        keep, drop = (a, b) if rng.random() < 0.5 else (b, a)
        others = {c for q, pair in enumerate(kids) if q != p for c in pair}
        if drop in others:
            kids[p] = (keep, keep)
    return kids


@dataclass(frozen=True)
class Synthetic:
    source: str
    widths: tuple[int, ...]
    policy: SecurityPolicy

    def program(self) -> Program:
        return parse_program(self.source, "source")


def balanced_region(rng: random.Random, widths: list[int] | None = None, *,
                    block_len: tuple[int, int] = (0, 3), prefix: int = 2,
                    single_prob: float = 0.3) -> Synthetic:
    """A program with one folded-shape secret region of the given level widths."""
    widths = list(widths) if widths is not None else random_widths(rng, rng.randint(1, 4))
    if widths[0] > 2:
        raise ValueError("the entry block has at most two successors")
    lines = [f"main: {random_alu(rng)}"] if prefix else []
    lines += [f"      {random_alu(rng)}" for _ in range(max(prefix - 1, 0))]

    def name(level: int, i: int) -> str:
        return f"B{level}_{i}"

    entry_kids = (0, 1) if widths[0] == 2 else (0, 0)
    cond = rng.choice(SECRET_REGS)
    lines.append(f"En:   s.br {cond},{name(1, entry_kids[0])},{name(1, entry_kids[1])}")
    for lv, w in enumerate(widths, start=1):
        length = rng.randint(*block_len)
        last = lv == len(widths)
        kids = None if last else _children(rng, w, widths[lv], single_prob)
        for i in range(w):
            body = [random_alu(rng) for _ in range(length)]
            if last:
                term = "j Ex"
            else:
                a, b = kids[i]
                c = "zero" if a == b else rng.choice(SECRET_REGS)
                term = f"s.br {c},{name(lv + 1, a)},{name(lv + 1, b)}"
            block = body + [term]
            lines.append(f"{name(lv, i) + ':':<7}{block[0]}")
            lines.extend(f"       {ins}" for ins in block[1:])
    lines.append(f"Ex:    {random_alu(rng)}")
    lines.append(f"       {random_alu(rng)}")
    text = "\n".join(lines) + "\n"
    if not prefix:
        text = ".entry En\n" + text
    return Synthetic(text, tuple(widths), SecurityPolicy(SECRET_REGS))


def wide_region(width: int = 17) -> Synthetic:
    """A region whose last level holds ``width`` blocks."""
    widths = [width]
    while widths[-1] > 2:
        widths.append((widths[-1] + 1) // 2)
    widths.reverse()
    return balanced_region(random.Random(width), widths, block_len=(1, 1), single_prob=0.0)


# a folded function that makes a plain call: three nested contexts at run time
NESTED_CALL_SOURCE = """\
foo:   addi s1,s1,1
       call bar
       ret
foo':  mv t0,t0
       call bar
       ret
bar:   addi s2,s2,1
       ret
main:  s.call T,foo,foo'
       mv a0,s1
"""


def nested_call_program() -> Program:
    return parse_program(NESTED_CALL_SOURCE, "source")
