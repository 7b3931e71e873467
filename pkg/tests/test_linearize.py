from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from levelfold.asm import Binary, Unary, canonical_text, parse_program
from levelfold.leakage import Observer, SecurityPolicy
from levelfold.linearize import SCRATCH, UnsupportedShape, linearize, mask_derivation, masked, TOP
from levelfold.oni import InputSpace, check_final_equivalence, check_oni
from levelfold.synth import random_alu

from conftest import sample, sample_policy


def test_running_example_shape():
    lin = linearize(sample("running_vulnerable"))
    assert len(lin) == 12 and lin.labels["Ex"] == 11
    assert list(lin.code[:3]) == mask_derivation("secret")
    # then-side write of s1 kept under the true mask, else-side s2 under the false mask
    assert lin.code[3:7] == (Binary("and", "t3", "s1", "t2"), Binary("add", "s1", "s2", "s3"),
                             Binary("and", "s1", "s1", "t1"), Binary("or", "s1", "s1", "t3"))
    assert lin.code[7] == Binary("and", "t3", "s2", "t1")
    assert lin.code[9] == Binary("and", "s2", "s2", "t2")
    assert all(not i.mnemonic.startswith(("br", "s.")) for i in lin.code)


def test_running_example_semantics_and_security():
    src = sample("running_vulnerable")
    lin = linearize(src)
    sp = InputSpace.from_policy(sample_policy("running_vulnerable"), seed=7)
    assert check_final_equivalence(src, lin, sp, ignore=SCRATCH).passed
    assert check_oni(lin, Observer("strong"), sp).passed


def test_nested_one_level():
    src = sample("nested")
    lin = linearize(src)
    sp = InputSpace.from_policy(sample_policy("nested"), seed=1)
    assert check_final_equivalence(src, lin, sp, ignore=SCRATCH).passed
    assert check_oni(lin, Observer("strong"), sp).passed


def test_empty_sides_give_mask_derivation_only():
    lin = linearize(parse_program("s.br a0,x,x\nx: mv s1,s1"))
    assert canonical_text(lin) == canonical_text(parse_program(
        "seqz t1,a0\naddi t1,t1,-1\nnot t2,t1\nmv s1,s1"))


def test_no_regions_unchanged():
    p = parse_program("mv s1,s2\nbr s1,a,a\na: neg s1,s1")
    assert linearize(p) is p


def test_masked_write_to_zero_untouched():
    ins = Unary("mv", "zero", "s1")
    assert masked(ins, TOP) == [ins]


@pytest.mark.parametrize("text", [
    "s.br a0,a,b\na: store s1,s2\nj e\nb: store s1,s2\nj e\ne: mv s1,s1",
    "f: ret\nf2: ret\nmain: s.call T,f,f2",
    "s.br a0,a,b\na: mv t1,s1\nj e\nb: mv s1,s1\nj e\ne: mv s1,s1",
    "s.br a0,a,b\na: s.br a1,c,d\nc: s.br a2,x,y\nx: j e\ny: j e\nd: j e\nb: j e\ne: mv s1,s1",
])
def test_unsupported_shapes(text):
    with pytest.raises(UnsupportedShape):
        linearize(parse_program(text, "source"))


def _diamond(rng: random.Random) -> str:
    sides = []
    for name in ("A", "B"):
        body = [random_alu(rng) for _ in range(rng.randint(0, 3))]
        sides.append(f"{name}: " + "\n".join(body + ["j E"]))
    return "\n".join([random_alu(rng), "s.br a0,A,B", *sides, "E: " + random_alu(rng)])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_diamonds_equivalent(seed):
    src = parse_program(_diamond(random.Random(seed)), "source")
    lin = linearize(src)
    sp = InputSpace.from_policy(SecurityPolicy(("a0",)), seed=seed)
    assert check_final_equivalence(src, lin, sp, ignore=SCRATCH).passed
