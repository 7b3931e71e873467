from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from levelfold.asm import MNEMONICS, Program, execute_isa, parse_program
from levelfold.fold import transform
from levelfold.leakage import (
    ContractError, Observer, UnknownClass, compose_dummy, default_contract, default_contract_text,
    load_contract, obs_strong, obs_weak, parse_policy,
)
from levelfold.semantics import Configuration, LevelContext, initial_configuration, run
from levelfold.synth import balanced_region, random_alu

from conftest import sample

K = default_contract()


def test_default_classes():
    for m in ("add", "sub", "and", "or", "seqz", "neg", "mv"):
        assert K.class_of[m] == "alu"
    assert K.class_of["load"] == "load" and K.unsafe["load"] == {"only"}
    assert K.class_of["store"] == "store" and K.unsafe["store"] == {"right"}
    assert set(K.class_of) == set(MNEMONICS)


def test_control_classes_are_distinct():
    classes = [K.class_of[m] for m in ("br", "s.br", "lo.br", "call", "s.call", "lo.call", "ret")]
    assert len(set(classes)) == 7
    assert not set(classes) & {K.class_of[m] for m in ("add", "mul", "load", "store")}
    assert K.is_safe("lo.br") and K.is_safe("s.call") and not K.is_safe("br") and not K.is_safe("call")


def test_contract_totality():
    text = default_contract_text().replace("class mul: mul", "")
    with pytest.raises(ContractError, match="mul"):
        load_contract(text)


def test_contract_rejects_effectful_dummy():
    with pytest.raises(ContractError):
        load_contract(default_contract_text() + "\ndummy alu: addi t0,t0,1\n")
    with pytest.raises(ContractError):
        load_contract(default_contract_text() + "\nunsafe br: only\n")
    with pytest.raises(ContractError):
        load_contract(default_contract_text() + "\ngranularity load: 3\n")


def test_contract_accepts_mv_dummy():
    k = load_contract(default_contract_text() + "\ndummy alu: mv s1,s1\n")
    assert compose_dummy("alu", k) == parse_program("mv s1,s1").code[0]


def test_compose_dummy():
    assert compose_dummy("alu") == parse_program("mv t0,t0").code[0]
    with pytest.raises(UnknownClass):
        compose_dummy("nope")


def test_dummies_have_no_effect():
    rng = random.Random(1)
    for cls, ins in K.dummies.items():
        for _ in range(50):
            reg = {r: rng.randrange(-2**63, 2**63) for r in ("t0", "s1", "a0", "sp")}
            mem = {rng.randrange(64): rng.randrange(100) for _ in range(4)}
            assert execute_isa(ins, mem, reg) == (mem, reg), cls


def test_obs_weak_examples():
    p = parse_program("load s1,a0\nadd s1,s2,s3")
    c = initial_configuration(p, {"a0": 64})
    o = obs_weak(p, c, K)
    assert (o.class_id, o.leaked) == ("load", (64,))
    c2 = Configuration(c.mem, c.reg, 1, (), c.ctx_stack)
    assert (obs_weak(p, c2, K).class_id, obs_weak(p, c2, K).leaked) == ("alu", ())


def test_lobr_outcome_hidden():
    p = sample("running", "tasm")
    a = obs_weak(p, initial_configuration(p, {"secret": 1}), K)
    b = obs_weak(p, initial_configuration(p, {"secret": 0}), K)
    assert a == b and a.leaked == ()


def test_plain_br_leaks_outcome():
    p = parse_program("br a0,x,x\nx: mv s1,s1")
    a = obs_weak(p, initial_configuration(p, {"a0": 1}), K)
    b = obs_weak(p, initial_configuration(p, {"a0": 0}), K)
    assert a != b


def test_strong_slice_addr():
    p = parse_program("mv s1,s1\nmv s1,s1")
    c = initial_configuration(p)
    assert obs_strong(p, c, K).slice_addr == 0
    q = sample("running", "tasm")
    l1 = q.labels["L1"]
    c = Configuration({}, {}, l1 + 1, (), (LevelContext(2, 1),))
    d = Configuration({}, {}, l1, (), (LevelContext(2, 0),))
    assert obs_strong(q, c, K).slice_addr == obs_strong(q, d, K).slice_addr == l1


def test_strong_sees_unfolded_sides():
    p = sample("running")
    runs = [run(p, initial_configuration(p, {"secret": s}), Observer("strong")) for s in (1, 0)]
    assert [o.weak() for o in runs[0].trace] == [o.weak() for o in runs[1].trace]
    assert runs[0].trace[1].slice_addr != runs[1].trace[1].slice_addr


def test_granularity_masks_low_bits():
    k = load_contract(default_contract_text() + "\ngranularity load: 8\n")
    p = parse_program("load s1,a0")
    assert obs_weak(p, initial_configuration(p, {"a0": 13}), k).leaked == (8,)


def test_policy_parsing():
    pol = parse_policy("""
# comment
secret reg a0
secret mem 0..3
public reg s1 = 5
public mem 16..18 = 1,2,3
domain mem 0..1 = 0,7
""")
    assert pol.secret_regs == ("a0",)
    assert pol.is_secret_addr(2) and not pol.is_secret_addr(4)
    assert pol.public_mem == {16: 1, 17: 2, 18: 3}
    assert pol.domain(("mem", 0)) == (0, 7) and pol.domain(("mem", 3)) == (0, 1)
    assert len(pol.secret_locations()) == 5
    with pytest.raises(ValueError):
        parse_policy("secret reg a0\npublic reg a0 = 1")
    with pytest.raises(ValueError):
        parse_policy("secret banana a0")


def test_observer_mode_checked():
    with pytest.raises(ValueError):
        Observer("psychic")


# -- properties -----------------------------------------------------------------

def _random_config(rng: random.Random, p: Program) -> Configuration:
    reg = {r: rng.randrange(-8, 8) for r in ("s1", "s2", "s3", "s4", "s5", "a0", "a1", "a2")}
    bbc = rng.randint(1, 6)
    pc = rng.randrange(len(p))
    # a reachable configuration never has its offset past the pc
    return Configuration({}, reg, pc, (), (LevelContext(bbc, rng.randrange(min(bbc, pc + 1))),))


def _random_program(rng: random.Random) -> Program:
    extra = ["load s1,s2", "store s1,s3", "mul s1,s2,s3", "div s1,s2,s3", "br s1,x,x",
             "lo.br s1,0:1:2", "ret", "call x"]
    lines = [random_alu(rng) if rng.random() < 0.5 else rng.choice(extra) for _ in range(rng.randint(1, 8))]
    return parse_program("\n".join(lines) + "\nx: mv s1,s1")


@settings(max_examples=1000, deadline=None)
@given(st.randoms(use_true_random=False))
def test_strong_erasure_equals_weak(rng):
    p = _random_program(rng)
    c = _random_config(rng, p)
    assert obs_strong(p, c, K).weak() == obs_weak(p, c, K)


@settings(max_examples=1000, deadline=None)
@given(st.randoms(use_true_random=False))
def test_weak_observation_ignores_pc_and_context(rng):
    p = _random_program(rng)
    c = _random_config(rng, p)
    # the same instruction at another address under another context
    moved = Program((p[c.pc],) * 3 + p.code, p.labels, p.entry)
    bbc = rng.randint(1, 4)
    pc = rng.randrange(3)
    d = Configuration(c.mem, c.reg, pc, (7,), (LevelContext(1, 0), LevelContext(bbc, min(bbc - 1, pc))))
    assert obs_weak(moved, d, K) == obs_weak(p, c, K)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 7), st.integers(0, 7))
def test_folded_weak_and_slice_traces_secret_independent(seed, s1, s2):
    q = transform(balanced_region(random.Random(seed)).program()).program
    runs = []
    for s in (s1, s2):
        reg = {r: (s >> i) & 1 for i, r in enumerate(("a0", "a1", "a2"))}
        runs.append(run(q, initial_configuration(q, reg), Observer("strong")))
    assert runs[0].trace == runs[1].trace
    assert runs[0].slices == runs[1].slices
