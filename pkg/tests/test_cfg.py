from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from levelfold.asm import parse_program
from levelfold.cfg import (
    CyclicRegion, NoUniqueExit, NotSecretBranch, build_cfg, cfg_dump, distance, immediate_postdominator,
    level_slice, level_structure, postdominators, secret_region, secret_regions, validate_foldable,
)

from conftest import sample

SIDE_NESTED = """\
En: br a0,t,f
t:  s.br a1,tt,tf
tt: add s1,s2,s3
    j Ex
tf: add s2,s3,s4
    j Ex
f:  sub s1,s2,s3
    j Ex
Ex: mv a0,s1
"""


def names(g, bids):
    return {g.name(b) for b in bids}


def all_paths(g, a, b):
    """Every simple path from ``a`` to ``b`` (the graphs here are small DAGs)."""
    out, stack = [], [(a, (a,))]
    while stack:
        n, path = stack.pop()
        if n == b:
            out.append(path)
            continue
        for s in g.succs[n]:
            if s not in path:
                stack.append((s, path + (s,)))
    return out


def ipdom_by_paths(g, b):
    paths = all_paths(g, b, g.exit)
    common = set(paths[0][1:])
    for p in paths[1:]:
        common &= set(p[1:])
    # the closest common node sits earliest on every path; check on the first
    return min(common, key=paths[0].index)


def test_side_nested_blocks_and_edges():
    g = build_cfg(parse_program(SIDE_NESTED))
    assert names(g, range(len(g.blocks))) == {"En", "t", "tt", "tf", "f", "Ex"}
    assert len(g.edges) == 7
    dump = cfg_dump(g)
    assert "En -> t" in dump and "f -> Ex" in dump


def test_straight_line_is_one_block():
    g = build_cfg(parse_program("mv s1,s2\nadd s1,s1,s1\nneg s1,s1"))
    assert len(g.blocks) == 1 and g.entry == g.exit


def test_calls_do_not_split_blocks():
    g = build_cfg(parse_program("f: ret\nmain: mv s1,s2\ncall f\nmv s1,s1"), strict=False)
    assert len(g.blocks[g.entry]) == 3


def test_two_level_blocks():
    g = build_cfg(sample("levels"))
    assert names(g, range(len(g.blocks))) == {"En", "t", "tt", "tf", "f", "ft", "ff", "Ex"}


def test_distances():
    g = build_cfg(parse_program(SIDE_NESTED))
    en, ex = g.by_name("En"), g.by_name("Ex")
    assert distance(g, en, ex) == 2
    assert distance(g, en, en) == 0
    assert distance(g, ex, en) is None


def test_postdominators_side_nested():
    g = build_cfg(parse_program(SIDE_NESTED))
    assert g.name(immediate_postdominator(g, g.by_name("En"))) == "Ex"
    assert g.name(immediate_postdominator(g, g.by_name("f"))) == "Ex"


def test_postdominators_match_path_oracle_two_level():
    g = build_cfg(sample("levels"))
    assert g.name(immediate_postdominator(g, g.by_name("t"))) == "Ex"
    for b in range(len(g.blocks)):
        if b != g.exit:
            assert immediate_postdominator(g, b) == ipdom_by_paths(g, b)


def test_secret_region_side_nested():
    g = build_cfg(parse_program(SIDE_NESTED))
    r = secret_region(g, g.by_name("t"))
    assert names(g, r.body) == {"tt", "tf"} and g.name(r.exit) == "Ex"
    with pytest.raises(NotSecretBranch):
        secret_region(g, g.by_name("En"))


def test_secret_region_empty_body():
    g = build_cfg(parse_program("s.br a0,x,x\nx: mv s1,s1"))
    (r,) = secret_regions(g)
    assert r.body == frozenset()
    assert level_structure(g, r).levels == ((r.entry,), (r.exit,))


def test_two_level_region_and_levels():
    g = build_cfg(sample("levels"))
    (r,) = secret_regions(g)
    assert names(g, r.body) == {"t", "f", "tt", "tf", "ft", "ff"}
    ls = level_structure(g, r)
    assert [names(g, lv) for lv in ls.levels] == [{"En"}, {"t", "f"}, {"tt", "tf", "ft", "ff"}, {"Ex"}]


def test_function_levels():
    from levelfold.cfg import function_level_structure

    p = sample("calls")
    g = build_cfg(p, entry=p.labels["foo"])
    ls = function_level_structure(g)
    assert [names(g, lv) for lv in ls.levels] == [{"foo"}, {"t", "f"}, {"Ex"}]


def test_outermost_regions_only():
    p = parse_program("s.br a0,a,b\na: s.br a1,x,y\nx: j b\ny: j b\nb: mv s1,s1")
    g = build_cfg(p)
    assert len(secret_regions(g, outermost=False)) == 2
    assert len(secret_regions(g)) == 1


def test_level_slices_side_nested():
    p = parse_program(SIDE_NESTED)
    g = build_cfg(p)
    en = g.by_name("En")
    assert level_slice(g, en, 0, block=True) == (0,)
    one = level_slice(g, en, 1, block=True)
    assert sorted(str(p[loc].mnemonic) for loc in one) == ["s.br", "sub"]
    with pytest.raises(IndexError):
        level_slice(g, en, 99, block=True)


def test_level_slice_balanced_running():
    p = sample("running")
    g = build_cfg(p)
    locs = level_slice(g, 0, 2)
    assert [p[l].mnemonic for l in locs] == ["br", "br"]
    assert all(p[l].target_true == p.labels["Ex"] for l in locs)


def test_validate_foldable():
    g = build_cfg(sample("running"))
    assert validate_foldable(g, secret_regions(g)[0]) == []
    g = build_cfg(sample("running_vulnerable"))
    codes = {d.code for d in validate_foldable(g, secret_regions(g)[0])}
    assert "UNEQUAL_LEVEL_LENGTHS" in codes


def test_cross_level_edge():
    p = parse_program("s.br a0,a,b\na: j c\nb: j b2\nb2: j c\nc: mv s1,s1")
    g = build_cfg(p)
    codes = [d.code for d in validate_foldable(g, secret_regions(g)[0])]
    assert "CROSS_LEVEL_EDGE" in codes


def test_cycle_detected():
    p = parse_program("s.br a0,a,c\na: br s1,a,c\nc: mv s1,s1")
    g = build_cfg(p)
    with pytest.raises(CyclicRegion):
        level_structure(g, secret_regions(g)[0])
    assert [d.code for d in validate_foldable(g, secret_regions(g)[0])] == ["CYCLIC_REGION"]


def test_multiple_exits():
    with pytest.raises(NoUniqueExit):
        build_cfg(parse_program("f: ret\nmain: br a0,f,x\nx: mv s1,s1"))


@st.composite
def forward_dags(draw):
    """Programs whose branches only jump forward; the last block is the exit."""
    n = draw(st.integers(2, 7))
    lines = []
    for i in range(n - 1):
        t = draw(st.integers(i + 1, n - 1))
        f = draw(st.integers(i + 1, n - 1))
        lines.append(f"B{i}: addi s1,s1,{i}\n     br a0,B{t},B{f}")
    lines.append(f"B{n - 1}: mv a0,s1")
    return parse_program("\n".join(lines))


@settings(max_examples=300, deadline=None)
@given(forward_dags())
def test_postdominators_agree_with_path_enumeration(p):
    g = build_cfg(p, strict=False)
    pdom = postdominators(g)
    for b in g.reachable:
        if b == g.exit:
            continue
        paths = all_paths(g, b, g.exit)
        expected = set.intersection(*(set(x) for x in paths))
        assert pdom[b] == expected
        assert immediate_postdominator(g, b, pdom) == ipdom_by_paths(g, b)
