from __future__ import annotations

import shutil

from levelfold.bench import CORPUS_NAMES, Report, bench_all, corpus_dir, evaluate, load_benchmark, load_corpus


def test_corpus_is_complete():
    assert tuple(s.name for s in load_corpus()) == CORPUS_NAMES


def test_fork_row():
    row = evaluate(load_benchmark(corpus_dir() / "fork"))
    verdicts = {c.check: c.verdict for c in row.checks}
    assert verdicts["oni-weak-balanced"] == "pass"
    assert verdicts["oni-strong-balanced"] == "fail"
    assert verdicts["oni-strong-folded"] == "pass"
    assert verdicts["oni-weak-baseline"] == "fail"
    # frozen from a hand count: 3 mask instructions + 3 blends per masked write
    assert row.static == {"baseline": 8, "balanced": 9, "linearized": 17, "folded": 9}


def test_folding_preserves_size_and_steps():
    # every source instruction lands in exactly one folded slot and runs in lockstep
    for spec in load_corpus():
        row = evaluate(spec)
        assert row.static["folded"] == row.static["balanced"], spec.name
        assert row.dynamic["folded"] == row.dynamic["balanced"], spec.name


def test_switch_and_modexp2_directions():
    rows = {r.name: r for r in bench_all([load_benchmark(corpus_dir() / n) for n in ("switch", "modexp2")]).rows}
    assert rows["switch"].static["folded"] <= rows["switch"].static["linearized"]
    assert rows["modexp2"].dynamic["folded"] <= rows["modexp2"].dynamic["linearized"]


def test_keypad_not_linearizable():
    row = evaluate(load_benchmark(corpus_dir() / "keypad"))
    assert row.programs["linearized"] is None
    assert any("linearizer" in n for n in row.notes)
    assert all(c.ok for c in row.checks)


def test_empty_corpus():
    rep = bench_all([])
    assert rep.rows == [] and rep.ok and rep.machine_lines() == []
    assert rep.mean_ratio("static", "folded") is None


def test_broken_benchmark_is_isolated(tmp_path):
    for name in ("fork", "triangle"):
        shutil.copytree(corpus_dir() / name, tmp_path / name)
    (tmp_path / "triangle" / "balanced.sasm").write_text("s.br a0,x\n")
    specs = []
    for d in sorted(tmp_path.iterdir()):
        try:
            specs.append(load_benchmark(d))
        except ValueError:
            pass
    assert [s.name for s in specs] == ["fork"]
    (tmp_path / "triangle" / "balanced.sasm").write_text("main: s.br a0,x,y\nx: mv s1,s1\ny: mv s1,s1\n")
    rep = bench_all(load_corpus(tmp_path))
    assert [r.name for r in rep.rows] == ["fork", "triangle"]
    assert all(c.ok for c in rep.rows[0].checks)
    assert not rep.ok


def test_report_lines_and_table():
    rep = Report([evaluate(load_benchmark(corpus_dir() / "triangle"))])
    lines = rep.machine_lines()
    assert "bench=triangle metric=static variant=folded value=9" in lines
    assert all(l.startswith("bench=triangle ") for l in lines)
    assert "triangle" in rep.table() and "mean" in rep.table()
