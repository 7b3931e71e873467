"""Benchmark corpus, metrics and the verdict sweep.

Each benchmark directory holds ``baseline.sasm`` (the original program with
its secret branches annotated), ``balanced.sasm`` (the same program with
padded branches) and ``policy`` (the secret inputs).  The linearized
variant is derived from the baseline, the folded one from the balanced
program.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from .asm import Program, parse_program
from .fold import CorrMap, FoldError, transform
from .leakage import LeakageContract, Observer, SecurityPolicy, default_contract, parse_policy
from .linearize import SCRATCH, UnsupportedShape, linearize
from .oni import InputSpace, check_correctness, check_final_equivalence, check_oni
from .semantics import Stuck, run

VARIANTS = ("baseline", "balanced", "linearized", "folded")
CORPUS_NAMES = ("bsl", "diamond", "fork", "ifthenloop", "keypad", "kruskal-main",
                "modexp2", "mulmod16", "sharevalue", "switch", "triangle")


def corpus_dir() -> Path:
    return Path(str(resources.files("levelfold").joinpath("corpus")))


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    path: Path
    baseline: Program
    balanced: Program
    policy: SecurityPolicy

    def space(self, seed: int | None = None) -> InputSpace:
        return InputSpace.from_policy(self.policy, seed)


def load_benchmark(path: Path) -> BenchmarkSpec:
    path = Path(path)
    return BenchmarkSpec(
        path.name,
        path,
        parse_program((path / "baseline.sasm").read_text(), "source"),
        parse_program((path / "balanced.sasm").read_text(), "source"),
        parse_policy((path / "policy").read_text()),
    )


def load_corpus(root: Path | None = None) -> list[BenchmarkSpec]:
    root = Path(root) if root is not None else corpus_dir()
    dirs = sorted(d for d in root.iterdir() if (d / "balanced.sasm").exists())
    return [load_benchmark(d) for d in dirs]


@dataclass(frozen=True)
class CheckResult:
    bench: str
    check: str
    verdict: str            # pass, fail, inconclusive or n/a
    expected: str           # the verdict a correct toolchain produces
    step: int | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.verdict == self.expected or self.verdict == "n/a"

    def line(self) -> str:
        tail = f" step={self.step}" if self.step is not None else ""
        return f"bench={self.bench} check={self.check} verdict={self.verdict}{tail}"


@dataclass
class BenchRow:
    name: str
    static: dict[str, int | None] = field(default_factory=dict)
    dynamic: dict[str, float | None] = field(default_factory=dict)
    checks: list[CheckResult] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    programs: dict[str, Program | None] = field(default_factory=dict)
    corrmap: CorrMap | None = None

    def ratio(self, kind: str, variant: str) -> float | None:
        table = self.static if kind == "static" else self.dynamic
        base, v = table.get("baseline"), table.get(variant)
        if not base or v is None:
            return None
        return v / base


def mean_steps(p: Program, space: InputSpace, max_steps: int) -> float:
    counts = []
    for fx in space.fixtures:
        for a in space.assignments():
            counts.append(run(p, space.configuration(p, fx, a), None, max_steps).steps)
    return statistics.fmean(counts)


def _oni(bench: str, check: str, expected: str, p: Program, mode: str, space: InputSpace,
         k: LeakageContract, max_steps: int, hw_mode: bool) -> CheckResult:
    try:
        v = check_oni(p, Observer(mode, k), space, max_steps, hw_mode=hw_mode)
    except Stuck as e:
        return CheckResult(bench, check, "fail", expected, e.step, str(e))
    cex = v.counterexample
    detail = ""
    if cex is not None:
        detail = f"{cex.cause}: {cex.obs_first} vs {cex.obs_second}"
    return CheckResult(bench, check, v.status, expected, cex.step if cex else None, detail or v.detail)


def slice_oblivious(p: Program, space: InputSpace, max_steps: int) -> tuple[bool, int | None]:
    """All executions visit the same sequence of slice addresses."""
    for fx in space.fixtures:
        ref = None
        for a in space.assignments():
            s = run(p, space.configuration(p, fx, a), None, max_steps).slices
            if ref is None:
                ref = s
                continue
            if s != ref:
                step = next((i for i, (x, y) in enumerate(zip(ref, s)) if x != y), min(len(s), len(ref)))
                return False, step
    return True, None


def evaluate(spec: BenchmarkSpec, contract: LeakageContract | None = None, *,
             max_steps: int = 100_000, seed: int | None = None, hw_mode: bool = False) -> BenchRow:
    k = contract or default_contract()
    space = spec.space(seed)
    row = BenchRow(spec.name)
    name = spec.name
    row.programs["baseline"] = spec.baseline
    row.programs["balanced"] = spec.balanced
    try:
        row.programs["linearized"] = linearize(spec.baseline)
    except UnsupportedShape as e:
        row.programs["linearized"] = None
        row.notes.append(f"linearizer: {e}")

    # the balanced program must be balanced before it is folded
    gate = _oni(name, "oni-weak-balanced", "pass", spec.balanced, "weak", space, k, max_steps, hw_mode)
    row.checks.append(gate)
    row.programs["folded"] = None
    if gate.verdict == "pass":
        try:
            res = transform(spec.balanced, hw_mode=hw_mode, blocklist=k.blocklist)
            row.programs["folded"], row.corrmap = res.program, res.corrmap
        except FoldError as e:
            row.notes.append(f"fold: {e}")
            row.checks.append(CheckResult(name, "fold", "fail", "pass", None, str(e)))

    row.checks.append(_oni(name, "oni-weak-baseline", "fail", spec.baseline, "weak", space, k,
                           max_steps, hw_mode))
    row.checks.append(_oni(name, "oni-strong-balanced", "fail", spec.balanced, "strong", space, k,
                           max_steps, hw_mode))
    folded = row.programs["folded"]
    if folded is not None:
        row.checks.append(_oni(name, "oni-strong-folded", "pass", folded, "strong", space, k,
                               max_steps, hw_mode))
        ok, step = slice_oblivious(folded, space, max_steps)
        row.checks.append(CheckResult(name, "slice-oblivious", "pass" if ok else "fail", "pass", step))
        cv = check_correctness(spec.balanced, folded, row.corrmap, space, max_steps)
        row.checks.append(CheckResult(name, "correctness", cv.status, "pass",
                                      cv.violation.step if cv.violation else None,
                                      cv.violation.cause if cv.violation else ""))
    lin = row.programs["linearized"]
    if lin is not None:
        row.checks.append(_oni(name, "oni-strong-linearized", "pass", lin, "strong", space, k,
                               max_steps, hw_mode))
        ev = check_final_equivalence(spec.baseline, lin, space, max_steps, ignore=SCRATCH)
        row.checks.append(CheckResult(name, "linearized-equivalence", ev.status, "pass"))
    else:
        row.checks.append(CheckResult(name, "oni-strong-linearized", "n/a", "pass"))

    for v in VARIANTS:
        p = row.programs.get(v)
        row.static[v] = len(p) if p is not None else None
        row.dynamic[v] = mean_steps(p, space, max_steps) if p is not None else None
    return row


@dataclass
class Report:
    rows: list[BenchRow]

    @property
    def ok(self) -> bool:
        return all(c.ok for r in self.rows for c in r.checks)

    def mean_ratio(self, kind: str, variant: str, only_linearizable: bool = False) -> float | None:
        vals = [r.ratio(kind, variant) for r in self.rows
                if not only_linearizable or r.static.get("linearized") is not None]
        vals = [v for v in vals if v is not None]
        return statistics.fmean(vals) if vals else None

    def machine_lines(self) -> list[str]:
        out = []
        for r in self.rows:
            out.extend(c.line() for c in r.checks)
            for v in VARIANTS:
                if r.static.get(v) is not None:
                    out.append(f"bench={r.name} metric=static variant={v} value={r.static[v]}")
                    out.append(f"bench={r.name} metric=steps variant={v} value={r.dynamic[v]:.2f}")
        return out

    def table(self) -> str:
        head = (f"{'benchmark':<14}{'base':>6}{'bal':>6}{'lin':>6}{'fold':>6}"
                f"{'lin/b':>8}{'fold/b':>8}{'steps lin/b':>13}{'steps fold/b':>14}  verdicts")
        lines = [head, "-" * len(head)]

        def fmt(x, spec):
            return "n/a" if x is None else format(x, spec)

        for r in self.rows:
            bad = [c.check for c in r.checks if not c.ok]
            lines.append(
                f"{r.name:<14}"
                + "".join(f"{fmt(r.static.get(v), 'd'):>6}" for v in VARIANTS)
                + f"{fmt(r.ratio('static', 'linearized'), '.2f'):>8}"
                + f"{fmt(r.ratio('static', 'folded'), '.2f'):>8}"
                + f"{fmt(r.ratio('steps', 'linearized'), '.2f'):>13}"
                + f"{fmt(r.ratio('steps', 'folded'), '.2f'):>14}"
                + "  " + ("ok" if not bad else "UNEXPECTED: " + ",".join(bad))
            )
        lines.append("-" * len(head))
        lines.append(
            f"{'mean':<14}{'':>24}"
            f"{fmt(self.mean_ratio('static', 'linearized', True), '.2f'):>8}"
            f"{fmt(self.mean_ratio('static', 'folded', True), '.2f'):>8}"
            f"{fmt(self.mean_ratio('steps', 'linearized', True), '.2f'):>13}"
            f"{fmt(self.mean_ratio('steps', 'folded', True), '.2f'):>14}"
        )
        return "\n".join(lines) + "\n"


def bench_all(specs: Iterable[BenchmarkSpec] | None = None, contract: LeakageContract | None = None,
              **kw) -> Report:
    specs = load_corpus() if specs is None else list(specs)
    rows = []
    for spec in sorted(specs, key=lambda s: s.name):
        try:
            rows.append(evaluate(spec, contract, **kw))
        except Exception as e:  # one broken benchmark must not stop the sweep
            row = BenchRow(spec.name)
            row.checks.append(CheckResult(spec.name, "evaluate", "fail", "pass", None, repr(e)))
            rows.append(row)
    return Report(rows)


def write_report(report: Report, out_dir: Path) -> list[Path]:
    """Write machine lines, the table and figures into ``out_dir``."""
    from .plots import plot_ratios

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = out_dir / "report.txt"
    lines.write_text("\n".join(report.machine_lines()) + "\n")
    table = out_dir / "table.txt"
    table.write_text(report.table())
    return [lines, table, *plot_ratios(report, out_dir)]
