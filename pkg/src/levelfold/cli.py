"""Command-line entry point: ``levelfold <subcommand> ...``.

Exit codes: 0 success or passing verdict, 1 failing verdict or rejected
input, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .asm import ParseError, Program, parse_program, serialize_program
from .cfg import NoUniqueExit, build_cfg, cfg_dump
from .fold import CorrMap, FoldError, transform
from .leakage import ContractError, Observer, SecurityPolicy, default_contract, load_contract, parse_policy
from .linearize import UnsupportedShape, linearize
from .oni import InputSpace, check_correctness, check_oni
from .semantics import Stuck, initial_configuration, run


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--contract", type=Path, help="leakage contract file (default: bundled)")
    p.add_argument("--observer", choices=("weak", "strong"), default="weak")
    p.add_argument("--hw-mode", action="store_true", help="enforce hardware level and stack limits")
    p.add_argument("--max-steps", type=int, default=100_000)
    p.add_argument("--policy", type=Path, help="security policy (default: <program stem>.policy)")
    p.add_argument("--seed", type=int, help="add seeded random public fixtures")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="levelfold", description="Fold balanced secret-dependent code and check it.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("fold", help="fold a balanced source program")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--emit-corrmap", type=Path)
    _common(p)

    p = sub.add_parser("linearize", help="mask-based linearization baseline")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path)
    _common(p)

    for name, text in (("run", "execute a program"), ("trace", "print the observation trace")):
        p = sub.add_parser(name, help=text)
        p.add_argument("input", type=Path)
        p.add_argument("--reg", action="append", default=[], metavar="NAME=VALUE")
        p.add_argument("--mem", action="append", default=[], metavar="ADDR=VALUE")
        p.add_argument("-o", "--output", type=Path)
        _common(p)

    p = sub.add_parser("check-oni", help="observational non-interference")
    p.add_argument("input", type=Path)
    _common(p)

    p = sub.add_parser("check-correctness", help="lockstep source/target comparison")
    p.add_argument("source", type=Path)
    p.add_argument("target", type=Path, nargs="?", help="folded program (default: fold the source)")
    p.add_argument("--corrmap", type=Path, help="correspondence file for TARGET")
    _common(p)

    p = sub.add_parser("bench", help="run the benchmark corpus")
    p.add_argument("corpus", type=Path, nargs="?", help="corpus directory (default: bundled)")
    p.add_argument("--out", type=Path, default=Path("bench-report"), help="directory for report files")
    _common(p)

    p = sub.add_parser("cfg-dump", help="print basic blocks and edges")
    p.add_argument("input", type=Path)
    _common(p)
    return ap


def _read_program(path: Path, dialect: str | None = None) -> Program:
    try:
        text = path.read_text()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None
    return parse_program(text, dialect)


def _contract(args):
    return load_contract(args.contract.read_text()) if args.contract else default_contract()


def _policy(args, program_path: Path) -> SecurityPolicy:
    path = args.policy or program_path.with_suffix(".policy")
    if args.policy is None and not path.exists():
        return SecurityPolicy()
    try:
        return parse_policy(path.read_text())
    except OSError as e:
        raise UsageError(f"cannot read policy {path}: {e.strerror}") from None
    except ValueError as e:
        raise UsageError(f"policy {path}: {e}") from None


def _assignments(items: list[str], key) -> dict:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"expected NAME=VALUE, got {item!r}")
        try:
            out[key(name.strip())] = int(value, 0)
        except ValueError:
            raise UsageError(f"bad value in {item!r}") from None
    return out


def _write(text: str, output: Path | None, out) -> None:
    if output:
        output.write_text(text)
    else:
        out.write(text)


def cmd_fold(args, out) -> int:
    p = _read_program(args.input, "source")
    try:
        res = transform(p, hw_mode=args.hw_mode, blocklist=_contract(args).blocklist)
    except FoldError as e:
        for d in e.diagnostics:
            print(f"error: {e.context + ': ' if e.context else ''}{d}", file=sys.stderr)
        return 1
    _write(serialize_program(res.program), args.output, out)
    if args.emit_corrmap:
        args.emit_corrmap.write_text(res.corrmap.dumps())
    return 0


def cmd_linearize(args, out) -> int:
    p = _read_program(args.input, "source")
    try:
        lin = linearize(p)
    except UnsupportedShape as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    _write(serialize_program(lin), args.output, out)
    return 0


def cmd_run(args, out, trace: bool = False) -> int:
    p = _read_program(args.input)
    c0 = initial_configuration(p, _assignments(args.reg, str), _assignments(args.mem, lambda s: int(s, 0)))
    observer = Observer(args.observer, _contract(args))
    try:
        res = run(p, c0, observer, args.max_steps, hw_mode=args.hw_mode)
    except Stuck as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if trace:
        lines = []
        for i, (pc, obs) in enumerate(zip(res.pcs, res.trace)):
            sl = "-" if obs.slice_addr is None else str(obs.slice_addr)
            lines.append(f"step={i} pc={pc} slice={sl} obs={obs.render()}")
        _write("\n".join(lines) + ("\n" if lines else ""), args.output, out)
    else:
        regs = " ".join(f"{k}={v}" for k, v in sorted(res.final.reg.items()) if v)
        mem = " ".join(f"{a}={v}" for a, v in sorted(res.final.mem.items()) if v)
        _write(f"halt={res.halt_reason} steps={res.steps}\nreg {regs}\nmem {mem}\n", args.output, out)
    return 0 if res.halted else 1


def _fmt_obs(o) -> str:
    if o is None:
        return "<end>"
    tail = "" if o.slice_addr is None else f" slice={o.slice_addr}"
    return o.render() + tail


def _fmt_assignment(a) -> str:
    return " ".join(f"{where}={v}" if space == "reg" else f"mem[{where}]={v}" for (space, where), v in a)


def cmd_check_oni(args, out) -> int:
    p = _read_program(args.input)
    space = InputSpace.from_policy(_policy(args, args.input), args.seed)
    v = check_oni(p, Observer(args.observer, _contract(args)), space, args.max_steps, hw_mode=args.hw_mode)
    line = f"check=oni-{args.observer} verdict={v.status} runs={v.runs}"
    if v.counterexample:
        cx = v.counterexample
        line += (f" step={cx.step} cause={cx.cause}"
                 f"\n  first:  {_fmt_assignment(cx.first)} -> {_fmt_obs(cx.obs_first)}"
                 f"\n  second: {_fmt_assignment(cx.second)} -> {_fmt_obs(cx.obs_second)}")
    elif v.detail:
        line += f" detail={v.detail!r}"
    out.write(line + "\n")
    return 0 if v.passed else 1


def cmd_check_correctness(args, out) -> int:
    src = _read_program(args.source, "source")
    if args.target is None:
        try:
            tgt, corr = transform(src, hw_mode=args.hw_mode)
        except FoldError as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
    else:
        if args.corrmap is None:
            raise UsageError("a target program needs --corrmap")
        tgt = _read_program(args.target)
        try:
            corr = CorrMap.loads(args.corrmap.read_text())
        except ValueError as e:
            raise UsageError(f"corrmap: {e}") from None
    space = InputSpace.from_policy(_policy(args, args.source), args.seed)
    v = check_correctness(src, tgt, corr, space, args.max_steps)
    line = f"check=correctness verdict={v.status} runs={v.runs}"
    if v.violation:
        line += (f" step={v.violation.step} cause={v.violation.cause!r}"
                 f" input={_fmt_assignment(v.violation.assignment)}")
    out.write(line + "\n")
    return 0 if v.passed else 1


def cmd_bench(args, out) -> int:
    from .bench import bench_all, load_corpus, write_report

    specs = load_corpus(args.corpus)
    report = bench_all(specs, _contract(args), max_steps=args.max_steps, seed=args.seed,
                       hw_mode=args.hw_mode)
    paths = write_report(report, args.out)
    out.write("\n".join(report.machine_lines()) + "\n\n")
    out.write(report.table())
    out.write("wrote " + ", ".join(str(p) for p in paths) + "\n")
    return 0 if report.ok else 1


def cmd_cfg_dump(args, out) -> int:
    p = _read_program(args.input)
    try:
        g = build_cfg(p, strict=False)
    except NoUniqueExit as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out.write(cfg_dump(g))
    return 0


COMMANDS = {
    "fold": cmd_fold,
    "linearize": cmd_linearize,
    "run": cmd_run,
    "trace": lambda a, o: cmd_run(a, o, trace=True),
    "check-oni": cmd_check_oni,
    "check-correctness": cmd_check_correctness,
    "bench": cmd_bench,
    "cfg-dump": cmd_cfg_dump,
}


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        return COMMANDS[args.cmd](args, out)
    except (UsageError, ParseError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
