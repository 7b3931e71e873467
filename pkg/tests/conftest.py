from __future__ import annotations

from pathlib import Path

import pytest

from levelfold.asm import Program, parse_program
from levelfold.bench import corpus_dir
from levelfold.leakage import SecurityPolicy, parse_policy

SAMPLES = corpus_dir() / "samples"


def sample(name: str, ext: str = "sasm") -> Program:
    return parse_program((SAMPLES / f"{name}.{ext}").read_text(), "source" if ext == "sasm" else "target")


def sample_policy(name: str) -> SecurityPolicy:
    return parse_policy((SAMPLES / f"{name}.policy").read_text())


@pytest.fixture
def samples_dir() -> Path:
    return SAMPLES


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
