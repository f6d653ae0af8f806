from __future__ import annotations

import io
import shutil
from pathlib import Path

import pytest

from advm import corpus_path
from advm.cli import main

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def demo(tmp_path: Path) -> Path:
    """A private, writable copy of the shipped demo tree."""
    dst = tmp_path / "demo"
    shutil.copytree(corpus_path("demo"), dst)
    return dst


@pytest.fixture
def abuse(tmp_path: Path) -> Path:
    dst = tmp_path / "abuse"
    shutil.copytree(corpus_path("abuse"), dst)
    return dst


class CliResult:
    def __init__(self, code: int, out: str, err: str):
        self.code = code
        self.out = out
        self.err = err


def run_cli(*argv: str) -> CliResult:
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out=out, err=err)
    return CliResult(code, out.getvalue(), err.getvalue())


def write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
