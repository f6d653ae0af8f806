"""Assembler driven verification toolchain: MTE-ASM parsing, layered linting,
device-model execution and frozen regression releases."""

from pathlib import Path

__version__ = "0.1.0"

CORPUS = Path(__file__).parent / "corpus"


def corpus_path(name: str) -> Path:
    """Location of a shipped fixture tree (``demo``, ``abuse``, ``scenarios``)."""
    return CORPUS / name
