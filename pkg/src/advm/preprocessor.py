"""Include expansion, conditional resolution and procedure linking.

:func:`resolve` turns one test file into an :class:`ExpandedProgram`: a flat,
directive-free instruction list with every expression already evaluated
against the Global Defines active for a (derivative, target) selection.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from advm.dialect import (
    IMM,
    LABEL,
    MEM,
    REG,
    Directive,
    Instruction,
    Label,
    Line,
    ProcEnd,
    ProcStart,
    SourceUnit,
    eval_expr,
    parse_unit,
)
from advm.env_model import Layer
from advm.errors import (
    DuplicateDefine,
    DuplicateLabel,
    DuplicateProcedure,
    IncludeCycle,
    IncludeNotFound,
    UnbalancedConditional,
    UnbalancedProc,
    UnresolvedCall,
    UnresolvedLabel,
)

_SELECTION_NAME_RE = re.compile(r"[A-Za-z0-9_]+\Z")
SEED_ORIGIN = "<selection>"
TARGET_ORIGIN = "<target>"


@dataclass(frozen=True)
class Selection:
    derivative: str
    target: str

    def __post_init__(self):
        for what, value in (("derivative", self.derivative), ("target", self.target)):
            if not value or not _SELECTION_NAME_RE.match(value):
                raise ValueError(f"{what} name must be a non-empty identifier, got {value!r}")

    def seed_defines(self) -> tuple[str, str]:
        return f"DERIV_{self.derivative.upper()}", f"TARGET_{self.target.upper()}"


@dataclass(frozen=True)
class DefineEntry:
    value: int
    origin: str
    layer: Layer


class DefineTable(Mapping[str, int]):
    """Ordered name -> value table; every entry remembers where it came from."""

    def __init__(self, entries: Iterable[tuple[str, DefineEntry]] = ()):
        self._entries: dict[str, DefineEntry] = {}
        for name, entry in entries:
            self.define(name, entry.value, entry.origin, entry.layer)

    def define(self, name: str, value: int, origin: str, layer: Layer) -> None:
        if name in self._entries:
            raise DuplicateDefine(name, self._entries[name].origin, origin)
        self._entries[name] = DefineEntry(value & 0xFFFFFFFF, origin, layer)

    def entry(self, name: str) -> DefineEntry:
        return self._entries[name]

    def __getitem__(self, name: str) -> int:
        return self._entries[name].value

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        body = ", ".join(f"{k}={v.value}" for k, v in self._entries.items())
        return f"DefineTable({body})"


@dataclass(frozen=True)
class ResolvedOperand:
    kind: str
    value: int = 0
    label: str | None = None

    def render(self) -> str:
        if self.kind == REG:
            return f"d{self.value}"
        if self.kind == IMM:
            return f"0x{self.value:X}"
        if self.kind == MEM:
            return f"[0x{self.value:X}]"
        return self.label


@dataclass(frozen=True)
class ResolvedInstruction:
    opcode: str
    operands: tuple[ResolvedOperand, ...]
    path: str
    line: int

    @property
    def site(self) -> str:
        return f"{self.path}:{self.line}"

    def render(self) -> str:
        if not self.operands:
            return self.opcode
        return f"{self.opcode} " + ", ".join(op.render() for op in self.operands)


@dataclass(frozen=True)
class ExpandedLine:
    """A surviving non-directive line, with operands already evaluated."""

    stmt: object  # ResolvedInstruction | Label | ProcStart | ProcEnd
    path: str
    line: int

    @property
    def site(self) -> str:
        return f"{self.path}:{self.line}"


@dataclass(frozen=True)
class Procedure:
    name: str
    body: tuple[ExpandedLine, ...]
    origin: str


@dataclass(frozen=True)
class ExpandedProgram:
    instructions: tuple[ResolvedInstruction, ...]
    main_length: int
    procedures: Mapping[str, tuple[int, int]]  # name -> [start, end)
    labels: Mapping[str, int]
    sources: tuple[str, ...] = field(default=())
    entry: int = 0

    def segment_ends(self) -> frozenset[int]:
        ends = {self.main_length}
        ends.update(end for _, end in self.procedures.values())
        return frozenset(ends)

    def listing(self) -> str:
        """One ``path:line<TAB>instruction`` row per instruction."""
        return "".join(f"{ins.path}:{ins.line}\t{ins.render()}\n" for ins in self.instructions)


def display_path(path: str, base: str | os.PathLike | None) -> str:
    if base is None:
        return Path(path).as_posix()
    rel = os.path.relpath(path, base)
    return Path(rel).as_posix()


# -- conditionals ------------------------------------------------------------


def iter_taken_lines(unit: SourceUnit, defs: Mapping[str, int]) -> Iterator[Line]:
    """Yield the lines of ``unit`` that survive conditional evaluation.

    Conditions are evaluated lazily against ``defs``, so a caller that adds
    definitions between yields sees them honoured by later conditionals.
    """
    # each frame: [parent_active, branch_taken, in_else, opening line]
    stack: list[list] = []
    active = True
    for ln in unit.lines:
        stmt = ln.stmt
        if isinstance(stmt, Directive) and stmt.kind in ("ifdef", "ifndef", "if"):
            if active:
                if stmt.kind == "ifdef":
                    cond = stmt.name in defs
                elif stmt.kind == "ifndef":
                    cond = stmt.name not in defs
                else:
                    cond = eval_expr(stmt.expr, defs, f"{unit.path}:{ln.number}") != 0
            else:
                cond = False
            stack.append([active, cond, False, ln.number])
            active = active and cond
            continue
        if isinstance(stmt, Directive) and stmt.kind == "else":
            if not stack or stack[-1][2]:
                raise UnbalancedConditional(f"{unit.path}:{ln.number}", "#else without matching #if")
            frame = stack[-1]
            frame[2] = True
            active = frame[0] and not frame[1]
            continue
        if isinstance(stmt, Directive) and stmt.kind == "endif":
            if not stack:
                raise UnbalancedConditional(f"{unit.path}:{ln.number}", "#endif without matching #if")
            active = stack.pop()[0]
            continue
        if active:
            yield ln
    if stack:
        raise UnbalancedConditional(f"{unit.path}:{stack[-1][3]}", "conditional is never closed with #endif")


def expand_conditionals(unit: SourceUnit, defs: Mapping[str, int]) -> list[Line]:
    return list(iter_taken_lines(unit, defs))


# -- linking -----------------------------------------------------------------


def link_procedures(units: Sequence[Sequence[ExpandedLine]]) -> dict[str, Procedure]:
    """Collect ``proc``/``endp`` bodies from already expanded units."""
    table: dict[str, Procedure] = {}
    for unit in units:
        current: tuple[str, str] | None = None
        body: list[ExpandedLine] = []
        for item in unit:
            if isinstance(item.stmt, ProcStart):
                if current is not None:
                    raise UnbalancedProc(item.site, f"proc {item.stmt.name} nested in proc {current[0]}")
                current = (item.stmt.name, item.site)
                body = []
            elif isinstance(item.stmt, ProcEnd):
                if current is None:
                    raise UnbalancedProc(item.site, "endp without proc")
                name, origin = current
                if name in table:
                    raise DuplicateProcedure(name, table[name].origin, origin)
                table[name] = Procedure(name, tuple(body), origin)
                current = None
            elif current is not None:
                body.append(item)
        if current is not None:
            raise UnbalancedProc(current[1], f"proc {current[0]} has no endp")
    return table


def _main_stream(items: Sequence[ExpandedLine]) -> list[ExpandedLine]:
    out = []
    depth = 0
    for item in items:
        if isinstance(item.stmt, ProcStart):
            depth += 1
        elif isinstance(item.stmt, ProcEnd):
            depth -= 1
        elif depth == 0:
            out.append(item)
    return out


def build_program(items: Sequence[ExpandedLine], sources: Sequence[str] = ()) -> ExpandedProgram:
    """Lay out main stream then procedure bodies, and bind label targets."""
    procedures = link_procedures([items])
    code: list[ResolvedInstruction] = []
    labels: dict[str, int] = {}
    label_sites: dict[str, str] = {}
    spans: dict[str, tuple[int, int]] = {}

    def place(seq: Iterable[ExpandedLine]) -> None:
        for item in seq:
            if isinstance(item.stmt, Label):
                name = item.stmt.name
                if name in labels:
                    raise DuplicateLabel(name, label_sites[name], item.site)
                labels[name] = len(code)
                label_sites[name] = item.site
            else:
                code.append(item.stmt)

    place(_main_stream(items))
    main_length = len(code)
    for name, proc in procedures.items():
        start = len(code)
        place(proc.body)
        spans[name] = (start, len(code))

    for ins in code:
        if ins.opcode == "call":
            target = ins.operands[0].label
            if target not in spans:
                raise UnresolvedCall(target, ins.site)
        elif ins.opcode in ("jmp", "jz", "jnz"):
            target = ins.operands[-1].label
            if target not in labels:
                raise UnresolvedLabel(target, ins.site)
    return ExpandedProgram(tuple(code), main_length, spans, labels, tuple(sources))


# -- resolve -----------------------------------------------------------------


def guess_layer(path: Path, entry: Path) -> Layer:
    """Layer fallback used when no discovered layout is supplied."""
    if "Abstraction_Layer" in path.parts:
        return Layer.ABSTRACTION
    if path.parent == entry.parent:
        return Layer.TEST
    return Layer.GLOBAL


def find_include(rel: str, including_dir: Path, search_roots: Sequence[Path]) -> Path | None:
    for base in (including_dir, *search_roots):
        candidate = Path(base) / rel
        if candidate.is_file():
            return candidate.resolve()
    return None


class _Resolver:
    def __init__(self, entry: Path, search_roots, layer_of, display_base):
        self.entry = entry
        self.display_base = display_base
        self.search_roots = [Path(r).resolve() for r in search_roots]
        self.layer_of = layer_of or (lambda p: guess_layer(p, entry))
        self.table = DefineTable()
        self.items: list[ExpandedLine] = []
        self.sources: list[str] = []

    def process(self, path: Path, chain: list[Path]) -> None:
        if path in chain:
            raise IncludeCycle([*chain, path])
        chain = [*chain, path]
        shown = display_path(path, self.display_base)
        self.sources.append(shown)
        unit = parse_unit(shown, path.read_text(encoding="utf-8"))
        layer = self.layer_of(path)
        for ln in iter_taken_lines(unit, self.table):
            stmt = ln.stmt
            origin = f"{shown}:{ln.number}"
            if isinstance(stmt, Directive):
                if stmt.kind == "define":
                    if stmt.name in self.table:
                        raise DuplicateDefine(stmt.name, self.table.entry(stmt.name).origin, origin)
                    value = eval_expr(stmt.expr, self.table, origin)
                    self.table.define(stmt.name, value, origin, layer)
                elif stmt.kind == "include":
                    target = find_include(stmt.path, path.parent, self.search_roots)
                    if target is None:
                        raise IncludeNotFound(stmt.path, origin)
                    self.process(target, chain)
            elif isinstance(stmt, Instruction):
                self.items.append(ExpandedLine(self._evaluate(stmt, origin, shown, ln.number), shown, ln.number))
            elif isinstance(stmt, (Label, ProcStart, ProcEnd)):
                self.items.append(ExpandedLine(stmt, shown, ln.number))

    def _evaluate(self, ins: Instruction, origin: str, path: str, line: int) -> ResolvedInstruction:
        ops = []
        for op in ins.operands:
            if op.kind == REG:
                ops.append(ResolvedOperand(REG, op.reg))
            elif op.kind == LABEL:
                ops.append(ResolvedOperand(LABEL, label=op.label))
            else:
                ops.append(ResolvedOperand(op.kind, eval_expr(op.expr, self.table, origin)))
        return ResolvedInstruction(ins.opcode, tuple(ops), path, line)


def resolve(
    entry: str | os.PathLike,
    selection: Selection,
    search_roots: Sequence[str | os.PathLike] = (),
    *,
    extra_defines: Sequence[str] = (),
    layer_of: Callable[[Path], Layer] | None = None,
    display_base: str | os.PathLike | None = None,
) -> tuple[ExpandedProgram, DefineTable]:
    """Expand ``entry`` for ``selection`` into a runnable program.

    Includes are looked up next to the including file first, then in
    ``search_roots`` in order. ``extra_defines`` are additional names seeded
    with value 1 (a target's injected defines). Provenance paths are shown
    relative to ``display_base`` when given, absolute otherwise.
    """
    entry = Path(entry).resolve()
    resolver = _Resolver(entry, search_roots, layer_of, display_base)
    for name in selection.seed_defines():
        resolver.table.define(name, 1, SEED_ORIGIN, Layer.ABSTRACTION)
    for name in extra_defines:
        resolver.table.define(name, 1, TARGET_ORIGIN, Layer.ABSTRACTION)
    resolver.process(entry, [])
    program = build_program(resolver.items, resolver.sources)
    return program, resolver.table

