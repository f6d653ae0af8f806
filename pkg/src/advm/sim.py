"""Execute expanded programs against a memory-mapped device model.

A derivative supplies the register map (addresses, widths, bit fields); a
target supplies extra defines and a cycle budget. Every instruction costs
one cycle. Abnormal outcomes are verdicts on the :class:`RunReport`, never
exceptions.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from advm.dialect import DEFINE_NAME_RE, REG, WORD_MASK
from advm.env_model import read_ini, split_list
from advm.errors import (
    DuplicateAddress,
    FieldExceedsWidth,
    MalformedConfig,
    OverlappingFields,
)
from advm.preprocessor import ExpandedProgram, ResolvedInstruction

SCRATCH_RAM = range(0x0000_0000, 0x0001_0000)
MAX_CALL_DEPTH = 64

PASS = "Pass"
FAIL = "Fail"
TIMEOUT = "Timeout"
TRAP = "Trap"
VERDICTS = (PASS, FAIL, TIMEOUT, TRAP)


# -- device and target specs -------------------------------------------------


@dataclass(frozen=True)
class FieldSpec:
    name: str
    start: int
    size: int
    reset: int = 0

    @property
    def mask(self) -> int:
        return ((1 << self.size) - 1) << self.start


@dataclass(frozen=True)
class RegisterSpec:
    name: str
    address: int
    width: int
    fields: tuple[FieldSpec, ...] = ()

    @property
    def mask(self) -> int:
        """Bits that hold state: the union of fields, clipped to the width."""
        union = 0
        for f in self.fields:
            union |= f.mask
        return union & ((1 << self.width) - 1)

    @property
    def reset_value(self) -> int:
        value = 0
        for f in self.fields:
            value |= f.reset << f.start
        return value & self.mask


@dataclass(frozen=True)
class DerivativeSpec:
    name: str
    registers: tuple[RegisterSpec, ...]

    def __post_init__(self):
        validate_derivative(self)

    def register_at(self, address: int) -> RegisterSpec | None:
        for reg in self.registers:
            if reg.address == address:
                return reg
        return None


def validate_derivative(spec: DerivativeSpec) -> None:
    seen: dict[int, str] = {}
    for reg in spec.registers:
        if not 1 <= reg.width <= 32:
            raise MalformedConfig(f"register {reg.name}: width {reg.width} not in 1..32")
        if not 0 <= reg.address <= WORD_MASK:
            raise MalformedConfig(f"register {reg.name}: address 0x{reg.address:X} is not 32-bit")
        if reg.address in seen:
            raise DuplicateAddress(f"registers {seen[reg.address]} and {reg.name} share address 0x{reg.address:X}")
        seen[reg.address] = reg.name
        used = 0
        for f in reg.fields:
            if f.start < 0 or f.size < 1:
                raise MalformedConfig(f"field {reg.name}.{f.name}: start must be >= 0 and size >= 1")
            if f.start + f.size > reg.width:
                raise FieldExceedsWidth(
                    f"field {reg.name}.{f.name}: start {f.start} + size {f.size} exceeds width {reg.width}"
                )
            if used & f.mask:
                raise OverlappingFields(f"field {reg.name}.{f.name} overlaps another field of {reg.name}")
            if not 0 <= f.reset < (1 << f.size):
                raise MalformedConfig(f"field {reg.name}.{f.name}: reset {f.reset} does not fit in {f.size} bits")
            used |= f.mask


def _int(value: str, what: str) -> int:
    try:
        return int(value.strip(), 0)
    except ValueError:
        raise MalformedConfig(f"{what}: {value!r} is not an integer") from None


def load_derivative(path: str | os.PathLike) -> DerivativeSpec:
    """Load a ``derivative_<NAME>.cfg`` file.

    ::

        [derivative]
        name = A
        [register MODULE_CTRL]
        address = 0xF0001000
        width = 32
        [field MODULE_CTRL.PAGE]
        start = 4
        size = 5
        reset = 0
    """
    path = Path(path)
    if not path.is_file():
        raise MalformedConfig(f"{path}: no such derivative config")
    ini = read_ini(path)
    if not ini.has_option("derivative", "name"):
        raise MalformedConfig(f"{path}: missing [derivative] name")
    registers: dict[str, dict] = {}
    fields: list[tuple[str, FieldSpec]] = []
    for section in ini.sections():
        kind, _, rest = section.partition(" ")
        try:
            if kind == "derivative":
                continue
            if kind == "register" and rest:
                registers[rest] = {
                    "address": _int(ini[section]["address"], f"{section} address"),
                    "width": _int(ini[section].get("width", "32"), f"{section} width"),
                }
            elif kind == "field" and "." in rest:
                reg_name, _, field_name = rest.partition(".")
                sec = ini[section]
                fields.append(
                    (
                        reg_name,
                        FieldSpec(
                            field_name,
                            _int(sec["start"], f"{section} start"),
                            _int(sec["size"], f"{section} size"),
                            _int(sec.get("reset", "0"), f"{section} reset"),
                        ),
                    )
                )
            else:
                raise MalformedConfig(f"{path}: unexpected section [{section}]")
        except KeyError as exc:
            raise MalformedConfig(f"{path}: [{section}] is missing {exc}") from None
    by_reg: dict[str, list[FieldSpec]] = {name: [] for name in registers}
    for reg_name, f in fields:
        if reg_name not in by_reg:
            raise MalformedConfig(f"{path}: field {reg_name}.{f.name} names an undeclared register")
        by_reg[reg_name].append(f)
    regs = tuple(
        RegisterSpec(name, registers[name]["address"], registers[name]["width"], tuple(by_reg[name]))
        for name in registers
    )
    return DerivativeSpec(ini["derivative"]["name"].strip(), regs)


@dataclass(frozen=True)
class TargetSpec:
    name: str
    max_cycles: int
    defines: tuple[str, ...] = ()

    def __post_init__(self):
        if self.max_cycles < 1:
            raise MalformedConfig(f"target {self.name}: max_cycles must be >= 1")
        for name in self.defines:
            if not DEFINE_NAME_RE.match(name):
                raise MalformedConfig(f"target {self.name}: injected define {name!r} is not an upper-case name")


def load_target(path: str | os.PathLike) -> TargetSpec:
    """Load a ``target_<NAME>.cfg`` file (``[target] name, max_cycles, defines``)."""
    path = Path(path)
    if not path.is_file():
        raise MalformedConfig(f"{path}: no such target config")
    ini = read_ini(path)
    if not ini.has_section("target"):
        raise MalformedConfig(f"{path}: missing [target] section")
    sec = ini["target"]
    if "name" not in sec or "max_cycles" not in sec:
        raise MalformedConfig(f"{path}: [target] needs name and max_cycles")
    return TargetSpec(sec["name"].strip(), _int(sec["max_cycles"], "max_cycles"), split_list(sec.get("defines", "")))


def derivative_path(root: str | os.PathLike, name: str) -> Path:
    return Path(root) / f"derivative_{name}.cfg"


def target_path(root: str | os.PathLike, name: str) -> Path:
    return Path(root) / f"target_{name}.cfg"


# -- machine -----------------------------------------------------------------


@dataclass
class MachineState:
    derivative: DerivativeSpec
    regs: list[int] = field(default_factory=lambda: [0] * 16)
    mem: dict[int, int] = field(default_factory=dict)
    mmio: dict[int, int] = field(default_factory=dict)
    pc: int = 0
    stack: list[int] = field(default_factory=list)
    cycles: int = 0

    def __post_init__(self):
        for reg in self.derivative.registers:
            self.mmio.setdefault(reg.address, reg.reset_value)


def snapshot_mmio(state: MachineState) -> list[tuple[str, int]]:
    """Register values ordered by address."""
    out = []
    for reg in sorted(state.derivative.registers, key=lambda r: r.address):
        out.append((reg.name, state.mmio[reg.address] & reg.mask))
    return out


@dataclass(frozen=True)
class RunReport:
    verdict: str
    cycles: int
    site: str | None = None
    message: str = ""
    expected: int | None = None
    actual: int | None = None
    mmio: tuple[tuple[str, int], ...] = ()

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def render(self) -> str:
        lines = [f"verdict: {self.verdict}", f"cycles: {self.cycles}"]
        if self.site:
            lines.append(f"site: {self.site}")
        if self.message:
            lines.append(f"message: {self.message}")
        if self.expected is not None:
            lines.append(f"expected: 0x{self.expected:08X}")
            lines.append(f"actual: 0x{self.actual:08X}")
        for name, value in self.mmio:
            lines.append(f"mmio {name} = 0x{value:08X}")
        return "\n".join(lines) + "\n"


class _Stop(Exception):
    def __init__(self, verdict: str, message: str = "", expected=None, actual=None):
        self.verdict = verdict
        self.message = message
        self.expected = expected
        self.actual = actual


def _load(state: MachineState, address: int) -> int:
    reg = state.derivative.register_at(address)
    if reg is not None:
        return state.mmio[address] & reg.mask
    if address in SCRATCH_RAM:
        return state.mem.get(address, 0)
    raise _Stop(TRAP, f"load from unmapped address 0x{address:08X}")


def _store(state: MachineState, address: int, value: int) -> None:
    reg = state.derivative.register_at(address)
    if reg is not None:
        state.mmio[address] = value & reg.mask
    elif address in SCRATCH_RAM:
        state.mem[address] = value & WORD_MASK
    else:
        raise _Stop(TRAP, f"store to unmapped address 0x{address:08X}")


def _step(state: MachineState, program: ExpandedProgram, ins: ResolvedInstruction) -> int | None:
    """Execute one instruction; return the next pc when it is not pc + 1."""
    op = ins.opcode
    ops = ins.operands
    regs = state.regs
    if op == "mov":
        src = ops[1]
        regs[ops[0].value] = regs[src.value] if src.kind == REG else src.value
    elif op in ("shl", "shr"):
        count = ops[1].value
        value = regs[ops[0].value]
        if count >= 32:
            regs[ops[0].value] = 0
        else:
            regs[ops[0].value] = (value << count) & WORD_MASK if op == "shl" else value >> count
    elif op in ("or", "and", "add", "sub"):
        a, b = regs[ops[0].value], regs[ops[1].value]
        regs[ops[0].value] = {
            "or": a | b,
            "and": a & b,
            "add": (a + b) & WORD_MASK,
            "sub": (a - b) & WORD_MASK,
        }[op]
    elif op == "ld":
        regs[ops[0].value] = _load(state, ops[1].value)
    elif op == "st":
        _store(state, ops[0].value, regs[ops[1].value])
    elif op == "call":
        if len(state.stack) >= MAX_CALL_DEPTH:
            raise _Stop(TRAP, f"call depth exceeds {MAX_CALL_DEPTH}")
        start, end = program.procedures[ops[0].label]
        if start == end:
            raise _Stop(TRAP, f"call to empty procedure {ops[0].label}")
        state.stack.append(state.pc + 1)
        return start
    elif op == "ret":
        if not state.stack:
            raise _Stop(TRAP, "ret with empty call stack")
        return state.stack.pop()
    elif op == "jmp":
        return program.labels[ops[0].label]
    elif op in ("jz", "jnz"):
        zero = regs[ops[0].value] == 0
        if zero == (op == "jz"):
            return program.labels[ops[1].label]
    elif op == "expect":
        actual = regs[ops[0].value]
        expected = ops[1].value
        if actual != expected:
            raise _Stop(FAIL, f"expect d{ops[0].value}: got 0x{actual:X}, wanted 0x{expected:X}", expected, actual)
    elif op == "pass":
        raise _Stop(PASS)
    elif op == "fail":
        raise _Stop(FAIL, "fail executed")
    else:  # pragma: no cover - parser rejects unknown opcodes
        raise _Stop(TRAP, f"unknown opcode {op}")
    return None


def format_trace_line(cycle: int, pc: int, ins: ResolvedInstruction) -> str:
    """``cycle pc path:line instr``; cycle counts instructions already retired."""
    return f"{cycle} {pc} {ins.site} {ins.render()}"


def run(
    program: ExpandedProgram,
    derivative: DerivativeSpec,
    target: TargetSpec,
    *,
    trace: Callable[[int, int, ResolvedInstruction], None] | None = None,
) -> RunReport:
    """Run ``program`` from its entry point until a verdict is reached."""
    state = MachineState(derivative)
    state.pc = program.entry
    code = program.instructions
    ends = program.segment_ends()
    site = None
    try:
        while True:
            if state.pc >= len(code) or state.pc < 0:
                raise _Stop(TRAP, f"execution left the program at index {state.pc}")
            if state.cycles >= target.max_cycles:
                raise _Stop(TIMEOUT, f"cycle budget of {target.max_cycles} exhausted")
            ins = code[state.pc]
            site = ins.site
            if trace is not None:
                trace(state.cycles, state.pc, ins)
            state.cycles += 1
            nxt = _step(state, program, ins)
            if nxt is None:
                nxt = state.pc + 1
                if nxt in ends:
                    raise _Stop(TRAP, f"execution fell through the end of a code segment after {site}")
            elif ins.opcode != "call" and nxt in ends:
                raise _Stop(TRAP, f"control transfer to the end of a code segment from {site}")
            state.pc = nxt
    except _Stop as stop:
        verdict = stop.verdict
        return RunReport(
            verdict=verdict,
            cycles=state.cycles,
            site=None if verdict in (PASS, TIMEOUT) else site,
            message=stop.message,
            expected=stop.expected,
            actual=stop.actual,
            mmio=tuple(snapshot_mmio(state)),
        )

