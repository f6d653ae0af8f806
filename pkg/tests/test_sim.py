from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advm.env_model import discover
from advm.errors import DuplicateAddress, FieldExceedsWidth, MalformedConfig, OverlappingFields
from advm.preprocessor import Selection, resolve
from advm.regression import resolve_test
from advm.sim import (
    DerivativeSpec,
    FieldSpec,
    MachineState,
    RegisterSpec,
    TargetSpec,
    load_derivative,
    load_target,
    run,
    snapshot_mmio,
)

from conftest import write
from oracles import brute_force_readback

BUDGET = TargetSpec("T", 1000)
CTRL = 0xF0001000


def program_from(tmp_path: Path, text: str, name: str = "t.asm"):
    program, _ = resolve(write(tmp_path / name, text), Selection("A", "GRM"), display_base=tmp_path)
    return program


def device(width=32, fields=(("PAGE", 4, 5),)):
    return DerivativeSpec("X", (RegisterSpec("CTRL", CTRL, width, tuple(FieldSpec(n, s, z) for n, s, z in fields)),))


CFG = """[derivative]
name = X

[register CTRL]
address = 0xF0001000
width = {width}

[field CTRL.PAGE]
start = {start}
size = {size}
reset = 0
"""


class TestLoadDerivative:
    def test_shipped_configs(self, demo):
        a = load_derivative(demo / "derivative_A.cfg")
        b = load_derivative(demo / "derivative_B.cfg")
        assert a.registers[0].fields[0] == FieldSpec("PAGE", 4, 5, 0)
        assert b.registers[0].fields[0].size == 6
        assert a.registers[0].mask == 0x1F0 and b.registers[0].mask == 0x3F0

    def test_field_exceeds_width(self, tmp_path):
        with pytest.raises(FieldExceedsWidth):
            load_derivative(write(tmp_path / "d.cfg", CFG.format(width=32, start=30, size=5)))

    @given(start=st.integers(0, 40), size=st.integers(1, 40), width=st.integers(1, 32))
    def test_validator_agrees_with_bound(self, start, size, width):
        """Any start with start + size <= width loads; anything else is refused."""
        ok = start + size <= width
        try:
            DerivativeSpec("X", (RegisterSpec("CTRL", CTRL, width, (FieldSpec("F", start, size),)),))
            loaded = True
        except FieldExceedsWidth:
            loaded = False
        assert loaded == ok

    def test_overlap(self):
        with pytest.raises(OverlappingFields):
            device(fields=(("A", 0, 4), ("B", 3, 2)))

    def test_duplicate_address(self):
        reg = RegisterSpec("R", 0x100, 8)
        with pytest.raises(DuplicateAddress):
            DerivativeSpec("X", (reg, RegisterSpec("S", 0x100, 8)))

    @pytest.mark.parametrize("body", ["[derivative]\n", "name = X\n", CFG.format(width="wide", start=0, size=1)])
    def test_malformed(self, tmp_path, body):
        with pytest.raises(MalformedConfig):
            load_derivative(write(tmp_path / "d.cfg", body))

    def test_target(self, demo):
        assert [load_target(demo / f"target_{n}.cfg").max_cycles for n in ("GRM", "RTL", "GATE")] == [10_000, 100_000, 1_000_000]
        with pytest.raises(MalformedConfig):
            TargetSpec("Z", 0)


class TestRunDemo:
    def page(self, demo, cell, selection, derivative):
        layout = discover(demo)
        program, _ = resolve_test(layout, demo / "page_ctrl" / cell / "src/test.asm", selection)
        return run(program, load_derivative(demo / f"derivative_{derivative}.cfg"), load_target(demo / "target_GRM.cfg"))

    def test_page_write_passes_on_a(self, demo):
        report = self.page(demo, "test_page_write", Selection("A", "GRM"), "A")
        assert report.verdict == "Pass"
        assert report.mmio == (("MODULE_CTRL", 0x30),)
        assert report.site is None

    def test_size_six_globals_on_size_five_device_fails_at_expect(self, demo):
        report = self.page(demo, "test_page_max", Selection("B", "GRM"), "A")
        assert report.verdict == "Fail"
        assert report.site == "page_ctrl/test_page_max/src/test.asm:7"
        assert (report.expected, report.actual) == (0x3F0, 0x1F0)


def test_jmp_self_times_out_at_budget(tmp_path):
    program = program_from(tmp_path, "spin:\n    jmp spin\n")
    report = run(program, device(), TargetSpec("T", 100))
    assert (report.verdict, report.cycles) == ("Timeout", 100)


def test_width_sixteen_register_masks_to_width():
    spec = device(width=16, fields=(("ALL", 0, 16),))
    state = MachineState(spec)
    assert snapshot_mmio(state) == [("CTRL", 0)]
    from advm.sim import _store

    _store(state, CTRL, 0xFFFFFFFF)
    assert snapshot_mmio(state) == [("CTRL", 0xFFFF)]


def test_reset_values_before_any_write():
    spec = DerivativeSpec("X", (RegisterSpec("CTRL", CTRL, 32, (FieldSpec("P", 4, 5, reset=3),)),))
    assert snapshot_mmio(MachineState(spec)) == [("CTRL", 0x30)]


@pytest.mark.parametrize(
    "text, verdict",
    [
        ("    fail\n", "Fail"),
        ("    mov d0, 1\n    expect d0, 2\n    pass\n", "Fail"),
        ("    ld d0, [0x10000]\n    pass\n", "Trap"),
        ("    st [0xF0002000], d0\n    pass\n", "Trap"),
        ("    mov d0, 1\n", "Trap"),
        ("    call deep\n    pass\nproc deep\n    call deep\n    ret\nendp\n", "Trap"),
        ("    mov d0, 5\n    st [0xFFFC], d0\n    ld d1, [0xFFFC]\n    expect d1, 5\n    pass\n", "Pass"),
        ("    mov d0, 3\nloop:\n    sub d0, d1\n    jnz d0, loop\n    pass\n", "Pass"),
    ],
)
def test_verdicts(tmp_path, text, verdict):
    if "sub d0, d1" in text:
        text = text.replace("    mov d0, 3\n", "    mov d0, 3\n    mov d1, 1\n")
    report = run(program_from(tmp_path, text), device(), BUDGET)
    assert report.verdict == verdict
    assert (report.site is None) == (verdict == "Pass")


def test_call_depth_trap_is_at_64(tmp_path):
    # 63 nested calls fit; the 65th frame traps
    text = "    mov d0, 63\n    call down\n    pass\nproc down\n    jz d0, out\n    sub d0, d1\n    call down\nout:\n    ret\nendp\n"
    text = text.replace("    mov d0, 63\n", "    mov d0, 63\n    mov d1, 1\n")
    assert run(program_from(tmp_path, text), device(), BUDGET).verdict == "Pass"
    assert run(program_from(tmp_path, text.replace("d0, 63", "d0, 64"), "u.asm"), device(), BUDGET).verdict == "Trap"


def test_deterministic(tmp_path):
    program = program_from(tmp_path, "    mov d0, 0xFFFF\n    st [0xF0001000], d0\n    fail\n")
    reports = {run(program, device(), BUDGET).render() for _ in range(5)}
    assert len(reports) == 1


@st.composite
def _layouts(draw):
    width = draw(st.integers(1, 32))
    fields, pos = [], 0
    while pos < width and len(fields) < 4:
        pos += draw(st.integers(0, 4))
        if pos >= width:
            break
        size = draw(st.integers(1, width - pos))
        fields.append((f"F{len(fields)}", pos, size))
        pos += size
    return width, fields


@settings(max_examples=200, deadline=None)
@given(layout=_layouts(), value=st.integers(0, 2**32 - 1))
def test_mmio_masking(tmp_path_factory, layout, value):
    width, fields = layout
    expected = brute_force_readback(value, width, [(s, z) for _, s, z in fields])
    tmp = tmp_path_factory.mktemp("mask")
    text = f"    mov d0, {value}\n    st [0xF0001000], d0\n    ld d1, [0xF0001000]\n    expect d1, {expected}\n    pass\n"
    report = run(program_from(tmp, text), device(width, fields), BUDGET)
    assert report.verdict == "Pass", report.render()
