from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advm.dialect import (
    BinOp,
    Directive,
    Instruction,
    Num,
    Operand,
    Ref,
    eval_expr,
    format_unit,
    list_symbols,
    parse_expr,
    parse_unit,
)
from advm.errors import ParseFailure, UndefinedSymbol

from oracles import M, bigint_eval, random_define_table, random_expr, render_expr


def one(text: str):
    unit = parse_unit("t.asm", text + "\n")
    return unit.lines[0].stmt


def parse_errors(text: str):
    with pytest.raises(ParseFailure) as info:
        parse_unit("t.asm", text)
    return info.value.errors


class TestParseUnit:
    def test_mov_register_immediate(self):
        stmt = one("mov d14, 5")
        assert isinstance(stmt, Instruction)
        assert stmt.opcode == "mov"
        assert stmt.operands[0].kind == "reg" and stmt.operands[0].reg == 14
        assert stmt.operands[1].kind == "imm" and stmt.operands[1].expr == Num(5)

    def test_define_literal(self):
        stmt = one("#define PAGE_FIELD_SIZE 5")
        assert isinstance(stmt, Directive)
        assert (stmt.kind, stmt.name, stmt.expr) == ("define", "PAGE_FIELD_SIZE", Num(5))

    def test_bad_register_reports_operand_column(self):
        (err,) = parse_errors("mov d16, 0\n")
        assert err.kind == "BadRegisterName"
        assert (err.line, err.col) == (1, 5)
        assert err.render().startswith("t.asm:1:5:")

    @pytest.mark.parametrize(
        "text, kind",
        [
            ("frob d0, d1", "UnknownOpcode"),
            ("#define lower 1", "MalformedDirective"),
            ("#pragma once", "MalformedDirective"),
            ('#include "/etc/passwd"', "AbsoluteIncludePath"),
            ("proc a\nproc b\nendp\nendp", "UnbalancedProc"),
            ("endp", "UnbalancedProc"),
            ("proc a\n ret", "UnbalancedProc"),
            ("ld d0, 5", "MalformedOperand"),
            ("add d0, 5", "BadRegisterName"),
            ("mov d0, 1 == 1", "MalformedOperand"),
        ],
    )
    def test_error_kinds(self, text, kind):
        assert kind in {e.kind for e in parse_errors(text + "\n")}

    def test_every_bad_line_is_reported(self):
        errors = parse_errors("mov d0, 1\nfrob\nmov d99, 1\npass\n")
        assert [e.line for e in errors] == [2, 3]

    def test_comparison_only_in_if(self):
        stmt = one("#if PAGE_FILE_SIZE > 5")
        assert stmt.expr == BinOp(">", Ref("PAGE_FILE_SIZE"), Num(5))

    def test_lines_are_one_based_and_increasing(self):
        unit = parse_unit("t.asm", "\n; c\nstart:\n  jmp start\n")
        assert [ln.number for ln in unit.lines] == [1, 2, 3, 4]

    def test_memory_operands(self):
        st_ = one("st [MODULE_CTRL_ADDR + 4], d3")
        assert st_.operands[0] == Operand("mem", expr=BinOp("+", Ref("MODULE_CTRL_ADDR"), Num(4)))
        assert st_.operands[1].reg == 3


class TestEvalExpr:
    def test_mask_of_five_bits(self):
        assert eval_expr(parse_expr("(1 << 5) - 1"), {}) == 31

    def test_page_placement(self):
        defs = {"TEST1_TARGET_PAGE": 3, "PAGE_FIELD_START_POSITION": 4}
        assert eval_expr(parse_expr("TEST1_TARGET_PAGE << PAGE_FIELD_START_POSITION"), defs) == 0x30

    def test_wraparound(self):
        assert eval_expr(parse_expr("0xFFFFFFFF + 1"), {}) == 0

    @pytest.mark.parametrize("count", [32, 33, 100, 0xFFFFFFFF])
    def test_large_shifts_are_zero(self, count):
        assert eval_expr(parse_expr(f"7 << {count}"), {}) == 0
        assert eval_expr(parse_expr(f"0xFFFFFFFF >> {count}"), {}) == 0

    def test_precedence(self):
        assert eval_expr(parse_expr("1 + 2 * 3"), {}) == 7
        assert eval_expr(parse_expr("1 << 2 + 1"), {}) == 8
        assert eval_expr(parse_expr("6 & 3 | 8"), {}) == 10
        assert eval_expr(parse_expr("-1"), {}) == 0xFFFFFFFF
        assert eval_expr(parse_expr("2 < 3 == 1", allow_compare=True), {}) == 1

    def test_undefined_symbol(self):
        with pytest.raises(UndefinedSymbol) as info:
            eval_expr(parse_expr("NOPE + 1"), {}, origin="g.inc:3")
        assert info.value.name == "NOPE"
        assert "g.inc:3" in str(info.value)

    def test_matches_bigint_oracle(self):
        """10^4 random trees over random define tables."""
        rng = random.Random(20261015)
        for _ in range(10_000):
            tree = random_expr(rng, rng.randrange(1, 6), allow_compare=rng.random() < 0.3)
            env = random_define_table(rng)
            text = render_expr(tree, rng)
            assert eval_expr(parse_expr(text, allow_compare=True), env) == bigint_eval(tree, env) % M, text


class TestListSymbols:
    def test_single_call(self):
        syms = list_symbols(parse_unit("t.asm", "call global_crc_calc\n"))
        assert syms.called == {"global_crc_calc"}

    def test_page_test_references(self, demo):
        path = demo / "page_ctrl/test_page_write/src/test.asm"
        syms = list_symbols(parse_unit(str(path), path.read_text()))
        assert {"PAGE_FIELD_START_POSITION", "TEST1_TARGET_PAGE"} <= syms.referenced
        assert syms.included == {"globals.inc", "base_functions.asm"}

    def test_empty(self):
        syms = list_symbols(parse_unit("t.asm", ""))
        assert not (syms.defined or syms.referenced or syms.called or syms.included)

    def test_both_branches_counted(self):
        text = "#ifdef DERIV_A\n#define X 1\n#else\n#define Y Z\n#endif\n"
        syms = list_symbols(parse_unit("t.asm", text))
        assert syms.defined == {"X", "Y"}
        assert {"DERIV_A", "Z"} <= syms.referenced


# -- round trip --------------------------------------------------------------

_names = st.sampled_from(["PAGE_FILE_SIZE", "A", "X_1", "TEST2_TARGET_PAGE"])
_labels = st.sampled_from(["loop", "done", "write_page", "crc_wrapped"])
_regs = st.integers(0, 15).map(lambda i: f"d{i}")


@st.composite
def _exprs(draw, depth=3, allow_compare=False):
    if depth == 0 or draw(st.booleans()):
        return draw(st.one_of(st.integers(0, 2**32 - 1).map(str), st.integers(0, 2**32 - 1).map(hex), _names))
    ops = ["+", "-", "*", "<<", ">>", "|", "&"] + (["==", "!=", "<", ">"] if allow_compare else [])
    if draw(st.integers(0, 9)) == 0:
        return f"-({draw(_exprs(depth - 1, allow_compare))})"
    left = draw(_exprs(depth - 1, allow_compare))
    right = draw(_exprs(depth - 1, allow_compare))
    return f"({left}) {draw(st.sampled_from(ops))} ({right})"


@st.composite
def _lines(draw):
    kind = draw(st.integers(0, 12))
    r = lambda: draw(_regs)  # noqa: E731
    return [
        lambda: "",
        lambda: f"; {draw(st.text(alphabet='abc xyz;', max_size=10))}",
        lambda: f"#define {draw(_names)} {draw(_exprs())}",
        lambda: f'#include "{draw(st.sampled_from(["globals.inc", "../x/y.asm"]))}"',
        lambda: f"#if {draw(_exprs(allow_compare=True))}",
        lambda: f"#ifdef {draw(_names)}",
        lambda: "#else",
        lambda: f"{draw(_labels)}:",
        lambda: f"mov {r()}, {draw(st.one_of(_regs, _exprs()))}",
        lambda: f"{draw(st.sampled_from(['or', 'and', 'add', 'sub']))} {r()}, {r()}",
        lambda: f"ld {r()}, [{draw(_exprs())}]",
        lambda: f"st [{draw(_exprs())}], {r()}",
        lambda: f"{draw(st.sampled_from(['jz', 'jnz']))} {r()}, {draw(_labels)}",
    ][kind]()


@st.composite
def _units(draw):
    body = draw(st.lists(_lines(), max_size=12))
    if draw(st.booleans()):
        body = ["proc p", *body, "    ret", "endp"]
    return "\n".join(body) + "\n"


@settings(max_examples=300, deadline=None)
@given(_units())
def test_round_trip(text):
    unit = parse_unit("r.asm", text)
    again = parse_unit("r.asm", format_unit(unit))
    assert [ln.stmt for ln in again.lines] == [ln.stmt for ln in unit.lines]
    assert [ln.number for ln in again.lines] == [ln.number for ln in unit.lines]


@settings(max_examples=200, deadline=None)
@given(_units())
def test_every_accepted_line_is_classified(text):
    unit = parse_unit("r.asm", text)
    list_symbols(unit)
    from advm.dialect import STATEMENT_TYPES

    assert all(isinstance(ln.stmt, STATEMENT_TYPES) for ln in unit.lines)
