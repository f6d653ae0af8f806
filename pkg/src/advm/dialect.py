"""Lexer, parser and expression evaluator for the MTE-ASM test dialect.

One statement per line::

    ; comment
    #define PAGE_FILE_SIZE 5
    #include "globals.inc"
    #ifdef DERIV_A / #ifndef NAME / #if expr / #else / #endif
    loop:
    proc write_page
        mov d14, TEST1_TARGET_PAGE << PAGE_FIELD_START_POSITION
        st [MODULE_CTRL_ADDR], d14
        ret
    endp

Expressions evaluate over unsigned 32-bit integers with wraparound.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import PurePosixPath, PureWindowsPath
from typing import Mapping, Union

from advm.errors import ParseFailure, UndefinedSymbol

WORD_MASK = 0xFFFFFFFF
NUM_REGISTERS = 16

DEFINE_NAME_RE = re.compile(r"[A-Z_][A-Z0-9_]*\Z")
REGISTER_RE = re.compile(r"d(\d+)\Z")

# operand kinds
REG = "reg"
IMM = "imm"
MEM = "mem"
LABEL = "label"

# opcode -> allowed operand kinds per position
SIGNATURES: dict[str, tuple[tuple[str, ...], ...]] = {
    "mov": ((REG,), (IMM, REG)),
    "shl": ((REG,), (IMM,)),
    "shr": ((REG,), (IMM,)),
    "or": ((REG,), (REG,)),
    "and": ((REG,), (REG,)),
    "add": ((REG,), (REG,)),
    "sub": ((REG,), (REG,)),
    "ld": ((REG,), (MEM,)),
    "st": ((MEM,), (REG,)),
    "call": ((LABEL,),),
    "ret": (),
    "jmp": ((LABEL,),),
    "jz": ((REG,), (LABEL,)),
    "jnz": ((REG,), (LABEL,)),
    "expect": ((REG,), (IMM,)),
    "pass": (),
    "fail": (),
}

DIRECTIVES = ("define", "include", "ifdef", "ifndef", "if", "else", "endif")
RESERVED = frozenset(SIGNATURES) | {"proc", "endp"}

ARITH_OPS = ("+", "-", "*", "<<", ">>", "|", "&")
COMPARE_OPS = ("==", "!=", "<", ">")

# binary precedence, loosest first
_PRECEDENCE: tuple[tuple[str, ...], ...] = (
    ("|",),
    ("&",),
    ("==", "!="),
    ("<", ">"),
    ("<<", ">>"),
    ("+", "-"),
    ("*",),
)


# -- expression tree ---------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: int
    text: str = field(default="", compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Ref:
    name: str
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Ref, Neg, BinOp]


def iter_nodes(expr: Expr):
    """Yield every node of ``expr`` in left-to-right order."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Neg):
            stack.append(node.operand)
        elif isinstance(node, BinOp):
            stack.append(node.right)
            stack.append(node.left)


def expr_refs(expr: Expr) -> set[str]:
    return {n.name for n in iter_nodes(expr) if isinstance(n, Ref)}


def eval_expr(expr: Expr, defs: Mapping[str, int], origin: str | None = None) -> int:
    """Evaluate ``expr`` to an unsigned 32-bit value.

    Shift counts of 32 or more give 0. Comparisons give 0 or 1.
    Raises :class:`UndefinedSymbol` for a name missing from ``defs``.
    """
    if isinstance(expr, Num):
        return expr.value & WORD_MASK
    if isinstance(expr, Ref):
        try:
            return defs[expr.name] & WORD_MASK
        except KeyError:
            raise UndefinedSymbol(expr.name, origin) from None
    if isinstance(expr, Neg):
        return -eval_expr(expr.operand, defs, origin) & WORD_MASK
    a = eval_expr(expr.left, defs, origin)
    b = eval_expr(expr.right, defs, origin)
    op = expr.op
    if op == "+":
        return (a + b) & WORD_MASK
    if op == "-":
        return (a - b) & WORD_MASK
    if op == "*":
        return (a * b) & WORD_MASK
    if op == "<<":
        return 0 if b >= 32 else (a << b) & WORD_MASK
    if op == ">>":
        return 0 if b >= 32 else a >> b
    if op == "|":
        return a | b
    if op == "&":
        return a & b
    if op == "==":
        return int(a == b)
    if op == "!=":
        return int(a != b)
    if op == "<":
        return int(a < b)
    if op == ">":
        return int(a > b)
    raise ValueError(f"unknown operator {op!r}")


def format_expr(expr: Expr) -> str:
    """Render ``expr`` so that re-parsing yields the same tree."""
    if isinstance(expr, Num):
        return expr.text or str(expr.value)
    if isinstance(expr, Ref):
        return expr.name
    if isinstance(expr, Neg):
        inner = format_expr(expr.operand)
        if isinstance(expr.operand, BinOp):
            inner = f"({inner})"
        return f"-{inner}"
    parts = []
    for side in (expr.left, expr.right):
        text = format_expr(side)
        parts.append(f"({text})" if isinstance(side, BinOp) else text)
    return f"{parts[0]} {expr.op} {parts[1]}"


# -- statements --------------------------------------------------------------


@dataclass(frozen=True)
class Blank:
    pass


@dataclass(frozen=True)
class Directive:
    kind: str
    name: str | None = None
    expr: Expr | None = None
    path: str | None = None
    col: int = field(default=0, compare=False)
    arg_col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Label:
    name: str


@dataclass(frozen=True)
class ProcStart:
    name: str


@dataclass(frozen=True)
class ProcEnd:
    pass


@dataclass(frozen=True)
class Operand:
    kind: str
    reg: int | None = None
    expr: Expr | None = None
    label: str | None = None
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Instruction:
    opcode: str
    operands: tuple[Operand, ...] = ()


Statement = Union[Blank, Directive, Label, ProcStart, ProcEnd, Instruction]
STATEMENT_TYPES = (Blank, Directive, Label, ProcStart, ProcEnd, Instruction)


@dataclass(frozen=True)
class Line:
    number: int
    text: str = field(compare=False)
    stmt: Statement


@dataclass(frozen=True)
class SourceUnit:
    path: str
    lines: tuple[Line, ...]

    def statements(self):
        return [ln.stmt for ln in self.lines]


@dataclass(frozen=True)
class ParseError:
    kind: str
    path: str
    line: int
    col: int
    message: str

    def render(self) -> str:
        return f"{self.path}:{self.line}:{self.col}: {self.kind}: {self.message}"


# -- lexer -------------------------------------------------------------------


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
    |(?P<directive>\#[A-Za-z]+)
    |(?P<num>0x[0-9A-Fa-f]+|[0-9]+)
    |(?P<name>[A-Za-z_][A-Za-z0-9_]*)
    |(?P<string>"[^"]*")
    |(?P<op><<|>>|==|!=|[-+*|&()<>\[\],:])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    col: int


class _LineError(Exception):
    def __init__(self, kind: str, col: int, message: str):
        self.kind = kind
        self.col = col
        self.message = message


def _strip_comment(text: str) -> str:
    in_string = False
    for i, ch in enumerate(text):
        if ch == '"':
            in_string = not in_string
        elif ch == ";" and not in_string:
            return text[:i]
    return text


def _tokenize(code: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(code):
        m = _TOKEN_RE.match(code, pos)
        if m is None or m.end() == pos:
            raise _LineError("MalformedLine", pos + 1, f"unexpected character {code[pos]!r}")
        kind = m.lastgroup
        if kind != "ws":
            # a number running straight into letters (12abc, 0x1G) is one bad token
            if kind == "num" and m.end() < len(code) and (code[m.end()].isalnum() or code[m.end()] == "_"):
                raise _LineError("MalformedOperand", pos + 1, f"malformed number near {code[pos:]!r}")
            toks.append(_Tok(kind, m.group(), pos + 1))
        pos = m.end()
    return toks


# -- parser ------------------------------------------------------------------


class _Cursor:
    def __init__(self, toks: list[_Tok], end_col: int):
        self.toks = toks
        self.i = 0
        self.end_col = end_col

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def col(self) -> int:
        tok = self.peek()
        return tok.col if tok else self.end_col

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.kind == "op" and tok.text == text:
            self.i += 1
            return True
        return False

    def done(self) -> bool:
        return self.i >= len(self.toks)


def _parse_expr(cur: _Cursor, allow_compare: bool, level: int = 0) -> Expr:
    if level == len(_PRECEDENCE):
        return _parse_unary(cur, allow_compare)
    left = _parse_expr(cur, allow_compare, level + 1)
    ops = _PRECEDENCE[level]
    while True:
        tok = cur.peek()
        if tok is None or tok.kind != "op" or tok.text not in ops:
            return left
        if tok.text in COMPARE_OPS and not allow_compare:
            raise _LineError("MalformedOperand", tok.col, "comparisons are only allowed in #if")
        cur.take()
        right = _parse_expr(cur, allow_compare, level + 1)
        left = BinOp(tok.text, left, right)


def _parse_unary(cur: _Cursor, allow_compare: bool) -> Expr:
    tok = cur.peek()
    if tok is None:
        raise _LineError("MalformedOperand", cur.col(), "expected an expression")
    if tok.kind == "op" and tok.text == "-":
        cur.take()
        return Neg(_parse_unary(cur, allow_compare), col=tok.col)
    if tok.kind == "op" and tok.text == "(":
        cur.take()
        inner = _parse_expr(cur, allow_compare)
        if not cur.accept(")"):
            raise _LineError("MalformedOperand", cur.col(), "expected ')'")
        return inner
    if tok.kind == "num":
        cur.take()
        return Num(int(tok.text, 0), text=tok.text, col=tok.col)
    if tok.kind == "name":
        if not DEFINE_NAME_RE.match(tok.text):
            raise _LineError(
                "MalformedOperand", tok.col, f"{tok.text!r} is not a define name (defines are upper-case)"
            )
        cur.take()
        return Ref(tok.text, col=tok.col)
    raise _LineError("MalformedOperand", tok.col, f"unexpected {tok.text!r} in expression")


def parse_expr(text: str, allow_compare: bool = False) -> Expr:
    """Parse a standalone expression (used by tests and tooling)."""
    try:
        cur = _Cursor(_tokenize(text), len(text) + 1)
        expr = _parse_expr(cur, allow_compare)
        if not cur.done():
            raise _LineError("MalformedOperand", cur.col(), f"trailing {cur.peek().text!r}")
    except _LineError as err:
        raise ParseFailure([ParseError(err.kind, "<expr>", 1, err.col, err.message)]) from None
    return expr


def _parse_register(cur: _Cursor) -> int:
    tok = cur.peek()
    if tok is None:
        raise _LineError("BadRegisterName", cur.col(), "expected a register d0..d15")
    m = REGISTER_RE.match(tok.text) if tok.kind == "name" else None
    if m is None or int(m.group(1)) >= NUM_REGISTERS:
        raise _LineError("BadRegisterName", tok.col, f"{tok.text!r} is not a register (d0..d15)")
    cur.take()
    return int(m.group(1))


def _is_register_token(tok: _Tok | None) -> bool:
    return tok is not None and tok.kind == "name" and REGISTER_RE.match(tok.text) is not None


def _parse_operand(cur: _Cursor, kinds: tuple[str, ...]) -> Operand:
    tok = cur.peek()
    col = cur.col()
    if tok is None:
        raise _LineError("MalformedOperand", col, "missing operand")
    if MEM in kinds:
        if not cur.accept("["):
            raise _LineError("MalformedOperand", col, "expected '[address]'")
        expr = _parse_expr(cur, False)
        if not cur.accept("]"):
            raise _LineError("MalformedOperand", cur.col(), "expected ']'")
        return Operand(MEM, expr=expr, col=col)
    if REG in kinds and (IMM not in kinds or _is_register_token(tok)):
        return Operand(REG, reg=_parse_register(cur), col=col)
    if LABEL in kinds:
        if tok.kind != "name":
            raise _LineError("MalformedOperand", col, "expected a name")
        cur.take()
        return Operand(LABEL, label=tok.text, col=col)
    if _is_register_token(tok):
        raise _LineError("MalformedOperand", col, f"register {tok.text} not allowed here")
    return Operand(IMM, expr=_parse_expr(cur, False), col=col)


def _parse_instruction(cur: _Cursor) -> Instruction:
    head = cur.take()
    if head.kind != "name" or head.text not in SIGNATURES:
        raise _LineError("UnknownOpcode", head.col, f"unknown opcode {head.text!r}")
    operands = []
    for idx, kinds in enumerate(SIGNATURES[head.text]):
        if idx and not cur.accept(","):
            raise _LineError("MalformedOperand", cur.col(), "expected ','")
        operands.append(_parse_operand(cur, kinds))
    if not cur.done():
        raise _LineError("MalformedOperand", cur.col(), f"unexpected {cur.peek().text!r}")
    return Instruction(head.text, tuple(operands))


def _is_absolute(path: str) -> bool:
    return PurePosixPath(path).is_absolute() or PureWindowsPath(path).is_absolute() or path.startswith(("/", "\\"))


def _parse_directive(cur: _Cursor) -> Directive:
    head = cur.take()
    kind = head.text[1:]
    if kind not in DIRECTIVES:
        raise _LineError("MalformedDirective", head.col, f"unknown directive {head.text!r}")
    arg_col = cur.col()

    def want_name() -> str:
        tok = cur.peek()
        if tok is None or tok.kind != "name" or not DEFINE_NAME_RE.match(tok.text):
            raise _LineError("MalformedDirective", cur.col(), f"{head.text} needs an upper-case NAME")
        cur.take()
        return tok.text

    def want_expr(allow_compare: bool) -> Expr:
        try:
            return _parse_expr(cur, allow_compare)
        except _LineError as err:
            raise _LineError("MalformedDirective", err.col, err.message) from None

    if kind == "define":
        name = want_name()
        directive = Directive(kind, name=name, expr=want_expr(False), col=head.col, arg_col=arg_col)
    elif kind == "include":
        tok = cur.peek()
        if tok is None or tok.kind != "string" or len(tok.text) < 3:
            raise _LineError("MalformedDirective", cur.col(), '#include needs a "relative/path"')
        cur.take()
        path = tok.text[1:-1]
        if _is_absolute(path):
            raise _LineError("AbsoluteIncludePath", tok.col, f"include path {path!r} must be relative")
        directive = Directive(kind, path=path, col=head.col, arg_col=arg_col)
    elif kind in ("ifdef", "ifndef"):
        directive = Directive(kind, name=want_name(), col=head.col, arg_col=arg_col)
    elif kind == "if":
        directive = Directive(kind, expr=want_expr(True), col=head.col, arg_col=arg_col)
    else:
        directive = Directive(kind, col=head.col)
    if not cur.done():
        raise _LineError("MalformedDirective", cur.col(), f"unexpected {cur.peek().text!r}")
    return directive


def _parse_statement(text: str) -> Statement:
    code = _strip_comment(text)
    toks = _tokenize(code)
    if not toks:
        return Blank()
    cur = _Cursor(toks, len(code.rstrip()) + 1)
    first = toks[0]
    if first.kind == "directive":
        return _parse_directive(cur)
    if first.kind != "name":
        raise _LineError("MalformedLine", first.col, f"unexpected {first.text!r}")
    if len(toks) == 2 and toks[1].text == ":" and toks[1].kind == "op":
        if first.text in RESERVED:
            raise _LineError("MalformedLine", first.col, f"{first.text!r} is reserved")
        return Label(first.text)
    if first.text == "proc":
        if len(toks) != 2 or toks[1].kind != "name" or toks[1].text in RESERVED:
            raise _LineError("MalformedLine", cur.end_col if len(toks) < 2 else toks[1].col, "expected 'proc NAME'")
        return ProcStart(toks[1].text)
    if first.text == "endp":
        if len(toks) != 1:
            raise _LineError("MalformedLine", toks[1].col, "unexpected text after endp")
        return ProcEnd()
    return _parse_instruction(cur)


def parse_unit(path: str, text: str) -> SourceUnit:
    """Parse a whole source file.

    Raises :class:`ParseFailure` listing every malformed line; nothing is
    accepted partially.
    """
    errors: list[ParseError] = []
    lines: list[Line] = []
    open_proc: tuple[int, str] | None = None
    for number, raw in enumerate(text.splitlines(), start=1):
        try:
            stmt = _parse_statement(raw)
        except _LineError as err:
            errors.append(ParseError(err.kind, str(path), number, err.col, err.message))
            continue
        if isinstance(stmt, ProcStart):
            if open_proc is not None:
                errors.append(
                    ParseError("UnbalancedProc", str(path), number, 1, f"proc {stmt.name} nested in proc {open_proc[1]}")
                )
            open_proc = (number, stmt.name)
        elif isinstance(stmt, ProcEnd):
            if open_proc is None:
                errors.append(ParseError("UnbalancedProc", str(path), number, 1, "endp without proc"))
            open_proc = None
        lines.append(Line(number, raw, stmt))
    if open_proc is not None:
        errors.append(ParseError("UnbalancedProc", str(path), open_proc[0], 1, f"proc {open_proc[1]} has no endp"))
    if errors:
        errors.sort(key=lambda e: (e.line, e.col))
        raise ParseFailure(errors)
    return SourceUnit(str(path), tuple(lines))


# -- pretty printer ----------------------------------------------------------


def format_operand(op: Operand) -> str:
    if op.kind == REG:
        return f"d{op.reg}"
    if op.kind == MEM:
        return f"[{format_expr(op.expr)}]"
    if op.kind == LABEL:
        return op.label
    return format_expr(op.expr)


def format_statement(stmt: Statement) -> str:
    if isinstance(stmt, Blank):
        return ""
    if isinstance(stmt, Label):
        return f"{stmt.name}:"
    if isinstance(stmt, ProcStart):
        return f"proc {stmt.name}"
    if isinstance(stmt, ProcEnd):
        return "endp"
    if isinstance(stmt, Directive):
        if stmt.kind == "define":
            return f"#define {stmt.name} {format_expr(stmt.expr)}"
        if stmt.kind == "include":
            return f'#include "{stmt.path}"'
        if stmt.kind in ("ifdef", "ifndef"):
            return f"#{stmt.kind} {stmt.name}"
        if stmt.kind == "if":
            return f"#if {format_expr(stmt.expr)}"
        return f"#{stmt.kind}"
    if not stmt.operands:
        return f"    {stmt.opcode}"
    return f"    {stmt.opcode} " + ", ".join(format_operand(op) for op in stmt.operands)


def format_unit(unit: SourceUnit) -> str:
    out = []
    for ln in unit.lines:
        while len(out) < ln.number - 1:
            out.append("")
        out.append(format_statement(ln.stmt))
    return "\n".join(out) + ("\n" if out else "")


# -- symbol summary ----------------------------------------------------------


@dataclass(frozen=True)
class Symbols:
    defined: frozenset[str]
    referenced: frozenset[str]
    called: frozenset[str]
    included: frozenset[str]


def list_symbols(unit: SourceUnit) -> Symbols:
    """Collect names across every line, taken branch or not."""
    defined: set[str] = set()
    referenced: set[str] = set()
    called: set[str] = set()
    included: set[str] = set()
    for ln in unit.lines:
        stmt = ln.stmt
        if isinstance(stmt, Directive):
            if stmt.kind == "define":
                defined.add(stmt.name)
            elif stmt.kind in ("ifdef", "ifndef"):
                referenced.add(stmt.name)
            elif stmt.kind == "include":
                included.add(stmt.path)
            if stmt.expr is not None:
                referenced |= expr_refs(stmt.expr)
        elif isinstance(stmt, Instruction):
            if stmt.opcode == "call":
                called.add(stmt.operands[0].label)
            for op in stmt.operands:
                if op.expr is not None:
                    referenced |= expr_refs(op.expr)
        elif not isinstance(stmt, (Blank, Label, ProcStart, ProcEnd)):
            raise TypeError(f"unclassifiable statement {stmt!r}")
    return Symbols(frozenset(defined), frozenset(referenced), frozenset(called), frozenset(included))
