"""Layer-discipline linter.

The rule catalog is closed: ADVM001..ADVM007. Findings are data; the
caller decides what an Error means for its exit code.
"""

from __future__ import annotations

import hashlib
import json
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from advm.dialect import (
    IMM,
    MEM,
    Directive,
    Instruction,
    Num,
    ParseError,
    ProcStart,
    Ref,
    SourceUnit,
    iter_nodes,
    parse_unit,
)
from advm.env_model import Layer, SystemLayout, check_env_name, discover
from advm.errors import MalformedBaseline, ParseFailure, UnknownRule
from advm.preprocessor import find_include

ERROR = "Error"
WARNING = "Warning"

LITERAL_ALLOWLIST = frozenset({0, 1})
GUARD_PREFIXES = ("DERIV_", "TARGET_")


@dataclass(frozen=True)
class Rule:
    id: str
    severity: str
    summary: str
    rationale: str


RULES: dict[str, Rule] = {
    r.id: r
    for r in (
        Rule(
            "ADVM001",
            ERROR,
            "test includes a global-layer file directly",
            "Tests must reach global-layer code only through the abstraction layer. Including a "
            "global file straight into a test bypasses the Base Functions, so any change to that "
            "global code forces every affected test to be found and re-factored.",
        ),
        Rule(
            "ADVM002",
            ERROR,
            "test calls a global-layer procedure that is not wrapped by Base Functions",
            "Global procedures (embedded software, shared libraries) change outside the "
            "environment owner's control. Wrapping each one in a Base Functions procedure means a "
            "change such as swapped input registers is absorbed by editing one wrapper instead of "
            "every test that calls it.",
        ),
        Rule(
            "ADVM003",
            ERROR,
            "hardwired numeric literal in an instruction",
            "Numbers baked into instructions are invisible to whoever ports the environment. "
            "Put them in globals.inc under a name, so moving a field or resizing it touches one "
            "line. Inline 0 and 1 are tolerated; shift counts and expected values may mix in "
            "literals once the expression already uses a define.",
        ),
        Rule(
            "ADVM004",
            ERROR,
            "derivative/target conditional outside the abstraction layer",
            "Selecting behaviour per derivative or per target is the job of globals.inc and the "
            "Base Functions. A DERIV_* or TARGET_* guard inside a test ties that test to particular "
            "chips or platforms, and a port would then need test edits as well as a globals.inc edit.",
        ),
        Rule(
            "ADVM005",
            ERROR,
            "environment structure does not conform to the module directory layout",
            "Every environment needs a plain-text test plan (greppable), an Abstraction_Layer "
            "directory holding globals.inc and the Base Functions, and test cells with identical "
            "directory shapes so the whole environment stays consistent.",
        ),
        Rule(
            "ADVM006",
            WARNING,
            "environment name contains a derivative name",
            "Name an environment after the module or class of tests it covers. A chip variant in "
            "the name suggests the tests only apply to that variant, which discourages reuse when "
            "the next derivative arrives.",
        ),
        Rule(
            "ADVM007",
            ERROR,
            "test file defines a name",
            "All #define directives live in the abstraction layer so that it remains the single "
            "point of control; a define inside a test is a hidden control that globals.inc cannot see.",
        ),
    )
}


def explain(rule_id: str) -> str:
    try:
        rule = RULES[rule_id]
    except KeyError:
        raise UnknownRule(f"UnknownRule: {rule_id}") from None
    return f"{rule.id} ({rule.severity}): {rule.summary}\n\n{rule.rationale}\n"


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    path: str
    line: int
    col: int
    severity: str
    message: str
    evidence: str

    def sort_key(self):
        return (self.path, self.line, self.col, self.rule)

    def format(self) -> str:
        return f"{self.path}:{self.line}:{self.col}: {self.rule}: {self.message} [{self.evidence}]"

    def to_record(self) -> str:
        record = {
            "path": self.path,
            "line": self.line,
            "col": self.col,
            "rule": self.rule,
            "severity": self.severity,
            "message": self.message,
            "evidence": self.evidence,
        }
        return json.dumps(record, ensure_ascii=True)

    def fingerprint(self) -> str:
        digest = hashlib.sha256(self.evidence.encode("utf-8")).hexdigest()[:16]
        return f"{self.rule}\t{self.path}\t{digest}"


def _diag(rule_id: str, path: str, line: int, col: int, message: str, evidence: str) -> Diagnostic:
    return Diagnostic(rule_id, path, line, col, RULES[rule_id].severity, message, evidence)


def _procedures(unit: SourceUnit) -> list[str]:
    return [ln.stmt.name for ln in unit.lines if isinstance(ln.stmt, ProcStart)]


def _literal_findings(ins: Instruction) -> Iterable[Num]:
    for idx, op in enumerate(ins.operands):
        if op.kind not in (IMM, MEM):
            continue
        nodes = list(iter_nodes(op.expr))
        has_ref = any(isinstance(n, Ref) for n in nodes)
        if has_ref and idx == 1 and ins.opcode in ("shl", "shr", "expect"):
            continue
        for node in nodes:
            if isinstance(node, Num) and node.value not in LITERAL_ALLOWLIST:
                yield node


def _guard_name(stmt: Directive) -> tuple[str, int] | None:
    if stmt.kind in ("ifdef", "ifndef") and stmt.name.startswith(GUARD_PREFIXES):
        return stmt.name, stmt.arg_col
    if stmt.kind == "if":
        for node in iter_nodes(stmt.expr):
            if isinstance(node, Ref) and node.name.startswith(GUARD_PREFIXES):
                return node.name, node.col
    return None


def lint(layout: SystemLayout, units: Mapping[Path, SourceUnit]) -> list[Diagnostic]:
    """Run every rule over ``units`` (path -> parsed unit) and the layout.

    Files missing from ``units`` (parse failures) are skipped by the
    per-file rules; structural and naming rules still run.
    """
    found: list[Diagnostic] = []
    units = {Path(p).resolve(): u for p, u in units.items()}

    global_procs: dict[str, Path] = {}
    for path, unit in units.items():
        if layout.layers.get(path) is Layer.GLOBAL:
            for name in _procedures(unit):
                global_procs.setdefault(name, path)

    wrapped: dict[str, set[str]] = {}
    for env in layout.envs:
        names: set[str] = set()
        for path in env.abstraction_sources:
            if path in units:
                names.update(_procedures(units[path]))
        wrapped[env.name] = names

    for path in sorted(units, key=lambda p: p.as_posix()):
        unit = units[path]
        layer = layout.layers.get(path)
        if layer is None:
            continue
        env = layout.env_of(path)
        rel = layout.rel(path)
        roots = layout.search_roots(env)
        for ln in unit.lines:
            stmt = ln.stmt
            if isinstance(stmt, Directive):
                if layer is Layer.TEST and stmt.kind == "include":
                    target = find_include(stmt.path, path.parent, roots)
                    if target is not None and layout.layers.get(target) is Layer.GLOBAL:
                        found.append(
                            _diag(
                                "ADVM001",
                                rel,
                                ln.number,
                                stmt.arg_col,
                                f"test includes global-layer file {layout.rel(target)} directly",
                                stmt.path,
                            )
                        )
                if layer is Layer.TEST and stmt.kind == "define":
                    found.append(
                        _diag(
                            "ADVM007",
                            rel,
                            ln.number,
                            stmt.arg_col,
                            f"{stmt.name} is defined in a test; move it to {env.name if env else 'the'}"
                            "/Abstraction_Layer/globals.inc",
                            stmt.name,
                        )
                    )
                if layer is not Layer.ABSTRACTION:
                    guard = _guard_name(stmt)
                    if guard is not None:
                        found.append(
                            _diag(
                                "ADVM004",
                                rel,
                                ln.number,
                                guard[1],
                                f"conditional on {guard[0]} outside the abstraction layer",
                                guard[0],
                            )
                        )
            elif isinstance(stmt, Instruction):
                if layer is Layer.TEST and stmt.opcode == "call":
                    name = stmt.operands[0].label
                    env_wrapped = wrapped.get(env.name, set()) if env else set()
                    if name in global_procs and name not in env_wrapped:
                        found.append(
                            _diag(
                                "ADVM002",
                                rel,
                                ln.number,
                                stmt.operands[0].col,
                                f"test calls global procedure {name} ({layout.rel(global_procs[name])}) "
                                "without a Base Functions wrapper",
                                name,
                            )
                        )
                if layer in (Layer.TEST, Layer.ABSTRACTION):
                    for num in _literal_findings(stmt):
                        found.append(
                            _diag(
                                "ADVM003",
                                rel,
                                ln.number,
                                num.col,
                                f"hardwired value {num.text} in {stmt.opcode}; reference a define from globals.inc",
                                num.text,
                            )
                        )

    for problem in layout.problems:
        found.append(_diag("ADVM005", layout.rel(problem.path), 1, 1, problem.detail, problem.evidence))

    for env in layout.envs:
        violation = check_env_name(env.name, layout.config.derivatives)
        if violation is not None:
            found.append(_diag("ADVM006", layout.rel(env.root), 1, 1, violation.message(), violation.derivative))

    return sorted(found, key=Diagnostic.sort_key)


def parse_sources(layout: SystemLayout) -> tuple[dict[Path, SourceUnit], list[ParseError]]:
    units: dict[Path, SourceUnit] = {}
    errors: list[ParseError] = []
    for path in layout.source_files():
        try:
            text = path.read_text(encoding="utf-8")
            units[path] = parse_unit(layout.rel(path), text)
        except ParseFailure as exc:
            errors.extend(exc.errors)
        except UnicodeDecodeError as exc:
            errors.append(ParseError("MalformedLine", layout.rel(path), 1, 1, f"not valid UTF-8: {exc.reason}"))
    return units, errors


@dataclass(frozen=True)
class LintReport:
    layout: SystemLayout
    diagnostics: tuple[Diagnostic, ...]
    parse_errors: tuple[ParseError, ...]

    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == ERROR]

    def for_env(self, env_name: str) -> "LintReport":
        """Only the findings located inside one environment."""
        prefix = self.layout.rel(self.layout.env(env_name).root) + "/"
        inside = lambda p: p == prefix[:-1] or p.startswith(prefix)  # noqa: E731
        return LintReport(
            self.layout,
            tuple(d for d in self.diagnostics if inside(d.path)),
            tuple(e for e in self.parse_errors if inside(e.path)),
        )


def lint_tree(root: str | os.PathLike) -> LintReport:
    """Discover, parse and lint a whole system tree."""
    layout = discover(root, strict=False)
    units, parse_errors = parse_sources(layout)
    return LintReport(layout, tuple(lint(layout, units)), tuple(parse_errors))


# -- baselines ---------------------------------------------------------------


def read_baseline(text: str) -> Counter:
    entries: Counter = Counter()
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[0] not in RULES or not parts[1] or len(parts[2]) != 16:
            raise MalformedBaseline(f"MalformedBaseline: line {number}: expected 'RULE<TAB>path<TAB>hash', got {raw!r}")
        try:
            int(parts[2], 16)
        except ValueError:
            raise MalformedBaseline(f"MalformedBaseline: line {number}: bad hash {parts[2]!r}") from None
        entries[line] += 1
    return entries


def write_baseline(diagnostics: Iterable[Diagnostic]) -> str:
    return "".join(d.fingerprint() + "\n" for d in sorted(diagnostics, key=Diagnostic.sort_key))


def baseline(diagnostics: Iterable[Diagnostic], baseline_text: str) -> tuple[list[Diagnostic], int]:
    """Drop findings recorded in the baseline; return (kept, suppressed count).

    Each baseline entry suppresses at most one matching finding.
    """
    remaining = read_baseline(baseline_text)
    kept = []
    suppressed = 0
    for diag in diagnostics:
        fp = diag.fingerprint()
        if remaining[fp] > 0:
            remaining[fp] -= 1
            suppressed += 1
        else:
            kept.append(diag)
    return kept, suppressed
