"""``advm`` command-line driver.

Exit codes: 0 success, 1 test failures, 2 lint errors, 3 usage, config or
infrastructure errors. The highest category met wins.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from advm import lint as lint_mod
from advm.env_model import (
    ABSTRACTION_DIR,
    BASE_FUNCTIONS_FILE,
    GLOBALS_FILE,
    TEST_ENTRY,
    TEST_PLAN,
    check_env_name,
    discover,
    load_system_config,
)
from advm.errors import AdvmError, DerivativeSpecificName, EnvExists, LintErrorsPresent
from advm.preprocessor import Selection
from advm.regression import execute, plan, resolve_test
from advm.release import LOCK_NAME, check_frozen, release
from advm.sim import derivative_path, format_trace_line, load_derivative, load_target, run, target_path

EXIT_OK = 0
EXIT_TEST_FAILURES = 1
EXIT_LINT_ERRORS = 2
EXIT_USAGE = 3


class UsageError(AdvmError):
    pass


# -- scaffold ----------------------------------------------------------------

_PLAN_TEMPLATE = """Test plan: {env}
{rule}

Module or class of tests: {env}

{cells}
"""

_GLOBALS_TEMPLATE = """; Global Defines for {env}.
; Every value the tests or Base Functions need is defined here, never inline.
; Select derivative or target differences with DERIV_<NAME> / TARGET_<NAME> guards.
"""

_BASE_TEMPLATE = """; Base Functions for {env}.
; Shared procedures for the tests of this environment. Global-layer routines
; are wrapped here and never called from a test directly.
"""

_TEST_TEMPLATE = """; Test cell: {cell}
#include "{globals}"

    pass
"""


def scaffold(root: Path, env_name: str, cells: list[str]) -> Path:
    """Create a conformant environment skeleton under ``root``."""
    config = load_system_config(root)
    violation = check_env_name(env_name, config.derivatives)
    if violation is not None:
        raise DerivativeSpecificName(f"DerivativeSpecificName: {violation.message()}")
    env_dir = root / env_name
    if env_dir.exists():
        raise EnvExists(f"EnvExists: {env_dir} already exists")
    abstraction = env_dir / ABSTRACTION_DIR
    abstraction.mkdir(parents=True)
    cell_lines = "\n".join(f"{c:<20} TODO describe the scenario" for c in cells) or "(no test cells yet)"
    (env_dir / TEST_PLAN).write_text(
        _PLAN_TEMPLATE.format(env=env_name, rule="=" * (11 + len(env_name)), cells=cell_lines), encoding="utf-8"
    )
    (abstraction / GLOBALS_FILE).write_text(_GLOBALS_TEMPLATE.format(env=env_name), encoding="utf-8")
    (abstraction / BASE_FUNCTIONS_FILE).write_text(_BASE_TEMPLATE.format(env=env_name), encoding="utf-8")
    for cell in cells:
        entry = env_dir / cell / TEST_ENTRY
        entry.parent.mkdir(parents=True)
        entry.write_text(_TEST_TEMPLATE.format(cell=cell, globals=GLOBALS_FILE), encoding="utf-8")
    return env_dir


# -- helpers -----------------------------------------------------------------


def _root(args) -> Path:
    return Path(args.root).resolve()


def _under_root(root: Path, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else root / p


def _selection(args, root: Path) -> Selection:
    """flags > ADVM_DERIVATIVE/ADVM_TARGET > advm.cfg [defaults]."""
    config = load_system_config(root)
    derivative = args.derivative or os.environ.get("ADVM_DERIVATIVE") or config.default_derivative
    target = args.target or os.environ.get("ADVM_TARGET") or config.default_target
    if not derivative or not target:
        raise UsageError("no derivative/target selected: pass --derivative/--target, set ADVM_DERIVATIVE/ADVM_TARGET, "
                         "or add [defaults] to advm.cfg")
    try:
        return Selection(derivative, target)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _target_if_present(root: Path, name: str):
    path = target_path(root, name)
    return load_target(path) if path.is_file() else None


# -- commands ----------------------------------------------------------------


def cmd_scaffold(args, out, err) -> int:
    root = _root(args)
    env_dir = scaffold(root, args.env, args.cells)
    out.write(f"created {env_dir.relative_to(root).as_posix()}\n")
    return EXIT_OK


def cmd_lint(args, out, err) -> int:
    if args.explain:
        out.write(lint_mod.explain(args.explain))
        return EXIT_OK
    root = _root(args)
    report = lint_mod.lint_tree(root)
    diags = list(report.diagnostics)
    parse_errors = list(report.parse_errors)
    if args.env:
        known = {e.name for e in report.layout.envs}
        for name in args.env:
            if name not in known:
                raise UsageError(f"unknown environment {name}")
        scoped = [report.for_env(name) for name in args.env]
        diags = sorted({d for r in scoped for d in r.diagnostics}, key=lint_mod.Diagnostic.sort_key)
        parse_errors = [e for r in scoped for e in r.parse_errors]
    if args.write_baseline:
        Path(args.write_baseline).write_text(lint_mod.write_baseline(diags), encoding="utf-8")
        err.write(f"wrote {len(diags)} fingerprint(s) to {args.write_baseline}\n")
    if args.baseline:
        text = Path(args.baseline).read_text(encoding="utf-8")
        diags, suppressed = lint_mod.baseline(diags, text)
        err.write(f"baseline suppressed {suppressed} finding(s)\n")
    for pe in parse_errors:
        out.write(pe.render() + "\n")
    for d in diags:
        out.write((d.to_record() if args.format == "records" else d.format()) + "\n")
    errors = sum(d.severity == lint_mod.ERROR for d in diags) + len(parse_errors)
    warnings = sum(d.severity == lint_mod.WARNING for d in diags)
    err.write(f"{errors} error(s), {warnings} warning(s)\n")
    if errors or (args.strict and warnings):
        return EXIT_LINT_ERRORS
    return EXIT_OK


def cmd_resolve(args, out, err) -> int:
    root = _root(args)
    selection = _selection(args, root)
    layout = discover(root, strict=False)
    program, _ = resolve_test(layout, _under_root(root, args.test), selection, _target_if_present(root, selection.target))
    out.write(program.listing())
    return EXIT_OK


def cmd_run(args, out, err) -> int:
    root = _root(args)
    selection = _selection(args, root)
    layout = discover(root, strict=False)
    derivative = load_derivative(derivative_path(root, selection.derivative))
    target = load_target(target_path(root, selection.target))
    program, _ = resolve_test(layout, _under_root(root, args.test), selection, target)
    trace = None
    if args.trace:
        trace = lambda cycle, pc, ins: out.write(format_trace_line(cycle, pc, ins) + "\n")  # noqa: E731
    report = run(program, derivative, target, trace=trace)
    out.write(report.render())
    return EXIT_OK if report.passed else EXIT_TEST_FAILURES


def cmd_release(args, out, err) -> int:
    root = _root(args)
    layout = discover(root, strict=False)
    if args.check:
        drift = check_frozen(layout, root / LOCK_NAME)
        out.write(drift.render())
        return EXIT_OK if drift.ok else EXIT_TEST_FAILURES
    names = None if args.system else args.env
    if names:
        known = {e.name for e in layout.envs}
        for name in names:
            if name not in known:
                raise UsageError(f"unknown environment {name}")
    try:
        result = release(layout, names)
    except LintErrorsPresent as exc:
        err.write(f"{exc}\n")
        return EXIT_LINT_ERRORS
    for name, digest in result.sub_labels:
        out.write(f"env {name} {digest}\n")
    out.write(f"globals {result.global_digest}\n")
    out.write(f"system {result.digest}\n")
    return EXIT_OK


def cmd_regress(args, out, err) -> int:
    root = _root(args)
    selection = _selection(args, root)
    if args.jobs < 1:
        raise UsageError("-j must be at least 1")
    regression_plan = plan(root, args.env or (), selection, args.frozen, parallelism=args.jobs)
    summary = execute(regression_plan)
    out.write(summary.records() if args.format == "records" else summary.table())
    return EXIT_OK if summary.all_passed else EXIT_TEST_FAILURES


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--root", default=".", help="verification tree root (default: current directory)")

    parser = argparse.ArgumentParser(prog="advm", description="Assembler driven verification toolchain")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scaffold", parents=[common], help="create a module test environment skeleton")
    p.add_argument("env")
    p.add_argument("cells", nargs="*", help="test cell names")
    p.set_defaults(func=cmd_scaffold)

    p = sub.add_parser("lint", parents=[common], help="check layer discipline")
    p.add_argument("--env", action="append", help="only report findings inside this environment")
    p.add_argument("--strict", action="store_true", help="warnings also fail")
    p.add_argument("--baseline", help="suppress findings recorded in this file")
    p.add_argument("--write-baseline", help="record current findings to this file")
    p.add_argument("--format", choices=("human", "records"), default="human")
    p.add_argument("--explain", metavar="RULE", help="print the rationale for a rule and exit")
    p.set_defaults(func=cmd_lint)

    for name, func, helptext in (
        ("resolve", cmd_resolve, "print the flattened listing of a test"),
        ("run", cmd_run, "run one test on the device model"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("test", help="test file, relative to --root")
        p.add_argument("--derivative")
        p.add_argument("--target")
        if name == "run":
            p.add_argument("--trace", action="store_true", help="print each executed instruction")
        p.set_defaults(func=func)

    p = sub.add_parser("release", parents=[common], help="label environments into release.lock")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--env", action="append", help="label this environment (repeatable)")
    group.add_argument("--system", action="store_true", help="label every environment")
    group.add_argument("--check", action="store_true", help="report drift against release.lock")
    p.set_defaults(func=cmd_release)

    p = sub.add_parser("regress", parents=[common], help="run the tests of one or more environments")
    p.add_argument("--derivative")
    p.add_argument("--target")
    p.add_argument("--env", action="append", help="environment to include (default: all)")
    p.add_argument("--frozen", action="store_true", help="refuse to run unless release.lock matches the tree")
    p.add_argument("-j", "--jobs", type=int, default=1)
    p.add_argument("--format", choices=("human", "records"), default="human")
    p.set_defaults(func=cmd_regress)
    return parser


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args, out, err)
    except (AdvmError, OSError) as exc:
        err.write(f"advm {args.command}: {exc}\n")
        return EXIT_USAGE


def main_entry() -> None:
    sys.exit(main())
