"""Run every test cell of selected environments for one (derivative, target)."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from advm.env_model import EnvLayout, SystemLayout, TestCell, discover
from advm.errors import AdvmError, FrozenDriftDetected, UnknownEnv
from advm.preprocessor import DefineTable, ExpandedProgram, Selection, guess_layer, resolve
from advm.release import LOCK_NAME, check_frozen, read_lock
from advm.sim import (
    TRAP,
    VERDICTS,
    DerivativeSpec,
    RunReport,
    TargetSpec,
    derivative_path,
    load_derivative,
    load_target,
    run,
    target_path,
)


@dataclass(frozen=True)
class RegressionPlan:
    layout: SystemLayout
    envs: tuple[str, ...]
    selection: Selection
    derivative: DerivativeSpec
    target: TargetSpec
    frozen: bool = False
    parallelism: int = 1
    digests: tuple[tuple[str, str], ...] = ()  # from release.lock when frozen

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


def plan(
    root: str | os.PathLike,
    env_filter: Sequence[str] = (),
    selection: Selection | None = None,
    frozen: bool = False,
    *,
    parallelism: int = 1,
    layout: SystemLayout | None = None,
) -> RegressionPlan:
    """Select environments (all when ``env_filter`` is empty) and load specs.

    A frozen plan requires ``release.lock`` to match the tree exactly.
    """
    if selection is None:
        raise ValueError("a regression needs a derivative/target selection")
    layout = layout or discover(root, strict=False)
    known = [e.name for e in layout.envs]
    for name in env_filter:
        if name not in known:
            raise UnknownEnv(f"UnknownEnv: {name} (known: {', '.join(known) or 'none'})")
    envs = tuple(sorted(set(env_filter))) if env_filter else tuple(known)
    digests: tuple[tuple[str, str], ...] = ()
    if frozen:
        lock_path = layout.root / LOCK_NAME
        report = check_frozen(layout, lock_path)
        if not report.ok:
            raise FrozenDriftDetected(report)
        lock = read_lock(lock_path)
        digests = (*lock.sub_labels, ("globals", lock.global_digest), ("system", lock.digest))
    derivative = load_derivative(derivative_path(layout.root, selection.derivative))
    target = load_target(target_path(layout.root, selection.target))
    return RegressionPlan(layout, envs, selection, derivative, target, frozen, parallelism, digests)


@dataclass(frozen=True)
class CellResult:
    env: str
    cell: str
    report: RunReport

    def record(self) -> str:
        return f"{self.env}\t{self.cell}\t{self.report.verdict}\t{self.report.cycles}\t{self.report.site or '-'}"


@dataclass(frozen=True)
class RegressionSummary:
    results: tuple[CellResult, ...]
    counts: dict[str, int]
    digests: tuple[tuple[str, str], ...] = ()
    wall_time: float = field(default=0.0, compare=False)

    @property
    def all_passed(self) -> bool:
        return all(r.report.passed for r in self.results)

    def verdict(self, env: str, cell: str) -> RunReport:
        for r in self.results:
            if r.env == env and r.cell == cell:
                return r.report
        raise KeyError((env, cell))

    def records(self) -> str:
        return "".join(r.record() + "\n" for r in self.results)

    def table(self) -> str:
        rows = [("ENV", "CELL", "VERDICT", "CYCLES", "SITE")]
        for r in self.results:
            site = r.report.site or "-"
            rows.append((r.env, r.cell, r.report.verdict, str(r.report.cycles), site))
        widths = [max(len(row[i]) for row in rows) for i in range(4)]
        out = []
        for row in rows:
            out.append("  ".join(col.ljust(w) for col, w in zip(row, widths)) + "  " + row[4])
        counts = ", ".join(f"{v.lower()} {self.counts[v]}" for v in VERDICTS)
        out.append(f"total {len(self.results)}: {counts}")
        for name, digest in self.digests:
            out.append(f"release {name} {digest}")
        return "\n".join(line.rstrip() for line in out) + "\n"


def resolve_test(
    layout: SystemLayout, entry: str | os.PathLike, selection: Selection, target: TargetSpec | None = None
) -> tuple[ExpandedProgram, DefineTable]:
    """Resolve a test file with the include roots and layers of its environment."""
    entry = Path(entry).resolve()
    env = layout.env_of(entry)
    return resolve(
        entry,
        selection,
        layout.search_roots(env),
        extra_defines=target.defines if target else (),
        layer_of=lambda p: layout.layers.get(p.resolve()) or guess_layer(p, entry),
        display_base=layout.root,
    )


def run_cell(plan_: RegressionPlan, env: EnvLayout, cell: TestCell) -> RunReport:
    """Resolve and run one cell; infrastructure failures become Trap."""
    entry = cell.entry
    if not entry.is_file():
        return RunReport(TRAP, 0, message=f"test cell {cell.name} has no {entry.relative_to(cell.dir).as_posix()}")
    try:
        program, _ = resolve_test(plan_.layout, entry, plan_.selection, plan_.target)
    except (AdvmError, OSError, UnicodeDecodeError) as exc:
        return RunReport(TRAP, 0, site=plan_.layout.rel(entry), message=f"resolve failed: {exc}")
    return run(program, plan_.derivative, plan_.target)


def execute(plan_: RegressionPlan) -> RegressionSummary:
    """Run every cell of the planned envs; result order is (env, cell)."""
    started = time.perf_counter()
    jobs = []
    for name in plan_.envs:
        env = plan_.layout.env(name)
        for cell in env.test_cells:
            jobs.append((env, cell))

    def work(job):
        env, cell = job
        return CellResult(env.name, cell.name, run_cell(plan_, env, cell))

    if plan_.parallelism == 1:
        results = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=plan_.parallelism) as pool:
            results = list(pool.map(work, jobs))
    results.sort(key=lambda r: (r.env, r.cell))
    counts = {v: 0 for v in VERDICTS}
    for r in results:
        counts[r.report.verdict] += 1
    return RegressionSummary(tuple(results), counts, plan_.digests, time.perf_counter() - started)
