"""Discovery and three-layer classification of a verification tree.

A system root looks like::

    root/
      advm.cfg                  [system] global_dirs, [derivatives] names
      global_lib/...            GlobalLayer (declared in advm.cfg)
      page_ctrl/                one module test environment
        test_plan.txt
        Abstraction_Layer/      globals.inc, base_functions.asm
        test_page_write/src/test.asm   TestLayer (one dir per test cell)
"""

from __future__ import annotations

import configparser
import enum
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from advm.errors import (
    ConfigError,
    InconsistentTestCells,
    LayoutError,
    MalformedConfig,
    MissingAbstractionLayer,
    MissingTestPlan,
    UnclassifiableFile,
    UnknownPath,
)

SYSTEM_CONFIG = "advm.cfg"
TEST_PLAN = "test_plan.txt"
ABSTRACTION_DIR = "Abstraction_Layer"
GLOBALS_FILE = "globals.inc"
BASE_FUNCTIONS_FILE = "base_functions.asm"
TEST_ENTRY = Path("src") / "test.asm"
SOURCE_SUFFIXES = (".asm", ".inc")


class Layer(enum.Enum):
    TEST = "TestLayer"
    ABSTRACTION = "AbstractionLayer"
    GLOBAL = "GlobalLayer"

    def __str__(self) -> str:
        return self.value


def read_ini(path: Path) -> configparser.ConfigParser:
    """Read one of the line-based ``key = value`` config files."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise MalformedConfig(f"{path}: {exc}") from None
    return parser


def split_list(value: str) -> tuple[str, ...]:
    return tuple(item.strip() for item in value.split(",") if item.strip())


@dataclass(frozen=True)
class SystemConfig:
    global_dirs: tuple[str, ...] = ()
    derivatives: tuple[str, ...] = ()
    default_derivative: str | None = None
    default_target: str | None = None


def load_system_config(root: Path) -> SystemConfig:
    path = Path(root) / SYSTEM_CONFIG
    if not path.is_file():
        return SystemConfig()
    ini = read_ini(path)
    return SystemConfig(
        global_dirs=split_list(ini.get("system", "global_dirs", fallback="")),
        derivatives=split_list(ini.get("derivatives", "names", fallback="")),
        default_derivative=ini.get("defaults", "derivative", fallback=None) or None,
        default_target=ini.get("defaults", "target", fallback=None) or None,
    )


@dataclass(frozen=True)
class TestCell:
    name: str
    dir: Path
    sources: tuple[Path, ...]
    shape: frozenset[str]

    @property
    def entry(self) -> Path:
        return self.dir / TEST_ENTRY


@dataclass(frozen=True)
class EnvLayout:
    name: str
    root: Path
    test_plan: Path | None
    abstraction_dir: Path | None
    abstraction_sources: tuple[Path, ...]
    test_cells: tuple[TestCell, ...]
    files: tuple[Path, ...]  # every regular file in the env, sorted

    def cell(self, name: str) -> TestCell:
        for cell in self.test_cells:
            if cell.name == name:
                return cell
        raise KeyError(name)


@dataclass(frozen=True)
class StructuralProblem:
    kind: str  # MissingTestPlan | MissingAbstractionLayer | InconsistentTestCells | UnclassifiableFile
    env: str | None
    path: Path
    detail: str
    evidence: str

    def to_error(self) -> LayoutError:
        cls = {
            "MissingTestPlan": MissingTestPlan,
            "MissingAbstractionLayer": MissingAbstractionLayer,
            "InconsistentTestCells": InconsistentTestCells,
            "UnclassifiableFile": UnclassifiableFile,
        }[self.kind]
        return cls(f"{self.kind}: {self.detail}")


@dataclass(frozen=True)
class SystemLayout:
    root: Path
    config: SystemConfig
    global_dirs: tuple[Path, ...]
    global_files: tuple[Path, ...]
    envs: tuple[EnvLayout, ...]
    layers: Mapping[Path, Layer] = field(repr=False)
    problems: tuple[StructuralProblem, ...] = ()

    def layer_of(self, path: str | os.PathLike) -> Layer:
        key = Path(path).resolve()
        try:
            return self.layers[key]
        except KeyError:
            raise UnknownPath(f"UnknownPath: {path} was not discovered under {self.root}") from None

    def env(self, name: str) -> EnvLayout:
        for env in self.envs:
            if env.name == name:
                return env
        raise KeyError(name)

    def env_of(self, path: str | os.PathLike) -> EnvLayout | None:
        key = Path(path).resolve()
        for env in self.envs:
            if key == env.root or env.root in key.parents:
                return env
        return None

    def search_roots(self, env: EnvLayout | None) -> list[Path]:
        """Include search order after the including file's own directory."""
        roots = []
        if env is not None:
            roots.append(env.root / ABSTRACTION_DIR)
        roots.append(self.root)
        return roots

    def source_files(self) -> list[Path]:
        return sorted(self.layers, key=lambda p: p.as_posix())

    def rel(self, path: str | os.PathLike) -> str:
        return Path(os.path.relpath(Path(path).resolve(), self.root)).as_posix()


def _walk_files(top: Path) -> Iterable[Path]:
    for dirpath, dirnames, filenames in os.walk(top, followlinks=True):
        dirnames[:] = sorted(d for d in dirnames if not d.startswith("."))
        for name in sorted(filenames):
            if not name.startswith("."):
                yield Path(dirpath) / name


def _subdirs(top: Path) -> list[Path]:
    return sorted((p for p in top.iterdir() if p.is_dir() and not p.name.startswith(".")), key=lambda p: p.name)


def _is_source(path: Path) -> bool:
    return path.suffix in SOURCE_SUFFIXES


def _is_plain_text(path: Path) -> bool:
    data = path.read_bytes()
    if b"\x00" in data:
        return False
    try:
        data.decode("utf-8")
    except UnicodeDecodeError:
        return False
    return True


def _cell_shape(cell_dir: Path) -> frozenset[str]:
    shape = set()
    for dirpath, dirnames, _ in os.walk(cell_dir, followlinks=True):
        dirnames[:] = [d for d in dirnames if not d.startswith(".")]
        for d in dirnames:
            shape.add((Path(dirpath) / d).relative_to(cell_dir).as_posix())
    return frozenset(shape)


def _discover_env(env_dir: Path, layers: dict[Path, Layer], problems: list[StructuralProblem]) -> EnvLayout:
    name = env_dir.name
    plan = env_dir / TEST_PLAN
    if not plan.is_file():
        problems.append(
            StructuralProblem("MissingTestPlan", name, plan, f"environment {name} has no {TEST_PLAN}", TEST_PLAN)
        )
        plan = None
    elif not _is_plain_text(plan):
        problems.append(
            StructuralProblem("MissingTestPlan", name, plan, f"{TEST_PLAN} in {name} is not plain text", TEST_PLAN)
        )
    abstraction = env_dir / ABSTRACTION_DIR
    abstraction_sources: list[Path] = []
    if not abstraction.is_dir() or not (abstraction / GLOBALS_FILE).is_file():
        what = ABSTRACTION_DIR if not abstraction.is_dir() else f"{ABSTRACTION_DIR}/{GLOBALS_FILE}"
        problems.append(
            StructuralProblem("MissingAbstractionLayer", name, abstraction, f"environment {name} has no {what}", what)
        )
    if abstraction.is_dir():
        for f in _walk_files(abstraction):
            if _is_source(f):
                layers[f.resolve()] = Layer.ABSTRACTION
                abstraction_sources.append(f.resolve())
    else:
        abstraction = None

    cells = []
    for cell_dir in _subdirs(env_dir):
        if cell_dir.name == ABSTRACTION_DIR:
            continue
        sources = []
        for f in _walk_files(cell_dir):
            if _is_source(f):
                layers[f.resolve()] = Layer.TEST
                sources.append(f.resolve())
        cells.append(TestCell(cell_dir.name, cell_dir.resolve(), tuple(sources), _cell_shape(cell_dir)))

    for f in sorted(env_dir.iterdir()):
        if f.is_file() and _is_source(f):
            problems.append(
                StructuralProblem(
                    "UnclassifiableFile", name, f, f"{f.name} sits at the top of {name}, outside any layer", f.name
                )
            )

    if cells:
        counts = Counter(c.shape for c in cells)
        best = max(counts.values())
        reference = next(c.shape for c in cells if counts[c.shape] == best)
        for cell in cells:
            if cell.shape != reference:
                extra = sorted(cell.shape - reference)
                missing = sorted(reference - cell.shape)
                detail = f"test cell {cell.name} in {name} differs from its siblings"
                if extra:
                    detail += f"; extra: {', '.join(extra)}"
                if missing:
                    detail += f"; missing: {', '.join(missing)}"
                problems.append(StructuralProblem("InconsistentTestCells", name, cell.dir, detail, cell.name))

    files = tuple(sorted((f.resolve() for f in _walk_files(env_dir)), key=lambda p: p.as_posix()))
    return EnvLayout(
        name=name,
        root=env_dir.resolve(),
        test_plan=plan.resolve() if plan else None,
        abstraction_dir=abstraction.resolve() if abstraction else None,
        abstraction_sources=tuple(abstraction_sources),
        test_cells=tuple(cells),
        files=files,
    )


def discover(root: str | os.PathLike, *, strict: bool = True) -> SystemLayout:
    """Classify every ``.asm``/``.inc`` file under ``root``.

    With ``strict`` the first structural problem is raised; otherwise all of
    them are collected on the returned layout (the linter wants them all).
    """
    root = Path(root).resolve()
    if not root.is_dir():
        raise ConfigError(f"{root} is not a directory")
    config = load_system_config(root)
    layers: dict[Path, Layer] = {}
    problems: list[StructuralProblem] = []

    global_dirs = []
    global_files = []
    for rel in config.global_dirs:
        gdir = (root / rel).resolve()
        if not gdir.is_dir():
            raise ConfigError(f"{SYSTEM_CONFIG}: global_dirs entry {rel!r} is not a directory")
        global_dirs.append(gdir)
        for f in _walk_files(gdir):
            global_files.append(f.resolve())
            if _is_source(f):
                layers[f.resolve()] = Layer.GLOBAL

    envs = []
    for child in _subdirs(root):
        resolved = child.resolve()
        if any(resolved == g or resolved in g.parents for g in global_dirs):
            # a global dir or a container of one; stray sources inside are unclassified
            for f in _walk_files(child):
                if _is_source(f) and f.resolve() not in layers:
                    problems.append(
                        StructuralProblem(
                            "UnclassifiableFile", None, f, f"{f} is outside every declared global dir", f.name
                        )
                    )
            continue
        envs.append(_discover_env(child, layers, problems))

    for f in sorted(root.iterdir()):
        if f.is_file() and _is_source(f):
            problems.append(
                StructuralProblem("UnclassifiableFile", None, f, f"{f.name} sits at the system root", f.name)
            )

    if strict and problems:
        raise problems[0].to_error()
    return SystemLayout(
        root=root,
        config=config,
        global_dirs=tuple(global_dirs),
        global_files=tuple(sorted(global_files, key=lambda p: p.as_posix())),
        envs=tuple(envs),
        layers=layers,
        problems=tuple(problems),
    )


def layer_of(layout: SystemLayout, path: str | os.PathLike) -> Layer:
    return layout.layer_of(path)


# -- environment names -------------------------------------------------------

_TOKEN_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")


def name_tokens(name: str) -> list[str]:
    """Split on ``_``/``-`` and on case and letter/digit boundaries, lower-cased.

    >>> name_tokens("page_ctrl_SLE88B")
    ['page', 'ctrl', 'sle', '88', 'b']
    """
    return [t.lower() for t in _TOKEN_RE.findall(name)]


@dataclass(frozen=True)
class NameViolation:
    env: str
    derivative: str

    def message(self) -> str:
        return f"environment name {self.env!r} contains derivative name {self.derivative!r}"


def check_env_name(env_name: str, derivatives: Iterable[str]) -> NameViolation | None:
    """Flag an env name that contains a registered derivative as whole tokens.

    When several derivatives match, the one spanning most tokens is reported.
    """
    env_tokens = name_tokens(env_name)
    for deriv in sorted(derivatives, key=lambda d: (-len(name_tokens(d)), d)):
        want = name_tokens(deriv)
        if not want:
            continue
        for i in range(len(env_tokens) - len(want) + 1):
            if env_tokens[i : i + len(want)] == want:
                return NameViolation(env_name, deriv)
    return None
