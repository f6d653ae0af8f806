"""Release labels: content digests per environment, composed into a system label.

``release.lock`` layout (sorted, byte-stable)::

    env <name> <sha256>
    file <name> <sha256> <relative path>     one per file of that env
    ...
    globals <sha256>
    gfile <sha256> <path relative to root>   one per global-layer file
    system <sha256>

Digests hash relative paths and raw bytes only; line endings are not
normalised.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from advm.env_model import EnvLayout, SystemLayout
from advm.errors import DuplicateEnvName, LintErrorsPresent, MalformedLock, UnreadableFile
from advm.lint import lint_tree

LOCK_NAME = "release.lock"


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"UnreadableFile: {path}: {exc.strerror}") from None


def file_digests(base: Path, files: Iterable[Path]) -> dict[str, str]:
    """Relative posix path -> sha256 of the file's bytes."""
    out = {}
    for f in files:
        rel = Path(os.path.relpath(f, base)).as_posix()
        out[rel] = hashlib.sha256(_read_bytes(Path(f))).hexdigest()
    return dict(sorted(out.items()))


def tree_digest(per_file: dict[str, str]) -> str:
    h = hashlib.sha256()
    for rel in sorted(per_file):
        h.update(rel.encode("utf-8"))
        h.update(b"\0")
        h.update(per_file[rel].encode("ascii"))
        h.update(b"\n")
    return h.hexdigest()


@dataclass(frozen=True)
class ReleaseLabel:
    env_name: str
    digest: str
    files: dict[str, str] = field(compare=False, repr=False)
    created: str = field(default="", compare=False)


def digest_env(env: EnvLayout) -> ReleaseLabel:
    files = file_digests(env.root, env.files)
    created = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return ReleaseLabel(env.name, tree_digest(files), files, created)


def label_env(layout: SystemLayout, env_name: str, *, lint_report=None) -> ReleaseLabel:
    """Label one environment; refused while it has lint errors.

    Warnings do not block a release.
    """
    env = layout.env(env_name)
    report = (lint_report or lint_tree(layout.root)).for_env(env_name)
    count = len(report.errors()) + len(report.parse_errors)
    if count:
        raise LintErrorsPresent(env_name, count)
    return digest_env(env)


def global_files(layout: SystemLayout) -> dict[str, str]:
    return file_digests(layout.root, layout.global_files)


@dataclass(frozen=True)
class SystemRelease:
    digest: str
    sub_labels: tuple[tuple[str, str], ...]
    global_digest: str
    env_files: dict[str, dict[str, str]] = field(default_factory=dict, compare=False, repr=False)
    global_file_digests: dict[str, str] = field(default_factory=dict, compare=False, repr=False)

    def render(self) -> str:
        lines = []
        for name, digest in self.sub_labels:
            lines.append(f"env {name} {digest}")
            for rel, fd in sorted(self.env_files.get(name, {}).items()):
                lines.append(f"file {name} {fd} {rel}")
        lines.append(f"globals {self.global_digest}")
        for rel, fd in sorted(self.global_file_digests.items()):
            lines.append(f"gfile {fd} {rel}")
        lines.append(f"system {self.digest}")
        return "\n".join(lines) + "\n"


def system_digest(sub_labels: Iterable[tuple[str, str]], global_digest: str) -> str:
    h = hashlib.sha256()
    for name, digest in sorted(sub_labels):
        h.update(f"env {name} {digest}\n".encode("utf-8"))
    h.update(f"globals {global_digest}\n".encode("ascii"))
    return h.hexdigest()


def compose_system(
    sub_labels: Sequence[ReleaseLabel | tuple[str, str]],
    global_digest: str,
    *,
    global_file_digests: dict[str, str] | None = None,
    lock_path: str | os.PathLike | None = None,
) -> SystemRelease:
    """Combine per-env labels with the global-layer digest.

    The result does not depend on the order of ``sub_labels``. When
    ``lock_path`` is given the record is written there atomically.
    """
    if not sub_labels:
        raise ValueError("a system release needs at least one sub-label")
    pairs = []
    env_files = {}
    seen = set()
    for label in sub_labels:
        if isinstance(label, ReleaseLabel):
            name, digest = label.env_name, label.digest
            env_files[name] = label.files
        else:
            name, digest = label
        if name in seen:
            raise DuplicateEnvName(f"DuplicateEnvName: {name}")
        seen.add(name)
        pairs.append((name, digest))
    pairs.sort()
    release = SystemRelease(
        system_digest(pairs, global_digest),
        tuple(pairs),
        global_digest,
        env_files,
        dict(global_file_digests or {}),
    )
    if lock_path is not None:
        write_lock(lock_path, release)
    return release


def write_lock(path: str | os.PathLike, release: SystemRelease) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=".release.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(release.render())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_lock(path: str | os.PathLike) -> SystemRelease:
    path = Path(path)
    if not path.is_file():
        raise MalformedLock(f"MalformedLock: {path} does not exist")
    pairs: list[tuple[str, str]] = []
    env_files: dict[str, dict[str, str]] = {}
    gfiles: dict[str, str] = {}
    global_digest = system = None

    def bad(number: int, why: str):
        return MalformedLock(f"MalformedLock: {path}:{number}: {why}")

    def hexdigest(value: str, number: int) -> str:
        if len(value) != 64 or any(c not in "0123456789abcdef" for c in value):
            raise bad(number, f"{value!r} is not a sha256 hex digest")
        return value

    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        tag, _, rest = line.partition(" ")
        if tag == "env":
            parts = rest.split(" ")
            if len(parts) != 2:
                raise bad(number, "expected 'env <name> <digest>'")
            pairs.append((parts[0], hexdigest(parts[1], number)))
            env_files.setdefault(parts[0], {})
        elif tag == "file":
            parts = rest.split(" ", 2)
            if len(parts) != 3 or parts[0] not in env_files:
                raise bad(number, "expected 'file <env> <digest> <path>' after its env line")
            env_files[parts[0]][parts[2]] = hexdigest(parts[1], number)
        elif tag == "globals":
            global_digest = hexdigest(rest, number)
        elif tag == "gfile":
            parts = rest.split(" ", 1)
            if len(parts) != 2:
                raise bad(number, "expected 'gfile <digest> <path>'")
            gfiles[parts[1]] = hexdigest(parts[0], number)
        elif tag == "system":
            system = hexdigest(rest, number)
        else:
            raise bad(number, f"unknown record {tag!r}")
    if global_digest is None or system is None:
        raise MalformedLock(f"MalformedLock: {path}: missing globals or system line")
    names = [n for n, _ in pairs]
    if len(set(names)) != len(names):
        raise MalformedLock(f"MalformedLock: {path}: duplicate env entry")
    if system_digest(pairs, global_digest) != system:
        raise MalformedLock(f"MalformedLock: {path}: system digest does not match its sub-labels")
    return SystemRelease(system, tuple(sorted(pairs)), global_digest, env_files, gfiles)


# -- drift -------------------------------------------------------------------


@dataclass(frozen=True)
class Drift:
    scope: str  # env name, or "globals"
    kind: str  # changed | unreleased | removed
    changed_files: tuple[str, ...] = ()

    def render(self) -> str:
        head = f"{self.scope}: {self.kind}"
        if self.changed_files:
            head += " (" + ", ".join(self.changed_files) + ")"
        return head


@dataclass(frozen=True)
class DriftReport:
    drifts: tuple[Drift, ...]

    @property
    def ok(self) -> bool:
        return not self.drifts

    def render(self) -> str:
        if self.ok:
            return "ok: tree matches release.lock\n"
        return "".join(f"drift {d.render()}\n" for d in self.drifts)


def _changed(old: dict[str, str], new: dict[str, str]) -> tuple[str, ...]:
    return tuple(sorted(p for p in set(old) | set(new) if old.get(p) != new.get(p)))


def check_frozen(layout: SystemLayout, lock_path: str | os.PathLike | None = None) -> DriftReport:
    """Compare the tree on disk with ``release.lock``."""
    lock = read_lock(lock_path or layout.root / LOCK_NAME)
    locked = dict(lock.sub_labels)
    drifts = []
    on_disk = {env.name: env for env in layout.envs}
    for name in sorted(set(locked) | set(on_disk)):
        if name not in locked:
            drifts.append(Drift(name, "unreleased"))
            continue
        if name not in on_disk:
            drifts.append(Drift(name, "removed"))
            continue
        current = file_digests(on_disk[name].root, on_disk[name].files)
        if tree_digest(current) != locked[name]:
            drifts.append(Drift(name, "changed", _changed(lock.env_files.get(name, {}), current)))
    current_globals = global_files(layout)
    if tree_digest(current_globals) != lock.global_digest:
        drifts.append(Drift("globals", "changed", _changed(lock.global_file_digests, current_globals)))
    return DriftReport(tuple(drifts))


def release(layout: SystemLayout, env_names: Sequence[str] | None = None) -> SystemRelease:
    """Label ``env_names`` (all envs when None) and update ``release.lock``.

    Entries already in the lock for other environments are kept.
    """
    report = lint_tree(layout.root)
    names = [e.name for e in layout.envs] if env_names is None else list(env_names)
    labels: dict[str, ReleaseLabel | tuple[str, str]] = {}
    lock_path = layout.root / LOCK_NAME
    if env_names is not None and lock_path.is_file():
        old = read_lock(lock_path)
        present = {e.name for e in layout.envs}
        for n, d in old.sub_labels:
            if n in present:
                labels[n] = ReleaseLabel(n, d, old.env_files.get(n, {}))
    for name in names:
        labels[name] = label_env(layout, name, lint_report=report)
    gfiles = global_files(layout)
    return compose_system(
        list(labels.values()),
        tree_digest(gfiles),
        global_file_digests=gfiles,
        lock_path=lock_path,
    )
