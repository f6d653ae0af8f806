"""Exception hierarchy shared by the toolchain.

Every failure the CLI can report derives from :class:`AdvmError`, so the
driver can map anything it catches to exit code 3 in one place.
"""

from __future__ import annotations


class AdvmError(Exception):
    """Base class for all toolchain errors."""


# -- dialect -----------------------------------------------------------------


class ParseFailure(AdvmError):
    """A source unit contained one or more malformed lines."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(e.render() for e in self.errors))


class UndefinedSymbol(AdvmError):
    def __init__(self, name: str, origin: str | None = None):
        self.name = name
        self.origin = origin
        where = f"{origin}: " if origin else ""
        super().__init__(f"{where}UndefinedSymbol: {name} is not defined")


# -- preprocessor ------------------------------------------------------------


class PreprocessError(AdvmError):
    pass


class IncludeCycle(PreprocessError):
    def __init__(self, chain):
        self.chain = [str(p) for p in chain]
        super().__init__("IncludeCycle: " + " -> ".join(self.chain))


class IncludeNotFound(PreprocessError):
    def __init__(self, path: str, origin: str):
        self.path = path
        self.origin = origin
        super().__init__(f"{origin}: IncludeNotFound: {path}")


class DuplicateDefine(PreprocessError):
    def __init__(self, name: str, first: str, second: str):
        self.name = name
        self.first = first
        self.second = second
        super().__init__(f"{second}: DuplicateDefine: {name} already defined at {first}")


class UnbalancedConditional(PreprocessError):
    def __init__(self, origin: str, detail: str):
        self.origin = origin
        super().__init__(f"{origin}: UnbalancedConditional: {detail}")


class UnresolvedCall(PreprocessError):
    def __init__(self, name: str, origin: str):
        self.name = name
        self.origin = origin
        super().__init__(f"{origin}: UnresolvedCall: no procedure named {name}")


class UnresolvedLabel(PreprocessError):
    def __init__(self, name: str, origin: str):
        self.name = name
        self.origin = origin
        super().__init__(f"{origin}: UnresolvedLabel: no label named {name}")


class DuplicateLabel(PreprocessError):
    def __init__(self, name: str, first: str, second: str):
        self.name = name
        super().__init__(f"{second}: DuplicateLabel: {name} already placed at {first}")


class DuplicateProcedure(PreprocessError):
    def __init__(self, name: str, first: str, second: str):
        self.name = name
        self.first = first
        self.second = second
        super().__init__(f"{second}: DuplicateProcedure: {name} already defined at {first}")


class UnbalancedProc(PreprocessError):
    def __init__(self, origin: str, detail: str):
        self.origin = origin
        super().__init__(f"{origin}: UnbalancedProc: {detail}")


# -- configuration and layout ------------------------------------------------


class ConfigError(AdvmError):
    pass


class MalformedConfig(ConfigError):
    pass


class OverlappingFields(ConfigError):
    pass


class FieldExceedsWidth(ConfigError):
    pass


class DuplicateAddress(ConfigError):
    pass


class LayoutError(AdvmError):
    pass


class MissingTestPlan(LayoutError):
    pass


class MissingAbstractionLayer(LayoutError):
    pass


class InconsistentTestCells(LayoutError):
    pass


class UnclassifiableFile(LayoutError):
    pass


class UnknownPath(LayoutError):
    pass


# -- lint --------------------------------------------------------------------


class UnknownRule(AdvmError):
    pass


class MalformedBaseline(AdvmError):
    pass


# -- release / regression ----------------------------------------------------


class ReleaseError(AdvmError):
    pass


class LintErrorsPresent(ReleaseError):
    def __init__(self, env: str, count: int):
        self.env = env
        self.count = count
        super().__init__(f"LintErrorsPresent: {env} has {count} lint error(s); release refused")


class UnreadableFile(ReleaseError):
    pass


class DuplicateEnvName(ReleaseError):
    pass


class MalformedLock(ReleaseError):
    pass


class RegressionError(AdvmError):
    pass


class UnknownEnv(RegressionError):
    pass


class FrozenDriftDetected(RegressionError):
    def __init__(self, report):
        self.report = report
        super().__init__("FrozenDriftDetected:\n" + report.render())


# -- cli ---------------------------------------------------------------------


class EnvExists(AdvmError):
    pass


class DerivativeSpecificName(AdvmError):
    pass
