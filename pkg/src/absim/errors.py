"""Exception types raised across the package."""


class AbsimError(Exception):
    """Base class for all errors raised by absim."""

    exit_code = 4


class ConfigError(AbsimError):
    exit_code = 2


class SchemaError(ConfigError):
    """Configuration document is missing a field or holds an invalid value."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class GuardViolation(AbsimError):
    exit_code = 3


class Degenerate(AbsimError):
    """A line lies in the plane of a spanning disk."""


class ClassMismatch(AbsimError):
    pass


class SingularPoint(AbsimError):
    pass


class LoopIntersectsMagnet(AbsimError):
    pass


class UnrealizedClass(AbsimError):
    pass


class OutsideDomain(AbsimError):
    pass


class ResolutionGuard(GuardViolation):
    pass


class FarPastGuard(GuardViolation):
    pass


class SupportViolation(GuardViolation):
    pass


class KrylovStall(AbsimError):
    pass


class GridMismatch(AbsimError):
    pass


class LowContrast(AbsimError):
    pass


class FitUnderdetermined(AbsimError):
    pass


class FormatError(AbsimError):
    """Malformed binary field dump; ``offset`` is the byte position of the fault."""

    def __init__(self, offset, message):
        self.offset = offset
        super().__init__(f"byte {offset}: {message}")
