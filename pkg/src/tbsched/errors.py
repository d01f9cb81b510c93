"""Exception types raised across the package."""


class TbschedError(Exception):
    """Base class for all errors raised by tbsched."""


class ZeroResidency(TbschedError):
    """A kernel's blocks cannot fit on an SM at all."""

    def __init__(self, kernel_id, resource):
        self.kernel_id = kernel_id
        self.resource = resource
        super().__init__(f"kernel {kernel_id!r} cannot fit on an SM: {resource} limit is 0")


class ParseError(TbschedError):
    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ValidationError(TbschedError):
    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ConfigError(TbschedError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class MissingSpec(TbschedError):
    pass


class DegenerateFit(TbschedError):
    pass


class SlotBusy(TbschedError):
    pass


class UnmatchedEnd(TbschedError):
    pass


class Deadlock(TbschedError):
    def __init__(self, message, resource=None):
        self.resource = resource
        super().__init__(message)


class MissingOracle(TbschedError):
    pass


class NonPositive(TbschedError):
    pass
