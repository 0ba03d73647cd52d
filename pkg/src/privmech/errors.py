"""Exception types shared across the package."""


class PrivmechError(Exception):
    pass


class DomainError(PrivmechError, ValueError):
    """Argument outside the domain of an operation (bad level, bad probability)."""


class SingularityError(PrivmechError, ValueError):
    """Virtual value requested where the density vanishes."""


class RangeError(PrivmechError, ValueError):
    """Target outside the range of a monotone function being inverted."""


class ScheduleError(PrivmechError, ValueError):
    """Thresholds or prices violate the ordering a schedule requires."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class DegenerateThresholdError(ScheduleError):
    pass


class DegenerateSupportError(PrivmechError, ValueError):
    pass


class BudgetError(PrivmechError, ValueError):
    """Instance too large for exhaustive enumeration."""


class InvariantViolation(PrivmechError, AssertionError):
    pass


class ConfigError(PrivmechError, ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
