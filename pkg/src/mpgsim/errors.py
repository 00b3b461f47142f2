"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid scenario or fleet configuration.

    ``field`` holds the dotted path of the offending field, e.g.
    ``jobs[0].runtime.init_time``.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class UndefinedMetricError(ArithmeticError):
    """A goodput ratio whose denominator is zero."""


class TraceCorruptError(ValueError):
    def __init__(self, message: str, line: int | None = None, seq: int | None = None):
        self.line = line
        self.seq = seq
        where = []
        if line is not None:
            where.append(f"line {line}")
        if seq is not None:
            where.append(f"seq {seq}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class InvalidComparisonError(ValueError):
    """Two scenarios differ in more than the declared factor."""


class PhaseError(ValueError):
    """An operation was handed a job of the wrong workload phase."""
