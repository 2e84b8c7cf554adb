"""Exception types shared across the simulator."""


class ConfigurationError(ValueError):
    """Invalid radio, geometry or scenario parameters.

    ``key`` names the offending configuration entry when one is known.
    """

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class TleParseError(ValueError):
    def __init__(self, message: str, line: int, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(f"TLE {where}: {message}")


class PropagationError(ValueError):
    pass


class SchedulingError(RuntimeError):
    """An event was scheduled in the past; the event loop is corrupt."""


class SweepError(RuntimeError):
    """A sweep run failed; ``point`` identifies the failing configuration."""

    def __init__(self, message: str, point: dict):
        self.point = point
        super().__init__(f"sweep point {point}: {message}")
