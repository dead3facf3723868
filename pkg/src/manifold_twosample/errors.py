"""Exception hierarchy shared by all modules."""


class ManifoldTestError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ManifoldTestError, ValueError):
    pass


class DomainError(ManifoldTestError, ValueError):
    """A point lies off the manifold or outside a chart interval."""

    def __init__(self, message: str, distance: float | None = None):
        super().__init__(message)
        self.distance = distance


class EmptySampleError(ManifoldTestError, ValueError):
    pass


class EmptyChartError(ManifoldTestError, ValueError):
    pass


class EmptyCloudError(ManifoldTestError, ValueError):
    pass


class OracleScopeError(ManifoldTestError, ValueError):
    pass


class BudgetError(ManifoldTestError, ValueError):
    pass


class ConformanceError(ManifoldTestError, ValueError):
    """Critic parameters do not match the architecture shapes."""


class SmoothnessError(ManifoldTestError, ValueError):
    pass


class LevelError(ManifoldTestError, ValueError):
    pass


class SizeError(ManifoldTestError, ValueError):
    pass


class ConfigError(ManifoldTestError, ValueError):
    """Invalid scenario configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
