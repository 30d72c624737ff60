"""Exception hierarchy shared by the library and the CLI."""


class KGTMMError(Exception):
    """Base class for all package errors."""


class ContractViolation(KGTMMError, ValueError):
    """An argument violates a documented precondition (shapes, indices, ranges)."""


class ConstructionError(KGTMMError):
    """A problem, graph or mixing matrix could not be built as requested."""


class ConvergenceFailure(KGTMMError):
    """An iterative oracle stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class ConfigError(KGTMMError):
    """Invalid experiment or run configuration."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class DivergenceError(KGTMMError):
    """A run produced a non-finite iterate."""

    def __init__(self, message: str, round_index: int, step: int | None = None):
        where = f"round {round_index}" + (f", local step {step}" if step is not None else "")
        super().__init__(f"{message} at {where}")
        self.round_index = round_index
        self.step = step
