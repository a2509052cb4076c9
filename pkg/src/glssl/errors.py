"""Exception taxonomy shared across the package.

Each class maps to one CLI exit code, see cli.main.
"""


class GlsslError(Exception):
    """Base class for all package errors."""


class ShapeError(GlsslError):
    """Operand shapes are incompatible with an operation's contract."""


class ConfigError(GlsslError):
    """Invalid configuration value or infeasible request."""


class MemoryBudgetError(ConfigError):
    """Estimated working-set size exceeds the configured budget."""


class IngestionError(GlsslError):
    """A dataset bundle or checkpoint file is missing or malformed."""


class DegenerateRowError(GlsslError):
    """A row normalization hit a zero row sum."""

    def __init__(self, row: int, context: str = "row_normalize"):
        self.row = row
        super().__init__(f"{context}: row {row} has zero sum, cannot normalize")


class DegenerateDegreeError(GlsslError):
    """A propagation degree matrix has a non-positive diagonal entry."""

    def __init__(self, index: int, value: float):
        self.index = index
        super().__init__(f"degree matrix entry ({index},{index}) = {value!r} is not positive")


class DivergenceError(GlsslError):
    """Training produced a non-finite loss."""

    def __init__(self, episode: int, value: float):
        self.episode = episode
        super().__init__(f"non-finite loss {value!r} at episode {episode}")


class GradCheckError(GlsslError):
    """A requested gradient check did not meet its tolerance."""
