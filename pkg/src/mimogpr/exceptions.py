"""Exception types shared across the package."""


class PanelFormatError(ValueError):
    """A panel file violates the expected CSV layout (reported with location)."""


class DegenerateDataError(ValueError):
    """Data lacks the variation an operation requires (constant column, zero variance)."""


class NumericalError(RuntimeError):
    """A numerical routine failed beyond recovery (e.g. factorization of an indefinite matrix)."""
