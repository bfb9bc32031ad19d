"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inputs disagree with the configured dimensions or ranges."""


class PreconditionError(ValueError):
    """An operation was called on inputs it is not defined for (e.g. empty data)."""


class NumericalError(ArithmeticError):
    """A factorization or eigensolve failed even after stabilisation."""


class DegenerateGraphError(NumericalError):
    """A similarity graph has an isolated vertex (zero degree)."""


class DegenerateQueryError(ArithmeticError):
    """Every kernel weight underflowed to zero for a query point."""
