"""Exception types shared across the package."""


class DataError(Exception):
    """A file or table violates the expected schema or content rules."""


class InfeasibleError(Exception):
    """The requested configuration cannot be satisfied by the data at hand,
    e.g. a Mondrian bin falls below the minimum size or k exceeds the
    number of indexed points."""
