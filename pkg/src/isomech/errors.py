"""Exception hierarchy shared by every module."""


class IsomechError(ValueError):
    """Base class for all structured errors raised by the package."""


class DimensionError(IsomechError):
    """Input vectors or rankings disagree in length or scope."""


class RankingError(IsomechError):
    """A ranking is not a permutation of the item set it claims to order."""


class GraphError(IsomechError):
    """Malformed ownership graph, partition, or mechanism parameters."""


class BudgetExceededError(IsomechError):
    """An exhaustive computation would exceed its configured size guard.

    ``required`` and ``limit`` carry the offending size and the cap so callers
    (and the CLI) can report both.
    """

    def __init__(self, message, required=None, limit=None):
        super().__init__(message)
        self.required = required
        self.limit = limit
