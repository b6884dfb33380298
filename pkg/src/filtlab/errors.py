"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument violates an operation's precondition."""


class DomainError(ValueError):
    """A function was evaluated outside the set where it is defined."""


class NumericFailure(ArithmeticError):
    """A simulation produced a non-finite value.

    ``node`` is the grid index of the offending step and ``path`` the global
    path index, when known.
    """

    def __init__(self, message: str, node: int | None = None, path: int | None = None):
        super().__init__(message)
        self.node = node
        self.path = path
