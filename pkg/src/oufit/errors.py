"""Exception types raised across the package."""


class OUError(Exception):
    """Base class for every error raised by oufit."""


class InvalidParams(OUError, ValueError):
    """A domain value violates its invariant.

    ``field`` names the offending attribute so callers (the CLI in
    particular) can point at the right flag.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class CapacityError(OUError):
    pass


class DegenerateDesign(OUError):
    pass


class BetaOutOfRange(OUError):
    def __init__(self, beta, side):
        super().__init__(f"regression slope beta={beta!r} is {side} the open interval (0, 1)")
        self.beta = beta
        self.side = side


class NumericalBreakdown(OUError):
    pass


class DidNotConverge(OUError):
    """The optimizer hit its iteration cap; ``best`` holds the best report so far."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class TooShort(OUError):
    pass


class ShapeMismatch(OUError, ValueError):
    pass


class InvalidConfig(OUError, ValueError):
    pass


class EmptyResult(OUError):
    pass


class ParseError(OUError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
