"""Exception types shared across the package."""


class FwmarketError(Exception):
    """Base class for package errors."""


class ConsistencyError(FwmarketError):
    """A partial outcome, settlement event, or model admits no valid payoff vector."""


class BoundaryError(FwmarketError):
    """A price vector sits on the simplex boundary where the conjugate gradient diverges."""


class ParseError(FwmarketError):
    """A model or CSV input file is malformed.

    Attributes
    ----------
    path : str
        File being parsed.
    line : int
        1-based line number of the offending record (0 when not line-addressable).
    """

    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
