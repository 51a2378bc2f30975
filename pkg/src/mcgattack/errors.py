"""Exception hierarchy shared by every subpackage."""


class MCGError(Exception):
    """Base class for all errors raised by this package."""


class InvalidTensor(MCGError, ValueError):
    pass


class ShapeError(MCGError, ValueError):
    pass


class InvalidScores(MCGError, ValueError):
    pass


class InvalidGoal(MCGError, ValueError):
    pass


class ConfigError(MCGError, ValueError):
    pass


class DataError(MCGError, ValueError):
    pass


class NumericalError(MCGError, ArithmeticError):
    pass


class BudgetExhausted(MCGError):
    """Raised when an oracle is queried after its ledger hit the budget."""


class OracleUnavailable(MCGError):
    """The backing service failed; the query was not charged."""


class OracleProtocolError(MCGError):
    """The backing service answered with something we cannot parse."""


class HistoryEmpty(MCGError):
    pass


class EmptyResults(MCGError, ValueError):
    pass
