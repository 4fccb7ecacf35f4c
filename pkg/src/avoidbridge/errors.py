"""Exception hierarchy shared by all modules."""


class AvoidBridgeError(Exception):
    """Base class for every error raised by this package."""


# --- increment-law construction ---

class NonzeroMean(AvoidBridgeError):
    pass


class NotNormalized(AvoidBridgeError):
    pass


class Reducible(AvoidBridgeError):
    """Support generates a proper sublattice of the integers."""


class BetaOutOfRange(AvoidBridgeError):
    pass


class AlphaOutOfRange(AvoidBridgeError):
    pass


class CannotBalanceMean(AvoidBridgeError):
    pass


class LeftTailTooHeavy(AvoidBridgeError):
    pass


# --- kernel / potential machinery ---

class WindowTooSmall(AvoidBridgeError):
    """Leaked mass exceeds the bound requested by the window policy."""


class NoConvergence(AvoidBridgeError):
    """Two independent methods disagree beyond the requested tolerance."""


class OutOfRange(AvoidBridgeError):
    pass


class NoStabilization(AvoidBridgeError):
    pass


# --- bridge engine ---

class NullEvent(AvoidBridgeError):
    """The conditioning event has probability zero (or below the underflow floor)."""


class NumericalUnderflow(AvoidBridgeError):
    pass


# --- limit-process evaluators ---

class NonpositiveTime(AvoidBridgeError):
    pass


class TimeOrder(AvoidBridgeError):
    pass


class BetaNotIntegrable(AvoidBridgeError):
    """The jump kernel integral is finite only for tail exponents below 3."""


class ToleranceNotMet(AvoidBridgeError):
    pass


class SignPattern(AvoidBridgeError):
    """A positive coordinate appears after a negative one."""


class GridTooCoarse(AvoidBridgeError):
    pass


class InverseCdfFailure(AvoidBridgeError):
    pass


# --- configuration / cache ---

class ParseError(AvoidBridgeError):
    def __init__(self, msg, line=None, column=None):
        super().__init__(msg)
        self.line = line
        self.column = column


class UnknownKey(AvoidBridgeError):
    pass


class ConstraintViolation(AvoidBridgeError):
    pass


class IoError(AvoidBridgeError):
    pass
