"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 configuration, 3 physics precondition, 4 protocol failure, 5 internal
invariant breach.
"""


class QGTError(Exception):
    exit_code = 5


# -- configuration / input --------------------------------------------------

class ConfigError(QGTError, ValueError):
    exit_code = 2


class UnknownModel(ConfigError):
    pass


class InvalidSetting(ConfigError):
    pass


class IndexOutOfRange(ConfigError, IndexError):
    pass


class InvalidPulse(ConfigError):
    pass


# -- numerical kernel -------------------------------------------------------

class NotHermitian(QGTError, ValueError):
    exit_code = 3


class NonConvergence(QGTError, ArithmeticError):
    exit_code = 5


class TooShort(QGTError, ValueError):
    exit_code = 3


# -- physics preconditions --------------------------------------------------

class NotTwoBand(QGTError):
    exit_code = 3


class GapCollapse(QGTError):
    exit_code = 3


class AlignmentSingular(QGTError):
    exit_code = 3


class StepTooLarge(QGTError, ValueError):
    exit_code = 3


class AsymptoticViolation(QGTError):
    exit_code = 3


# -- protocol failures ------------------------------------------------------

class ProtocolError(QGTError):
    exit_code = 4


class NoPeaks(ProtocolError):
    pass


class NoPlan(ProtocolError):
    pass


class PlanMismatch(ProtocolError):
    pass


class DegenerateRabi(ProtocolError):
    pass


class InconsistentBases(ProtocolError):
    pass


class FitPoor(ProtocolError):
    pass


class InvariantBreach(QGTError):
    exit_code = 5


class DetunedNotClosedForm(UserWarning):
    """Emitted when a detuned pair rotation falls back to numeric propagation."""
