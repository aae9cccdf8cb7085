"""Exception types.  CLI exit codes hang off ``exit_code``."""


class IODCBFError(Exception):
    exit_code = 1


class ValidationError(IODCBFError, ValueError):
    exit_code = 2


class ShapeMismatch(ValidationError):
    pass


class DepthTooLarge(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class BadBounds(ValidationError):
    pass


class ZeroRow(ValidationError):
    pass


class NumericalError(IODCBFError):
    exit_code = 3


class ResidualTooLarge(NumericalError):
    pass


class InconsistentData(NumericalError):
    """Predictor residual too large: noisy data or T_ini below the lag."""


class EmptySet(NumericalError):
    pass


class FilterInfeasible(NumericalError):
    pass


class HistoryMismatch(NumericalError):
    pass


class PersistencyOfExcitationError(NumericalError):
    pass


class NotConverged(IODCBFError):
    exit_code = 4

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
