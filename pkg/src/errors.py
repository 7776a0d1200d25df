"""
Exceptions raised by the mixclass library.

Every exception carries the exit code the command line interface reports for it.
"""


class MixclassError(Exception):
    """
    Base class for all library errors
    """
    exit_code = 1


# Configuration errors (exit code 2)
# ================================================================
class ConfigError(MixclassError, ValueError):
    """
    Invalid parameters, config files or input files
    """
    exit_code = 2


class BudgetExceededError(ConfigError):
    """
    An exhaustive verification would exceed the configured number of membership checks
    """


class MalformedDataError(ConfigError):
    """
    A data file contains rows that cannot be parsed
    """
    def __init__(self, message: str, line_numbers: list = None):
        super().__init__(message)
        self.line_numbers = list(line_numbers or [])


# Modelling assumptions (exit code 3)
# ================================================================
class AssumptionViolatedError(MixclassError):
    """
    The instance does not satisfy the separability assumption needed for recovery
    """
    exit_code = 3


# Estimation failures (exit code 4)
# ================================================================
class EstimationFailureError(MixclassError):
    """
    The oracle answers could not be turned into a consistent estimate
    """
    exit_code = 4


class ConstructionFailureError(EstimationFailureError):
    """
    A randomly drawn set family lacks a row with the required isolation property
    """


class InconsistencyError(EstimationFailureError):
    """
    Estimated counts contradict each other
    """


class InsufficientDataError(EstimationFailureError):
    """
    Not enough informative queries or data to produce an estimate
    """
