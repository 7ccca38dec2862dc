"""Exception hierarchy shared by all modules.

``ValidationError`` subclasses map to CLI exit status 1; anything else
derived from ``TwinError`` is a runtime failure (exit status 2).
"""


class TwinError(Exception):
    pass


class ValidationError(TwinError, ValueError):
    pass


class ConfigError(ValidationError):
    pass


class UnderdeterminedError(TwinError):
    """Fewer observations than regression coefficients."""


class DegreesOfFreedomError(TwinError):
    pass


class InfeasibleRateError(TwinError, ValueError):
    pass


class InstabilityError(TwinError, ValueError):
    """Queue utilization at or above one."""


class EvidenceError(TwinError):
    """Evidence has zero probability under the network."""


class EstimationError(TwinError):
    pass
