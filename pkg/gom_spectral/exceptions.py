# -*- encoding: utf-8 -*-
"""Exceptions for gom_spectral related errors"""

EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


class GomError(Exception):
    """Base exception for every failure raised by the package"""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message, **kwargs):
        self.message = message
        self.details = kwargs.pop("details", {})
        super(GomError, self).__init__(str(self))

    def __str__(self):
        return self.message


class UsageError(GomError):
    """Bad flags or arguments (K out of range, invalid tuning parameters...)"""

    exit_code = EXIT_USAGE


class ValidationError(GomError):
    """Input data or files violate a structural invariant"""

    exit_code = EXIT_VALIDATION

    def __init__(self, message, **kwargs):
        self.location = kwargs.pop("location", None)
        self.violations = kwargs.pop("violations", [])
        super(ValidationError, self).__init__(message, **kwargs)

    def __str__(self):
        if self.location is None:
            return self.message
        return "%s (at %s)" % (self.message, self.location)


class ScenarioError(ValidationError):
    """Simulation scenario or bench suite is malformed or self-contradictory"""


class NumericalError(GomError):
    """The estimator cannot produce a meaningful answer for this input"""

    exit_code = EXIT_NUMERICAL


class DegenerateInputError(NumericalError):
    """All candidate rows collapsed to zero norm before K vertices were found"""


class SingularVertexError(NumericalError):
    """The selected vertex rows U[S, :] are singular or badly conditioned"""

    def __init__(self, message, **kwargs):
        self.condition_number = kwargs.pop("condition_number", None)
        super(SingularVertexError, self).__init__(message, **kwargs)


class DegenerateBlockError(NumericalError):
    """A polytomous (block, profile) slice has no mass left after clipping"""

    def __init__(self, block, profile, **kwargs):
        self.block = block
        self.profile = profile
        super(DegenerateBlockError, self).__init__(
            "item block %d, profile %d sums to 0 after clipping" % (block, profile),
            **kwargs
        )


class RankDeficiencyError(NumericalError):
    """The population mean matrix has rank below K"""
