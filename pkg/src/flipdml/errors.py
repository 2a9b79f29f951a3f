"""Exception hierarchy.

Two families map onto the CLI exit-code contract: ``InputError`` (exit 2)
for bad data or configuration, ``NumericalError`` (exit 3) for failures
inside the estimation linear algebra.
"""


class FlipDMLError(Exception):
    """Base class for all package errors."""

    exit_code = 1

    @property
    def kind(self):
        return type(self).__name__


class InputError(FlipDMLError):
    exit_code = 2


class NumericalError(FlipDMLError):
    exit_code = 3


# data / design
class MissingColumn(InputError):
    pass


class MissingValue(InputError):
    pass


class TreatmentInconsistent(InputError):
    pass


class ZInconsistent(InputError):
    pass


class RangeViolation(InputError):
    pass


class EmptyDataset(InputError):
    pass


class DegenerateTreatment(InputError):
    pass


class TooFewClusters(InputError):
    pass


class ConfigError(InputError):
    pass


class SpecMismatch(InputError):
    pass


class RankMismatch(InputError):
    pass


# numerics
class SingularDesign(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class SingularJ(NumericalError):
    pass


class SingularRestriction(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


class ZeroSE(NumericalError):
    pass
