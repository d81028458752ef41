"""Exception hierarchy shared by all modules."""


class ExtWaveError(Exception):
    """Base class for every error raised by extwave."""


# geometry
class NonStarShaped(ExtWaveError, ValueError):
    pass


class NonPositiveRadius(ExtWaveError, ValueError):
    pass


class GridTooSmall(ExtWaveError, ValueError):
    pass


# solver
class BadP(ExtWaveError, ValueError):
    pass


class SupportTooLarge(ExtWaveError, ValueError):
    pass


class CFLViolation(ExtWaveError, ValueError):
    pass


class NonFinite(ExtWaveError, FloatingPointError):
    """Raised when the field stops being finite (a defect for defocusing data)."""


# functionals
class UnsupportedK(ExtWaveError, ValueError):
    pass


class BadExponent(ExtWaveError, ValueError):
    pass


class MissingSnapshot(ExtWaveError, KeyError):
    pass


class InsufficientData(ExtWaveError, ValueError):
    pass


class NonPositiveValues(ExtWaveError, ValueError):
    pass


# multiplier
class DomainViolation(ExtWaveError, ValueError):
    pass


class QuadratureUnderresolved(ExtWaveError, ArithmeticError):
    pass


class RegimeViolation(ExtWaveError, ValueError):
    pass


class SnapshotSpacingTooCoarse(ExtWaveError, ValueError):
    pass


# spectral
class EmptyExterior(ExtWaveError, ValueError):
    pass


class ConvergenceFailure(ExtWaveError, ArithmeticError):
    pass


# cli
class ConfigInvalid(ExtWaveError, ValueError):
    pass


class MissingArtifacts(ExtWaveError, FileNotFoundError):
    pass
