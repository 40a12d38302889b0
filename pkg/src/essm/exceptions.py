"""Exception hierarchy for the eSSM package."""


class ESSMError(Exception):
    """Base class for every error raised by this package."""


class InvalidDimensionError(ESSMError, ValueError):
    pass


class InvalidRangeError(ESSMError, ValueError):
    pass


class InvalidShapeError(ESSMError, ValueError):
    pass


class InvalidStepError(ESSMError, ValueError):
    pass


class InvalidLengthError(ESSMError, ValueError):
    pass


class InvalidStateError(ESSMError, ValueError):
    pass


class InvalidHeadCountError(ESSMError, ValueError):
    pass


class InvalidWidthError(ESSMError, ValueError):
    pass


class SingularMatrixError(ESSMError, ArithmeticError):
    pass


class NotDiagonalizableError(ESSMError, ArithmeticError):
    pass


class NumericFailureError(ESSMError, ArithmeticError):
    pass


class TrainingDivergedError(ESSMError, RuntimeError):
    pass
