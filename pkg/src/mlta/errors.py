"""Exception hierarchy.

The CLI maps ``DataError`` subclasses to exit code 2 and ``NumericalError``
subclasses to exit code 3.
"""


class MltaError(Exception):
    """Base class for every error raised by this package."""


class DataError(MltaError, ValueError):
    """Input data is malformed or violates a precondition."""


class NumericalError(MltaError, ArithmeticError):
    """A computation produced non-finite values or an invalid shape."""


class EmptyAfterCleaning(DataError):
    pass


class LengthMismatch(DataError):
    pass


class MixedLabels(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ParseError(DataError):
    pass


class TooFewSamples(DataError):
    pass


class BadGroupSize(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class ShapeMismatch(NumericalError):
    def __init__(self, op: str, *shapes):
        dims = ", ".join("x".join(str(d) for d in s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes ({dims})")
        self.op = op
        self.shapes = shapes


class NonScalarLoss(NumericalError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class NonFiniteValue(NumericalError):
    pass
