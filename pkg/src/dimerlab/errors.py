"""Exception hierarchy shared by every module.

ValidationError subclasses map to CLI exit code 2, NumericalError
subclasses to exit code 3.
"""


class DimerlabError(Exception):
    exit_code = 1


class ValidationError(DimerlabError, ValueError):
    exit_code = 2


class NumericalError(DimerlabError, ArithmeticError):
    exit_code = 3


# lattice
class NonSimplePath(ValidationError):
    pass


class NotClosed(ValidationError):
    pass


# kasteleyn
class NonSquare(ValidationError):
    pass


class SingularMatrix(NumericalError):
    pass


# sampler
class NoMatchingExists(ValidationError):
    pass


class EmptyWindow(ValidationError):
    pass


class ConditioningError(NumericalError):
    """Conditional probabilities drifted too far from a partition of unity."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# gibbs
class InvalidSimplexPoint(ValidationError):
    pass


class DegenerateSlope(ValidationError):
    pass


class ZeroDisplacement(ValidationError):
    pass


# tgraph
class DegenerateLambda(NumericalError):
    pass


class NonEmbedding(NumericalError):
    pass


class MalformedBoundary(ValidationError):
    pass


class SingularSystem(NumericalError):
    pass


# shape
class OutsideInscribedCircle(ValidationError):
    pass


class GridTooCoarse(ValidationError):
    pass


class BranchCutCrossing(NumericalError):
    pass


class OutsideDomain(ValidationError):
    pass


# fluct
class PathsInvalid(ValidationError):
    pass


class CoincidentPoints(ValidationError):
    pass


class TooLarge(ValidationError):
    pass
