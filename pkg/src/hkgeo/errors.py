"""Exception hierarchy shared by all modules."""


class HKError(Exception):
    """Base class for all library errors."""


class InputError(HKError, ValueError):
    """Invalid user input (maps to CLI exit code 2)."""


class NumericalError(HKError, ArithmeticError):
    """A numerical procedure could not deliver a trustworthy result (exit code 3)."""


class DimensionMismatch(InputError):
    pass


class NonpositiveParameter(InputError):
    pass


class IndexOutOfRange(InputError, IndexError):
    pass


class TooLarge(InputError):
    pass


class EmptyGrid(InputError):
    pass


class NotAPartition(InputError):
    pass


class UndefinedWeight(InputError):
    pass


class OutsideDomain(InputError):
    pass


class DomainError(InputError):
    pass


class DegenerateGeodesic(InputError):
    """Positive radii separated by at least pi/2: no HK-relevant cone geodesic."""


class InfeasiblePotential(NumericalError):
    pass


class VertexRegion(NumericalError):
    """The dilation factor 1 + 2*tau*xi is not positive."""


class NoConvergence(NumericalError):
    def __init__(self, iterations, residual, message=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            message or f"no convergence after {iterations} iterations (residual {residual:.3e})"
        )


class NotOptimal(NumericalError):
    pass


class OrderViolation(NumericalError):
    pass


class LeftContactSet(NumericalError):
    pass


class DegenerateJacobian(NumericalError):
    pass


class McCannDegenerate(NumericalError):
    pass


class RecessionInfinite(NumericalError):
    """A singular part meets an infinite recession constant: the functional is +inf."""
