"""Exception types shared across the package."""


class GradKernelError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(GradKernelError):
    """Vector/matrix sizes do not agree with the operator or kernel."""


class DomainError(GradKernelError):
    """Scalar function evaluated outside its domain."""


class OrderError(GradKernelError):
    """Derivative order above the supported maximum (4)."""


class NonDifferentiable(GradKernelError):
    """Kernel lacks the derivatives required at the evaluation point."""


class UnsupportedNode(GradKernelError):
    """No structured rule for this node kind in the requested derivative order."""


class NotConverged(GradKernelError):
    """Iterative solver did not reach the requested tolerance."""


class NotPSD(GradKernelError):
    """Matrix failed a positive-semidefiniteness check (negative pivot)."""


class DegenerateVariance(GradKernelError):
    """Predictive standard deviation numerically zero."""


class LineSearchFailure(GradKernelError):
    """Line search inside an optimizer failed; best iterate is returned."""


class UnknownName(GradKernelError):
    """Unrecognized name (test function, kernel, strategy)."""


class ParseError(GradKernelError):
    """Kernel expression text could not be parsed.

    Carries the character position of the failure.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position
