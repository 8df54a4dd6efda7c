"""Exception types raised by the toolkit."""


class PassivityError(Exception):
    """Base class for all errors raised by gpassivity."""


class DimensionError(PassivityError, ValueError):
    """Operator shapes or tensor-factor dimensions do not match."""


class NonHermitianError(PassivityError, ValueError):
    """An operator expected to be Hermitian is not, beyond tolerance."""


class NotADensityMatrixError(PassivityError, ValueError):
    """Trace or positivity requirements of a density matrix are violated."""


class SingularStateError(PassivityError, ValueError):
    """A state has a zero (or negative) eigenvalue where full rank is required."""

    def __init__(self, message: str, eigenvalue: float | None = None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class DomainError(PassivityError, ValueError):
    """An eigenvalue lies outside the domain of the requested function."""


class InfeasibleCorrelationError(PassivityError, ValueError):
    """The requested coherence would make the state non-positive."""

    def __init__(self, message: str, bound: float):
        super().__init__(message)
        self.bound = bound


class PauliTermError(PassivityError, ValueError):
    """A Pauli term references an invalid or repeated site."""


class ChannelError(PassivityError, ValueError):
    """A channel specification (probabilities, unitaries, projectors) is malformed."""


class IntegrationError(PassivityError, RuntimeError):
    """The Lindblad integrator's stability guard or trace check failed."""


class PreconditionError(PassivityError, ValueError):
    """A physical precondition of an analysis routine does not hold."""


class InfiniteDivergenceError(PassivityError, ValueError):
    """The first argument of a relative entropy has weight outside the second's support."""


class InvariantViolation(PassivityError, AssertionError):
    """An identity that holds by construction failed numerically beyond tolerance."""
