"""Error taxonomy shared by all l2flow modules.

Every failure mode that callers are expected to branch on gets its own class.
The CLI maps these onto exit codes (see l2flow.cli): configuration problems
exit 2, detected singularities exit 3 when the run declared an expectation of
long-time existence, invariant violations exit 4, and numerical failures
exit 5.
"""

from __future__ import annotations


class L2FlowError(Exception):
    """Base class for all package errors."""


class ValidationError(L2FlowError):
    """Input fails a documented precondition or configuration constraint."""


class NonPositiveDensity(ValidationError):
    """phi <= 0 somewhere, or psi <= 0 at an interior node."""


class BoundaryViolation(ValidationError):
    """SphereSO3 pole conditions (psi = 0, psi_s -> -/+1) fail beyond tolerance."""


class GridError(ValidationError):
    """Bad grid: non-monotone x, too few nodes, or non-uniform spacing."""


class ShapeMismatch(ValidationError):
    """Arrays or states that must live on one grid/shape do not."""


class UnsupportedState(ValidationError):
    """A product state outside the supported configuration for the request."""


class DegenerateFiber(L2FlowError):
    """Interior psi fell below the degeneracy floor (numerical pinching)."""


class PastSingularTime(L2FlowError):
    """A closed-form solution was evaluated at or beyond its singular time."""


class StepSizeUnderflow(L2FlowError):
    """The adaptive ODE integrator could not proceed at the requested tolerance."""


class StepUnderflow(L2FlowError):
    """Explicit PDE stepping halved dt below the hard floor without acceptance."""


class SingularMass(L2FlowError):
    """A diagonal entry of the Riesz mass matrix is below 1e-14."""


class ConvergenceFailure(L2FlowError):
    """Iterative eigenvalue solve did not reach the residual target."""


class ZeroFunction(ValidationError):
    """A Rayleigh quotient was requested for a function with zero L2 norm."""


class MissingVelocity(ValidationError):
    """A trajectory lacks stored velocities that the backward flow requires."""


class ParseError(ValidationError):
    """Malformed configuration or snapshot text.

    Carries the 1-based line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
