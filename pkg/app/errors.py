"""Exceptions raised by the torus toolkit.

Every error carries an ``exit_code`` so the command-line driver can map
failures without knowing about individual classes.
"""


class TorusError(Exception):
    exit_code = 4


class ContractViolation(TorusError, ValueError):
    exit_code = 2


class NotRelativeEquilibrium(TorusError):
    pass


class NotNormallyHyperbolic(TorusError):
    pass


class NearSingularResolvent(TorusError):
    pass


class LmaxOverflow(TorusError):
    pass


class StepFailure(TorusError):
    pass


class NeutralSeed(TorusError):
    pass


class NoConvergence(TorusError):
    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SingularJacobian(TorusError):
    pass


class StepUnderflow(TorusError):
    exit_code = 3


class TrivialMultiplierDrift(TorusError):
    pass


class AmbiguousEvent(TorusError):
    pass


class SwitchFailure(TorusError):
    pass


class ExtendedSingular(TorusError):
    pass


class SmallDivisorWarning(UserWarning):
    """A nonresonant mode sits close to the resonance tolerance."""
