"""Exception hierarchy shared by every stage of the solver."""


class CyFormsError(Exception):
    """Base class for all package errors."""


class DegreeError(CyFormsError, ValueError):
    """Form degrees are incompatible with the requested operation."""


class NotComplexType(CyFormsError, ValueError):
    """A real 3-form is not stable of complex type (lambda >= 0)."""


class UnsupportedDimension(CyFormsError, ValueError):
    """Complex dimension outside the supported range."""


class NotCohomologous(CyFormsError, ValueError):
    """Target form carries a harmonic (zero-mode) component."""


class NotInImage(CyFormsError, ValueError):
    """Target form is not in the image of dd^s to within tolerance."""


class MongeAmpereError(CyFormsError, RuntimeError):
    """Base class for Monge-Ampere solver failures."""


class MaxIterations(MongeAmpereError):
    pass


class PositivityLost(MongeAmpereError):
    pass


class SingularOmega(CyFormsError, RuntimeError):
    """Some pointwise 2-form of the Moser family is degenerate."""


class JacobianDegenerate(CyFormsError, RuntimeError):
    """Flow Jacobian determinant dropped below the admissible floor."""


class OuterDiverged(CyFormsError, RuntimeError):
    """The density-matching fixed point iteration failed to converge."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class StageError(CyFormsError, RuntimeError):
    """Wraps an inner failure with the name of the pipeline stage."""

    def __init__(self, stage, error):
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error


class ConfigError(CyFormsError, ValueError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass
