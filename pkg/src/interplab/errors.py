"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates its documented precondition."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class NumericError(ArithmeticError):
    """A non-finite value reached a computation that requires finite input."""


class AssumptionError(ValueError):
    """A trained model violates the bias-gap assumption (top bias is not unique)."""


class HypothesisError(ValueError):
    """An analysis was requested outside the parameter range where its claim holds."""


class NonDifferentiableError(ValueError):
    """Gradient requested at a point where the objective is not differentiable."""


class DivergenceError(RuntimeError):
    """Training produced non-finite loss or parameters.

    ``last_finite`` carries the last finite model (or whatever snapshot the
    caller found useful) so runs can be inspected after the failure.
    """

    def __init__(self, message, last_finite=None, time=None):
        super().__init__(message)
        self.last_finite = last_finite
        self.time = time
