class ConfigurationError(ValueError):
    """Raised when parameters violate a structural or analytic constraint.

    ``violations`` lists every failed rule, not just the first one.
    """

    def __init__(self, message, violations=None):
        self.violations = list(violations) if violations else [message]
        super().__init__(message)


class DivergenceError(FloatingPointError):
    """A trajectory produced NaN or infinite coefficients."""

    def __init__(self, message, mode=None, time=None):
        self.mode = mode
        self.time = time
        super().__init__(message)


class ConvergenceError(RuntimeError):
    def __init__(self, message, history=None):
        self.history = list(history) if history is not None else []
        super().__init__(message)


class WeightCollapseError(RuntimeError):
    def __init__(self, message, ess=None, generation=None):
        self.ess = ess
        self.generation = generation
        super().__init__(message)
