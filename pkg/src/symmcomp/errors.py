class SymmcompError(Exception):
    """Base class for errors raised by the package."""


class InvalidMeshError(SymmcompError, ValueError):
    pass


class HypothesisError(SymmcompError, ValueError):
    """A standing hypothesis (H1)-(H4) or the pointwise-comparison condition is violated."""


class ConfigError(SymmcompError, ValueError):
    pass


class NonConvergenceError(SymmcompError, RuntimeError):
    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])
