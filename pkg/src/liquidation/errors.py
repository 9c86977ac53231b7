"""Exception types raised across the package."""


class LiquidationError(Exception):
    """Base class for all package errors."""


class DomainError(LiquidationError, ValueError):
    """An argument lies outside the domain of the operation."""


class ModelError(LiquidationError, ValueError):
    """A model failed validation; ``problems`` lists every violation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TruncationError(DomainError):
    def __init__(self, msg, required=None):
        super().__init__(msg)
        self.required = required


class DegenerateFlowError(LiquidationError, ArithmeticError):
    """The no-arrival flow normalizer vanished."""


class ZeroLikelihoodError(LiquidationError, ValueError):
    """An observed order size has zero probability under every regime."""


class ConfigurationError(LiquidationError, ValueError):
    """Incompatible combination of policy and execution mode, or bad run config."""


class GridMismatchError(LiquidationError, ValueError):
    """Two surfaces were compared on different grids."""


class NumericalGuardError(LiquidationError, ArithmeticError):
    """A numerical safety limit was hit (non-finite values, memory guard)."""
