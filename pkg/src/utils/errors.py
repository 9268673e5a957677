# src/utils/errors.py

from typing import Any


class InvalidStateError(ValueError):
    """Raised when a (delta, l, b) triple lies outside the truncated state space."""


class DisallowedActionError(ValueError):
    """Raised when an action is not in the eligible set of a state."""


class ConvergenceError(RuntimeError):
    """
    Raised when an iterative computation fails to reach its tolerance.

    Carries the last residual and the number of iterations performed so the
    caller can judge whether the chain is reducible or periodic.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class BracketingError(RuntimeError):
    """Raised when the dual search cannot find a multiplier meeting the budget."""

    def __init__(self, message: str, last_lambda: float, last_tx: float):
        super().__init__(f"{message} (last lambda={last_lambda:g}, D={last_tx:.6f})")
        self.last_lambda = last_lambda
        self.last_tx = last_tx


class NonMonotonePolicyError(ValueError):
    """Raised when a policy cannot be compressed into threshold form."""

    def __init__(self, message: str, slice_key: Any):
        super().__init__(f"{message}: slice {slice_key}")
        self.slice_key = slice_key


class GridPointError(RuntimeError):
    """Wraps any failure of a grid point with the tag of the point that failed."""

    def __init__(self, message: str, tag: str):
        super().__init__(f"[{tag}] {message}")
        self.message = message
        self.tag = tag

    def __reduce__(self):
        return type(self), (self.message, self.tag)
