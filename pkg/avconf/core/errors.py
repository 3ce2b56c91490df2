"""
Exception hierarchy.

Every error derives from ``ValueError`` (or ``RuntimeError`` for numerical aborts) so
plain ``except ValueError`` callers keep working.
"""

from typing import List, Optional


class AvconfError(Exception):
    """Root of all avconf errors."""


class DimensionError(AvconfError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(AvconfError, ValueError):
    """A scalar argument is out of its valid range."""


class InputError(AvconfError, ValueError):
    """Input data violates an operation's precondition."""


class UsageError(AvconfError, ValueError):
    """An API or command was called in an unsupported way."""


class ConfigError(AvconfError, ValueError):
    """Configuration is invalid."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(AvconfError, RuntimeError):
    """NaN or otherwise unusable numbers were produced."""


class InfeasibleAlignmentError(AvconfError, ValueError):
    """No CTC alignment of the target fits in the available frames."""

    def __init__(self, num_frames: int, required: int):
        self.num_frames = num_frames
        self.required = required
        self.loss = float("inf")
        super().__init__(
            f"CTC target needs at least {required} frames, got {num_frames} (loss = +inf)"
        )


class InstanceTooLargeError(AvconfError, ValueError):
    """Brute-force enumeration refused: too many paths."""


class ManifestMismatchError(AvconfError, ValueError):
    """Checkpoint manifests (or a manifest and a model) disagree."""

    def __init__(self, message: str, names: Optional[List[str]] = None):
        self.names = list(names or [])
        super().__init__(message)


class DivergenceError(AvconfError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"loss became {loss} at step {step}")
