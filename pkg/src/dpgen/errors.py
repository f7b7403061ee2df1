"""Exception types shared across the package.

The CLI maps these onto exit codes: DataFormatError -> 3, numeric failures
(TrainingDiverged, DomainError escaping a pipeline) -> 4.
"""

from __future__ import annotations


class DpgenError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(DpgenError):
    """Operands of a tensor op do not have compatible shapes."""

    def __init__(self, op: str, shape_a, shape_b):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}")


class DomainError(DpgenError):
    """An op was applied outside its mathematical domain (log/sqrt of negatives, ...)."""


class DataFormatError(DpgenError):
    """A file or value does not conform to the documented interchange format."""


class DegenerateDataError(DpgenError):
    """Input data makes the requested statistic undefined (zero variance, all-zero distances)."""


class TrainingDivergedError(DpgenError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, value: float):
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, step {step}")
