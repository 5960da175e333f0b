from __future__ import annotations

from pathlib import Path


class LensfieldError(Exception):
    """
    Root of every error raised deliberately by this package.
    """


class DomainError(LensfieldError, ValueError):
    """
    Raised when an argument lies outside the domain an operation is defined on, like a non-positive focus distance.
    """


class ShapeMismatchError(LensfieldError, ValueError):
    """
    Raised when array arguments, typically cotangents, don't have the shape their forward counterpart demands.
    """


class InvariantViolation(LensfieldError, RuntimeError):
    """
    Raised when an internal invariant that the algorithms guarantee by construction is found broken.
    """


class DatasetFormatError(LensfieldError, ValueError):
    """
    Raised when a dataset, checkpoint or configuration file can't be parsed or fails validation.

    Attributes:
        path (Path | None): File that failed to parse, if known.

        field (str | None): Name of the offending field or record inside that file, if known.
    """

    def __init__(self, message: str, *, path: Path | str | None = None, field: str | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self.field = field
        location = f"{self.path}" if self.path is not None else "<memory>"
        if field is not None:
            location += f" [{field}]"
        super().__init__(f"{location}: {message}")


class DivergenceError(LensfieldError, ArithmeticError):
    """
    Raised when an optimisation step produces a non-finite loss.

    Attributes:
        step (int): Global iteration index at which the loss diverged.

        stage (int): Optimisation stage, 1 for pinhole pretraining and 2 for the joint defocus stage.
    """

    def __init__(self, step: int, stage: int, loss: float) -> None:
        self.step = step
        self.stage = stage
        self.loss = loss
        super().__init__(f"Stage {stage} loss became non-finite ({loss}) at step {step}.")
