"""Exception types shared across the package."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """A precondition on user-supplied data was violated."""


class DegenerateMaskError(InvalidInputError):
    """Inpainting was asked to fill the whole image; nothing anchors the fill."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite or exploded during training."""

    def __init__(self, epoch: int, loss: float | None = None) -> None:
        self.epoch = epoch
        self.loss = loss
        detail = f" (loss {loss:.4g})" if loss is not None else ""
        super().__init__(f"training diverged at epoch {epoch}{detail}")


class LoopIterationError(RuntimeError):
    """A model, inpainter, or repair fault inside the regression loop."""

    def __init__(self, iteration: int, cause: BaseException) -> None:
        self.iteration = iteration
        self.__cause__ = cause
        super().__init__(f"iteration {iteration}: {cause}")


class ExternalInpainterError(RuntimeError):
    """The configured external inpainting command failed."""


class MissingArtifactError(FileNotFoundError):
    """A pipeline stage needs an artifact an earlier stage has not produced."""


class ConfigError(ValueError):
    """One or more invalid config entries; all problems are collected."""

    def __init__(self, problems: list[str]) -> None:
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
