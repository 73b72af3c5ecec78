"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class NumericError(ArithmeticError):
    """A tensor contains NaN or infinite values."""

    def __init__(self, tensor, detail=""):
        self.tensor = tensor
        msg = f"non-finite values in {tensor!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class RuleParseError(ValueError):
    """A rule document is malformed or references unknown attributes."""

    def __init__(self, location, message):
        self.location = location
        super().__init__(f"{location}: {message}")


class DatasetError(ValueError):
    """A dataset manifest or record failed validation."""

    def __init__(self, message, record_id=None):
        self.record_id = record_id
        if record_id is not None:
            message = f"record {record_id!r}: {message}"
        super().__init__(message)


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, batch, message):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"epoch {epoch}, batch {batch}: {message}")
