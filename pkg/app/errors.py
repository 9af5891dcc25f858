"""Exception hierarchy shared by the network, services and CLI."""


class BrightVAEError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(BrightVAEError):
    """Invalid configuration: bad field values, channel widths or shapes."""


class PreconditionError(BrightVAEError):
    """An input violates an operation's contract (divisibility, value range, size)."""


class NumericError(BrightVAEError):
    """Non-finite values where finite ones are required."""


class TrainingError(NumericError):
    """Training produced a non-finite loss term."""

    def __init__(self, term: str, epoch: int, value: float):
        self.term = term
        self.epoch = epoch
        self.value = value
        super().__init__(f"Non-finite '{term}' loss at epoch {epoch}: {value}")


class DatasetError(BrightVAEError):
    """Missing, orphaned or undecodable dataset files."""


class CheckpointError(BrightVAEError):
    """Checkpoint file is missing, corrupt or of an unknown schema."""
