"""Shared exception types and process exit codes."""

EXIT_OK = 0
EXIT_CONTRACT = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class NumericError(ContractError):
    """Non-finite values entered a numeric routine."""


class FileFormatError(ValueError):
    """A binary artifact file is malformed."""


class MagicMismatchError(FileFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(FileFormatError):
    """File payload is shorter than its header declares."""


class NonFiniteDataError(FileFormatError):
    """File payload contains NaN or infinite values."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
