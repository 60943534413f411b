"""Exception hierarchy shared by every stage of the pipeline."""


class NdtError(Exception):
    """Base class for package errors."""


class InvalidInputError(NdtError, ValueError):
    """An argument violates an operation precondition."""


class ConfigError(NdtError):
    """Experiment or scene configuration is malformed.

    ``field`` holds the dotted path of the offending entry when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class DataError(NdtError):
    """A dataset container or checkpoint is unreadable or inconsistent."""


class NumericalError(NdtError):
    """Training diverged or produced non-finite values."""
