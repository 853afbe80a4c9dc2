"""Exception hierarchy shared by all audionav modules."""


class AudioNavError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(AudioNavError, ValueError):
    """An argument violates a documented precondition; `field` names it when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class FormatError(AudioNavError):
    """A file (WAV, checkpoint, manifest, report) is malformed or unsupported."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConfigError(AudioNavError, ValueError):
    """A configuration key holds an invalid value."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class UsageError(AudioNavError, RuntimeError):
    """An API was called in an invalid state (e.g. stepping a finished episode)."""


class TrainingError(AudioNavError, RuntimeError):
    """Optimization produced non-finite values."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
