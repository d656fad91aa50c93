"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad or missing configuration key/value."""


class DataError(RuntimeError):
    """A corpus directory is empty, unreadable, or otherwise unusable."""


class FormatError(RuntimeError):
    """A file exists but its bytes cannot be decoded."""


class CheckpointError(RuntimeError):
    """A checkpoint file is truncated, corrupt, or version-incompatible."""


class NumericsError(RuntimeError):
    """A loss term became non-finite during optimization."""

    def __init__(self, term: str, value: float):
        super().__init__(f"loss term '{term}' is non-finite ({value})")
        self.term = term
        self.value = value
