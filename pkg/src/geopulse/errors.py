"""Exception types raised across the pipeline."""


class GeopulseError(Exception):
    """Base class for all package errors."""


class ConfigError(GeopulseError, ValueError):
    """Invalid configuration (unknown timezone, bad threshold, ...)."""


class InsufficientData(GeopulseError, ValueError):
    """Not enough observations for the requested computation."""


class PatternMissing(GeopulseError, KeyError):
    """No trained SlotPattern exists for the requested (weekday, slot)."""


class PatternFormatError(GeopulseError, ValueError):
    """A pattern file failed version or schema validation.

    ``path`` points at the offending field in JSONPath-ish notation,
    e.g. ``$.slots[3].references[0].stats.q1``.
    """

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path
