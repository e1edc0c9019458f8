"""Exception hierarchy shared by every uvapm module."""


class UVAPMError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(UVAPMError, ValueError):
    pass


class InsufficientDataError(UVAPMError, ValueError):
    pass


class InvalidRankError(UVAPMError, ValueError):
    pass


class FormatError(UVAPMError):
    """Malformed or unsupported file.

    ``section`` names the part of the file that failed to parse and
    ``offset`` the byte offset at which it was expected, when known.
    """

    def __init__(self, message, section=None, offset=None):
        self.section = section
        self.offset = offset
        parts = [message]
        if section is not None:
            parts.append(f"section={section}")
        if offset is not None:
            parts.append(f"offset={offset}")
        super().__init__(" ".join(parts) if len(parts) == 1 else f"{message} ({', '.join(parts[1:])})")


class EmptyMaskError(UVAPMError, ValueError):
    pass


class ConfigError(UVAPMError, ValueError):
    pass


class OptimizerError(UVAPMError, FloatingPointError):
    def __init__(self, message, group=None):
        self.group = group
        super().__init__(message)


class FitError(UVAPMError):
    def __init__(self, message, stage=None, iteration=None):
        self.stage = stage
        self.iteration = iteration
        super().__init__(f"{message} (stage={stage}, iteration={iteration})")
