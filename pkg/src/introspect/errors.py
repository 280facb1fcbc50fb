"""Exception hierarchy shared by every module.

Each class carries the process exit code the command line maps it to.
"""


class IntrospectError(Exception):
    exit_code = 4


class UsageError(IntrospectError):
    exit_code = 2


class DataError(IntrospectError):
    """Unreadable or malformed input data (files, manifests, images)."""

    exit_code = 3


class FormatError(DataError):
    """A binary or text container failed to parse."""


class BoundsError(IntrospectError):
    """A window does not lie inside its image."""


class TooSmallInputError(IntrospectError):
    """An image is smaller than the extractor's receptive field."""


class ShapeError(IntrospectError):
    """Dimension mismatch between arrays, weights or layers."""


class TrainingError(IntrospectError):
    pass


class ModelLoadError(IntrospectError):
    pass
