"""Exception types shared across the package.

The class name doubles as the machine-readable error category printed by the CLI.
"""


class SbnnError(Exception):
    """Base class for every error raised by this package."""

    @property
    def category(self) -> str:
        return type(self).__name__


class ShapeMismatch(SbnnError, ValueError):
    pass


class DegenerateBatch(SbnnError, ValueError):
    pass


class StaleCache(SbnnError, RuntimeError):
    pass


class OutOfRange(SbnnError, ValueError):
    pass


class WrongMode(SbnnError, RuntimeError):
    pass


class NonFiniteLoss(SbnnError, FloatingPointError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class NonPositiveAlpha(SbnnError, ValueError):
    pass


class UnfoldableLayer(SbnnError, ValueError):
    pass


class LengthMismatch(SbnnError, ValueError):
    pass


class ChannelMismatch(SbnnError, ValueError):
    pass


class FormatError(SbnnError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ChecksumError(SbnnError, ValueError):
    pass


class ConfigError(SbnnError, ValueError):
    pass
