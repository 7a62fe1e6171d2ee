"""Exception hierarchy shared by every lipauth module."""


class LipAuthError(Exception):
    """Base class for all errors raised by lipauth."""


class UsageError(LipAuthError):
    """An operation was called outside its preconditions."""


class DimensionError(LipAuthError, ValueError):
    """Tensor shapes are incompatible."""


class ConfigError(LipAuthError, ValueError):
    """A configuration violates its invariants."""


class DegenerateLandmarksError(LipAuthError, ValueError):
    """Landmarks collapse to zero width or height."""


class OutOfFrameError(LipAuthError, ValueError):
    """A crop box does not intersect the frame."""


class FrameError(LipAuthError):
    """A per-frame preprocessing failure, tagged with the frame index."""

    def __init__(self, index, cause):
        super().__init__(f"frame {index}: {cause}")
        self.index = index
        self.cause = cause


class FormatError(LipAuthError, ValueError):
    """A binary or text file is corrupt or has the wrong magic."""


class ProtocolViolationError(LipAuthError):
    """Evaluation split overlaps the training clients (open-set violated)."""


class NonFiniteLossError(LipAuthError, FloatingPointError):
    """Training produced a NaN/Inf loss."""

    def __init__(self, iteration, batch_seed, value):
        super().__init__(
            f"non-finite loss {value!r} at iteration {iteration} (batch seed {batch_seed})"
        )
        self.iteration = iteration
        self.batch_seed = batch_seed
        self.value = value


class ConflictError(LipAuthError):
    """An enrollment already exists for this (client, phrase)."""


class NotEnrolledError(LipAuthError, KeyError):
    """No enrollment exists for this (client, phrase)."""

    def __str__(self):
        return str(self.args[0]) if self.args else "not enrolled"


class ModelMismatchError(LipAuthError):
    """Store and model fingerprints differ."""
