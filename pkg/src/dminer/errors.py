"""Exception types raised by the public API.

Everything domain-specific derives from DMinerError so callers (and the CLI)
can catch one base class.
"""


class DMinerError(Exception):
    """Base class for all errors raised by this package."""


class ZeroVectorError(DMinerError):
    """A vector with zero L2 norm was passed where a direction is required."""


class NonFiniteLossError(DMinerError):
    """A loss evaluation produced NaN or infinity."""


class InvalidSizeError(DMinerError):
    """A box width or height is non-positive or non-finite."""


class CenterOutOfGridError(DMinerError):
    """A downsampled center falls outside the output grid."""


class MalformedAnnotationsError(DMinerError):
    """An annotation file violates the documented schema."""


class CategoryOutOfRangeError(DMinerError):
    """A category index is outside [0, num_categories)."""


class DatasetMismatchError(DMinerError):
    """Two datasets expected to describe the same images do not."""


class EmptyReferenceError(DMinerError):
    """A reference category has no support in the target heatmap."""


class NotEnoughCellsError(DMinerError):
    """Fewer candidate cells exist than the number requested."""


class InvalidTemperatureError(DMinerError):
    """A softmax temperature is not strictly positive."""


class NoGroundTruthError(DMinerError):
    """Evaluation was requested against a dataset with zero annotations."""


class InvalidLevelConfigError(DMinerError):
    """A per-level group-count configuration is empty, non-positive, or increasing."""


class SceneTooCrowdedError(DMinerError):
    """More synthetic instances were requested than the grid can hold."""


class DivergedError(DMinerError):
    """Demo optimization produced a non-finite loss.

    The step index at which divergence was detected is stored in ``step``.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class DumpFormatError(DMinerError):
    """A tensor dump file violates the documented header or payload format."""
