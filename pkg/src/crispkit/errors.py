"""Exception types raised across the toolkit."""


class CrispkitError(Exception):
    """Base class for all toolkit errors."""


class InvalidConfigError(CrispkitError):
    """A configuration value is out of range, of the wrong type, or unknown."""


# embedding-level errors

class ZeroVectorError(CrispkitError):
    """A vector with (near-)zero norm cannot be normalized."""


class DimensionMismatchError(CrispkitError):
    """Two embedding batches do not share a feature dimension."""


class EmptyTargetRowError(CrispkitError):
    """A softmax cross-entropy row (or an item's positive set) has no positive."""


# loss-level errors

class NonBijectivePairingError(CrispkitError):
    """The standard objective needs a one-to-one ground/aerial pairing.

    Batches where several ground items share an aerial item must go through
    the many-to-one objective instead.
    """


class NonPositiveTemperatureError(CrispkitError):
    """Softmax temperature divisor must be > 0."""


class MissingCoordinatesError(CrispkitError):
    """Positive mining needs per-item coordinates that were not provided."""


class CropLargerThanImageError(CrispkitError):
    """Requested crop does not fit inside the raster."""


# geo-split errors

class InvalidCoordinateError(CrispkitError):
    """Latitude/longitude outside [-90, 90] x [-180, 180] or non-finite."""


class EmptyBlockSetError(CrispkitError):
    """Block assignment requires at least one block."""


class UncoveredBlockError(CrispkitError):
    """An observation falls in a block with no split assignment."""


class EmptySetError(CrispkitError):
    """Subsampling requires a nonempty source set."""


# training errors

class ShapeMismatchError(CrispkitError):
    """Parameter/gradient/buffer shapes disagree."""


class InvalidTargetError(CrispkitError):
    """Class target index outside the logit range."""


class EmptySubsetError(CrispkitError):
    """Fine-tuning/probing requires at least one labeled example."""


# metric errors

class MissingGroupError(CrispkitError):
    """Group-averaged accuracy needs a group id per sample."""


class MissingBinsError(CrispkitError):
    """Binned accuracy needs class frequency bins."""


class UnsupportedFormatError(CrispkitError):
    """Report serialization format is not one of the supported ones."""


# clustering errors

class TooFewPointsError(CrispkitError):
    """k-means needs at least k points."""
