"""Exception hierarchy shared across the toolbox.

Every contract violation raises a named error so callers can catch a
specific failure mode instead of a bare ValueError.
"""


class DotkitError(Exception):
    """Base class for all toolbox errors."""


# --- tensor core -------------------------------------------------------------

class DimMismatch(DotkitError):
    """Shape, coordinate length or dimension layout does not fit."""


class DuplicateDim(DotkitError):
    """Dimension names must be unique within one tensor."""


class BadUnit(DotkitError):
    """Unit expression does not parse or uses an unknown symbol."""


class UnknownCoord(DotkitError):
    """Requested coordinate name is not attached to the tensor."""


class UnknownDim(DotkitError):
    """Requested dimension name does not exist."""


class UnalignedSelector(DotkitError):
    """Boolean selector is not aligned with the coordinate's dimension."""


class UnitMismatch(DotkitError):
    """Operation requires compatible unit dimensionality."""


class CoordMismatch(DotkitError):
    """Same-named coordinates carry conflicting values."""


# --- io ----------------------------------------------------------------------

class IoError(DotkitError):
    """Filesystem-level failure while writing or reading a container."""


class ManifestError(DotkitError):
    """Container manifest is missing, malformed or inconsistent."""


class ChecksumError(DotkitError):
    """Stored sha256 does not match the data file."""


class ParseError(DotkitError):
    """Malformed CSV input."""


class UnknownTrialType(DotkitError):
    """Strict event renaming hit a mapping key that does not occur."""


class SchemaError(DotkitError):
    """Loaded array does not satisfy the expected dims/coords schema."""


# --- quality -----------------------------------------------------------------

class MissingOptode(DotkitError):
    """A channel references a source/detector label absent from geometry."""


class NeedTwoWavelengths(DotkitError):
    """Metric requires exactly two wavelengths."""


class WindowTooShort(DotkitError):
    """Metric window contains too few samples."""


class TooShort(DotkitError):
    """Time series has too few samples for this operation."""


# --- preproc -----------------------------------------------------------------

class NonPositiveAmplitude(DotkitError):
    """Raw amplitudes must be strictly positive before the log transform."""


class SingularExtinction(DotkitError):
    """Extinction coefficient matrix is rank deficient."""


class BadBand(DotkitError):
    """Invalid frequency band for filtering."""


class IrregularSampling(DotkitError):
    """Operation requires a (near) regular time grid."""


class ZeroWeights(DotkitError):
    """Channel weights sum to zero."""


class NoMatchingEvents(DotkitError):
    """No stimulus events match the requested trial types / bounds."""


class BadSlice(DotkitError):
    """Requested relative-time slice lies outside the epoch range."""


# --- glm ---------------------------------------------------------------------

class EmptyStim(DotkitError):
    """Stimulus table contains no usable events."""


class BadParam(DotkitError):
    """Invalid parameter for a basis or regressor builder."""


class NoShortChannels(DotkitError):
    """Short-channel regressor needs at least one short channel."""


class RankDeficient(DotkitError):
    """Design matrix is rank deficient.

    Carries the labels of the offending regressors in ``labels``.
    """

    def __init__(self, msg, labels=()):
        super().__init__(msg)
        self.labels = list(labels)


class NonPSDCov(DotkitError):
    """Covariance matrix is not positive semi-definite."""


# --- image reconstruction ----------------------------------------------------

class BadSeed(DotkitError):
    """Seed vertex index out of range."""


class EmptySurface(DotkitError):
    """Surface has no vertices."""


class SingularSystem(DotkitError):
    """Regularized measurement matrix is not SPD (should not happen)."""


class ChannelMismatch(DotkitError):
    """Measurement channels do not match the sensitivity matrix."""


class NoParcelCoord(DotkitError):
    """Image carries no parcel coordinate on its vertex dimension."""


# --- sim ---------------------------------------------------------------------

class BadRange(DotkitError):
    """Invalid random-range specification."""


class OnsetOutOfRange(DotkitError):
    """Artifact onset outside the time axis."""


class UnknownGenerator(DotkitError):
    """Timing table references an artifact type without a generator."""


class BadConfig(DotkitError):
    """Invalid toy-dataset configuration."""


class GridMismatch(DotkitError):
    """Time grids of combined series do not match."""


# --- decomposition -----------------------------------------------------------

class NonConvergence(DotkitError):
    """Iterative fit failed to converge.

    ``component`` names the component index that failed.
    """

    def __init__(self, msg, component=None):
        super().__init__(msg)
        self.component = component


class BadReg(DotkitError):
    """Regularization parameter outside its admissible range."""


class ShapeMismatch(DotkitError):
    """Datasets entering a joint decomposition have incompatible shapes."""


class FeatureMismatch(DotkitError):
    """Transform input does not match the features seen during fit."""


class ShiftOutOfRange(DotkitError):
    """Temporal embedding shift is not realizable on this time grid."""


class DegenerateCs(DotkitError):
    """Latent source covariance is degenerate."""


# --- cli ---------------------------------------------------------------------

class ConfigError(DotkitError):
    """Pipeline configuration failed validation before execution."""


class StepError(DotkitError):
    """A pipeline step failed during execution.

    ``step`` carries the name of the failing step.
    """

    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step
