"""Exception hierarchy.

Three top-level categories map to CLI exit codes: validation problems
(exit 2), numerical failures (exit 3), and I/O failures (exit 4).
"""


class FrodoError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(FrodoError):
    """Input data or configuration violates a contract."""


class NumericalError(FrodoError):
    """A numerical procedure failed irrecoverably."""


class IoError(FrodoError):
    """Reading or writing a file failed."""


# -- tensor / file format --------------------------------------------------

class FormatError(ValidationError):
    """File is not a recognizable FTEN file (bad magic, version, dtype)."""


class CorruptFile(ValidationError):
    """FTEN header and payload are inconsistent (truncated, wrong length)."""


class NonFiniteData(ValidationError):
    """A tensor or vector contains NaN or Inf."""


class ShapeError(ValidationError):
    """Dimension or channel-count mismatch."""


# -- manifest ---------------------------------------------------------------

class DuplicateSample(ValidationError):
    """Manifest contains the same sample_id more than once."""


class BadLabel(ValidationError):
    """Manifest label is not one of in/ood/unlabeled."""


class MissingColumn(ValidationError):
    """Manifest header lacks a required column."""


# -- fitting / scoring ------------------------------------------------------

class InsufficientSamples(ValidationError):
    """Fewer than two samples supplied to a covariance fit."""


class SingularCovariance(NumericalError):
    """Cholesky factorization failed even at the maximum jitter."""


class MissingStats(ValidationError):
    """A requested layer has no fitted statistics in the bundle."""


class MissingCalibration(ValidationError):
    """sum_z fusion requested without calibration covering every layer."""


class NotAProbabilityVector(ValidationError):
    """Softmax vector entries are out of [0,1] or do not sum to one."""


# -- evaluation --------------------------------------------------------------

class DegenerateLabels(ValidationError):
    """Evaluation input lacks one of the two classes (or is empty)."""
