"""Exception hierarchy shared by the pipeline modules.

Every error raised on a contract violation derives from PipelineError so the
CLI can map failure classes to stable exit codes.
"""


class PipelineError(Exception):
    pass


# --- image I/O and raster ops ---------------------------------------------

class UnsupportedFormat(PipelineError):
    pass


class CorruptData(PipelineError):
    pass


class ZeroDimension(PipelineError):
    pass


# --- augmentation ----------------------------------------------------------

class EvenKernel(PipelineError):
    pass


class KernelLargerThanImage(PipelineError):
    pass


class HueOutOfRange(PipelineError):
    pass


class EmptyInputDir(PipelineError):
    pass


class WriteFailure(PipelineError):
    pass


# --- encoder ---------------------------------------------------------------

class InvalidConfig(PipelineError):
    pass


class ShapeMismatch(PipelineError):
    pass


class EmptyBatch(PipelineError):
    pass


class StaleCache(PipelineError):
    pass


class FormatMismatch(PipelineError):
    pass


class DimensionHeaderInvalid(PipelineError):
    pass


# --- training --------------------------------------------------------------

class ZeroVector(PipelineError):
    pass


class LengthMismatch(PipelineError):
    pass


class NonFiniteGradient(PipelineError):
    pass


class EmptyTrainDir(PipelineError):
    pass


class DivergenceDetected(PipelineError):
    pass


# --- feature statistics ----------------------------------------------------

class TooFewSamples(PipelineError):
    pass


class NonFiniteFeature(PipelineError):
    pass


class NotSymmetric(PipelineError):
    pass


class EigenFailure(PipelineError):
    pass


class DimensionMismatch(PipelineError):
    pass


# --- baseline metrics ------------------------------------------------------

class ImageTooSmall(PipelineError):
    pass


class TooFewPristine(PipelineError):
    pass


class NoQualifyingPatches(PipelineError):
    pass


# --- subjective scores -----------------------------------------------------

class ZeroVariance(PipelineError):
    pass


class TooFewRatings(PipelineError):
    pass


class ParseError(PipelineError):
    pass


class DuplicateRating(PipelineError):
    pass


class ScoreOutOfRange(PipelineError):
    pass


class NoRatingsForImage(PipelineError):
    pass


# --- correlation / selection -----------------------------------------------

class MissingSubjective(PipelineError):
    pass


class EmptyTestSet(PipelineError):
    pass


class IncompleteCurve(PipelineError):
    pass


class NoPositiveNoise(PipelineError):
    pass


class IncompleteScores(PipelineError):
    pass


# --- synthetic pair generation ---------------------------------------------

class DegenerateQuad(PipelineError):
    pass


class SourceTooSmall(PipelineError):
    pass


class TooFewSources(PipelineError):
    pass


# --- rating service --------------------------------------------------------

class DuplicateSession(PipelineError):
    pass


class UnknownBundle(PipelineError):
    pass


class UnknownSession(PipelineError):
    pass


class UnknownImage(PipelineError):
    pass


class OutOfOrderSubmission(PipelineError):
    pass


class SessionComplete(PipelineError):
    pass


class NothingToExport(PipelineError):
    pass


# --- CLI -------------------------------------------------------------------

class ConfigInvalid(PipelineError):
    pass
