"""Exception types raised across the package."""


class WalkerPoseError(Exception):
    """Base class for all package errors."""


# geometry
class NonPositiveDepth(WalkerPoseError, ValueError):
    pass


class InvalidDepth(WalkerPoseError, ValueError):
    pass


class DegenerateSkeleton(WalkerPoseError, ValueError):
    pass


class DegenerateConfiguration(WalkerPoseError, ValueError):
    pass


class CalibrationError(WalkerPoseError, ValueError):
    """Calibration file failed validation; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


# skeleton
class WrongHalf(WalkerPoseError, ValueError):
    pass


class SequenceFormatError(WalkerPoseError, ValueError):
    pass


# heatmap
class EmptyMap(WalkerPoseError, ValueError):
    pass


# preprocess
class ShapeMismatch(WalkerPoseError, ValueError):
    pass


class EmptySequence(WalkerPoseError, ValueError):
    pass


# lifter
class WidthMismatch(WalkerPoseError, ValueError):
    pass


class DivergedTraining(WalkerPoseError, RuntimeError):
    pass


class AllDepthDead(WalkerPoseError, ValueError):
    pass


class ModelFormatError(WalkerPoseError, ValueError):
    pass


# filter
class NonMonotonicTime(WalkerPoseError, ValueError):
    pass


# metrics
class LengthMismatch(WalkerPoseError, ValueError):
    pass


class EmptySamples(WalkerPoseError, ValueError):
    pass


# synthgait
class OutOfFrustum(WalkerPoseError, ValueError):
    def __init__(self, keypoint, frame, message=""):
        super().__init__(f"keypoint {keypoint} outside camera frustum at frame {frame}"
                         + (f": {message}" if message else ""))
        self.keypoint = keypoint
        self.frame = frame


# runtime
class ConfigError(WalkerPoseError, ValueError):
    pass


class StageTimeout(WalkerPoseError, RuntimeError):
    pass


class DetectorFailure(WalkerPoseError, RuntimeError):
    def __init__(self, frame_index, message=""):
        super().__init__(f"detector failed on frame {frame_index}" + (f": {message}" if message else ""))
        self.frame_index = frame_index
