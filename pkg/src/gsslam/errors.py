"""Exception types raised across the package."""


class GSSlamError(Exception):
    """Base class for all errors raised by gsslam."""


class BehindCameraError(GSSlamError, ValueError):
    pass


class InvalidDepthError(GSSlamError, ValueError):
    pass


class ConfigurationError(GSSlamError, ValueError):
    pass


class EmptyInitializationError(GSSlamError, ValueError):
    pass


class UntrackableFrameError(GSSlamError):
    """No pixel passes the visibility gate, so the frame carries no pose signal."""


class TrackingLostError(GSSlamError):
    """Tracking diverged. ``best_pose`` holds the lowest-loss pose seen."""

    def __init__(self, message, best_pose=None, best_loss=None):
        super().__init__(message)
        self.best_pose = best_pose
        self.best_loss = best_loss


class DegenerateParallaxError(GSSlamError):
    pass


class DatasetFormatError(GSSlamError):
    pass


class InsufficientOverlapError(GSSlamError, ValueError):
    pass


class UndefinedMetricError(GSSlamError, ValueError):
    pass


class CheckpointFormatError(GSSlamError):
    pass
