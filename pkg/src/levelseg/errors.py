"""Exception types shared across the package."""


class LevelsegError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(LevelsegError):
    """Array arguments that must share a shape do not."""


class DegenerateMask(LevelsegError):
    """Mask is all-background or all-foreground; no boundary exists."""


class EmptyDataset(LevelsegError):
    pass


class InconsistentShapes(LevelsegError):
    """Dataset samples do not all share the same dimensions."""


class ImageTooSmall(LevelsegError):
    pass


class PlanInvalid(LevelsegError):
    pass


class NoDefinedSamples(LevelsegError):
    """Aggregation requested over zero defined metric rows."""


class WeightsLoadError(LevelsegError):
    """External frozen-encoder weights file is missing or malformed."""


class MissingFile(LevelsegError):
    pass


class UnknownClassIndex(LevelsegError):
    """Label image contains an index outside [0, classes)."""


class ConfigInvalid(LevelsegError):
    pass


class DatasetError(LevelsegError):
    pass


class CheckpointError(LevelsegError):
    pass


class FreezeViolation(LevelsegError):
    """Frozen parameters changed during training."""
