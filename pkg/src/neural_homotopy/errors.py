class InvalidInputError(ValueError):
    """An argument violates an operation's precondition."""


class DegenerateGradientError(ValueError):
    """Spatial gradient too small for a curvature or normal to be defined."""

    def __init__(self, message, count=1):
        super().__init__(message)
        self.count = count


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class PointCloudError(ValueError):
    pass


class TrainingError(RuntimeError):
    """Training aborted; carries the epoch and the offending loss component."""

    def __init__(self, message, epoch=None, component=None):
        super().__init__(message)
        self.epoch = epoch
        self.component = component


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        loc = []
        if key is not None:
            loc.append(f"key '{key}'")
        if line is not None:
            loc.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.key = key
        self.line = line
