"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Structural problem: incompatible or invalid array shapes/arguments."""


class StateError(RuntimeError):
    """Operation attempted in a state that cannot support it."""


class ManifestError(ValueError):
    """Dataset manifest is missing, malformed, or inconsistent."""


class OracleSizeError(ValueError):
    """Exact enumeration was requested for an instance too large to enumerate."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss and was aborted."""

    def __init__(self, message: str = "", epoch: int = -1, batch_index: int = -1):
        self.epoch = epoch
        self.batch_index = batch_index
        super().__init__(message or "non-finite loss")
