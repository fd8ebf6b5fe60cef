"""
Error types for CT Restore.
Every domain error is also a ValueError so input validation can catch either.
"""

from typing import List


class CTRestoreError(ValueError):
    """Base class for all domain errors."""


class InvalidRangeError(CTRestoreError):
    """A bound, ratio or size parameter is outside its valid range."""


class DataError(CTRestoreError):
    """Array content is unusable (NaN, infinity, wrong dtype)."""


class ShapeMismatchError(CTRestoreError):
    """Two arrays that must agree in shape do not."""


class StageError(CTRestoreError):
    """A sinogram was passed to an operation expecting another stage."""


class FluxOverflowError(CTRestoreError):
    """Mean photon count exceeds what the sampler represents exactly."""


class PorosityUnreachableError(CTRestoreError):
    """Rock phantom generator could not hit its porosity target."""

    def __init__(self, target: float, achieved: float, iterations: int):
        self.target = target
        self.achieved = achieved
        self.iterations = iterations
        super().__init__(
            f"porosity target {target:.3f} unreachable after {iterations} iterations "
            f"(achieved {achieved:.3f})"
        )


class TopologyMismatchError(CTRestoreError):
    """Stored weights do not fit the target network."""

    def __init__(self, diffs: List[str]):
        self.diffs = diffs
        detail = "\n  ".join(diffs)
        super().__init__(f"network topology mismatch:\n  {detail}")


class TrainingDivergedError(CTRestoreError):
    """Loss became non-finite during training."""


class FormatError(CTRestoreError):
    """A binary artifact has a bad header or truncated payload."""


class OutputLockedError(CTRestoreError):
    """Another command holds the output directory lock."""
