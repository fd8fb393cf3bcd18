"""Exception taxonomy shared across the engine."""


class NeuNetSError(Exception):
    """Base class for all engine errors."""


class DimensionError(NeuNetSError):
    """Tensor shapes are inconsistent with the requested operation."""


class GraphValidationError(NeuNetSError):
    """A network graph violates a structural invariant."""


class ConstructionError(NeuNetSError):
    """A template or sampled architecture cannot be materialized."""


class SerializationError(NeuNetSError):
    """Model payload is truncated, corrupt, or from an unknown version."""


class StateError(NeuNetSError):
    """Operation requires state that has not been established."""


class DivergenceError(NeuNetSError):
    """Training produced non-finite loss values."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class MorphismError(NeuNetSError):
    """A network transformation is not applicable to the target layer."""


class ForbiddenPositionError(MorphismError):
    """Insertion point cannot host an identity-initialized layer."""


class InsufficientExperienceError(NeuNetSError):
    """The experiment database holds no records near the requested difficulty."""


class RequestValidationError(NeuNetSError):
    """A synthesis request failed upfront validation."""


class PipelineStateError(NeuNetSError):
    """Illegal pipeline lifecycle transition or unknown pipeline id."""
