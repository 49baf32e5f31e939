"""
Exceptions raised by the generation engine.

Everything derives from ValueError so callers that only guard against bad
input keep working.
"""


class ConfigError(ValueError):
    """Unknown configuration key or a value that cannot be coerced."""


class RejectedInputError(ValueError):
    """Input that violates an operation's preconditions (shapes, emptiness, duplicates)."""


class IngestionError(ValueError):
    """A sequence container that does not match its declared schema."""

    def __init__(self, message: str, field: str = None, frame: int = None):
        location = []
        if field is not None:
            location.append(f"field '{field}'")
        if frame is not None:
            location.append(f"frame {frame}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.field = field
        self.frame = frame


class SimulationInputError(ValueError):
    """The posed body mesh handed to the simulator is not usable."""


class SimulationFailure(ValueError):
    """The cloth state became non-finite during a step."""

    def __init__(self, message: str, frame: int = None):
        super().__init__(message if frame is None else f"{message} (frame {frame})")
        self.frame = frame


class MetricError(ValueError):
    """Joint sets that cannot be aligned (degenerate ground truth)."""


class EmptySelectionError(ValueError):
    """An aggregation filter retained no entries."""
