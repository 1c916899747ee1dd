"""
Errors raised across the pipeline.

Everything derives from `VolumeInferenceError` so the CLI can map failures to exit codes. Errors about bad values
also derive from `ValueError`, so callers that only know about the standard exceptions still catch them.
"""


class VolumeInferenceError(Exception):
    """Base class for every pipeline error."""


class ConfigError(VolumeInferenceError, ValueError):
    """A configuration document or override is invalid."""


class UnknownSegmentError(VolumeInferenceError, KeyError):
    """A segment id does not exist in the road network."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ""


class ScenarioParseError(VolumeInferenceError, ValueError):
    """A scenario or trajectory file could not be parsed."""


class ScenarioVersionError(VolumeInferenceError, ValueError):
    """A file was written with an unsupported schema version."""

    def __init__(self, found: object, expected: object):
        self.found = found
        self.expected = expected
        super().__init__(f"Unsupported schema version {found!r}, expected version {expected!r}.")


class RoutingError(VolumeInferenceError, ValueError):
    """No route exists between two segments."""

    def __init__(self, from_segment: int, to_segment: int):
        self.from_segment = from_segment
        self.to_segment = to_segment
        super().__init__(f"Segment {to_segment} is unreachable from segment {from_segment}.")


class ShapeError(VolumeInferenceError, ValueError):
    """An array does not have the width a model expects."""

    def __init__(self, what: str, expected: object, actual: object):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}.")


class EmptyInputError(VolumeInferenceError, ValueError):
    """An operation that averages over its input received nothing."""


class TrainingError(VolumeInferenceError, ValueError):
    """Q-network training produced a non-finite loss."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)


class EmbeddingError(VolumeInferenceError, ValueError):
    """Embedding training failed or has nothing to embed."""


class InferenceError(VolumeInferenceError, ValueError):
    """Volume propagation cannot be set up or solved."""


class CoverageError(VolumeInferenceError, ValueError):
    """Predictions do not cover every cell that has to be evaluated."""

    def __init__(self, missing: list[tuple[int, int]]):
        self.missing = missing
        preview = ", ".join(f"({i},{t})" for i, t in missing[:10])
        more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
        super().__init__(f"Predictions are missing {len(missing)} cells: {preview}{more}.")


class StageError(VolumeInferenceError):
    """A pipeline stage failed or its inputs are missing."""

    def __init__(self, stage: str, message: str, artifacts: list[str] | None = None):
        self.stage = stage
        self.artifacts = artifacts or []
        details = f" (artifacts: {', '.join(self.artifacts)})" if self.artifacts else ""
        super().__init__(f"Stage '{stage}' failed: {message}{details}")
