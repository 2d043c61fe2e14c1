"""Exception types used across the pipeline."""


class ApsError(Exception):
    """Base class for all pipeline errors."""


class InvalidArgumentError(ApsError, ValueError):
    pass


class OutOfBoundsError(ApsError):
    """Camera pose lies outside the world bounds."""


class NotFoundError(ApsError, KeyError):
    """Unknown scene id or missing artifact."""


class PlacementFailureError(ApsError):
    """No collision-free occluder placement found within the retry budget."""


class DoesNotFitError(ApsError):
    """Requested trajectory geometry does not fit inside the scene."""


class DegenerateAxisError(ApsError):
    """Position normalization is undefined because min == max on some axis."""

    def __init__(self, scene_id, axis):
        self.scene_id = scene_id
        self.axis = axis
        super().__init__(f"degenerate normalization axis '{axis}' in scene {scene_id}")


class InvalidQuaternionError(ApsError, ValueError):
    """Zero-norm quaternion where a rotation is required."""


class ParseError(ApsError):
    """Malformed serialized artifact; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class ReferentialIntegrityError(ApsError):
    """Manifest references a file that does not exist."""


class DivergenceError(ApsError):
    """Training produced a non-finite loss; carries the epoch index."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)


class IncompatibleBranchError(ApsError):
    """Branch truncation widths do not match at fusion time."""


class IncomparableReportsError(ApsError):
    """Evaluation reports come from different datasets."""


class BundleIntegrityError(ApsError):
    """Bundle components disagree on dataset hash or scene count."""


class DependencyError(ApsError):
    """A required pipeline stage has not been run."""

    def __init__(self, message, stage=None):
        self.stage = stage
        super().__init__(message)


class StaleArtifactError(ApsError):
    """A stage artifact was produced under a different configuration."""


class ConfigError(ApsError):
    """Experiment configuration is malformed or inconsistent."""
