"""Exception hierarchy.

Everything derives from :class:`ValidationError` except I/O failures, which
surface as the builtin :class:`OSError`.  The CLI maps the former to exit
code 1 and the latter to exit code 2.
"""


class ValidationError(ValueError):
    pass


class ShapeError(ValidationError):
    pass


class GradientCheckError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ModelConfigError(ConfigError):
    pass


class CheckpointError(ValidationError):
    pass


class NotACheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


class ManifestError(ValidationError):
    pass


class UnknownCategoryError(ManifestError):
    pass


class MissingRecordError(ManifestError):
    pass


class PatchCountError(ManifestError):
    pass


class DuplicateIdError(ManifestError):
    pass


class InconsistentRecordError(ManifestError):
    pass


class PatchImageError(ValidationError):
    pass


class SplitError(ValidationError):
    pass


class VoteSetError(ValidationError):
    pass


class TrainingError(ValidationError):
    pass


class NotComputableError(ValidationError):
    pass
