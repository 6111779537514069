"""Exception taxonomy.

Everything raised on purpose derives from :class:`FptError` so the CLI can
catch one type and emit a single-line machine-parsable error.
"""


class FptError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"


class DimensionError(FptError):
    """Tensor shapes incompatible with the requested operation."""

    code = "dimension"


class GradCheckError(FptError):
    """The function under a gradient check produced a non-finite value."""

    code = "grad_check"


class CheckpointError(FptError):
    """Malformed or truncated checkpoint container."""

    code = "checkpoint"


class EmptyDocumentError(FptError):
    """Document has no word tokens after tokenization."""

    code = "empty_document"


class FeatureFileError(FptError):
    """Feature CSV could not be parsed or aligned with the documents."""

    code = "feature_file"


class DatasetFileError(FptError):
    """Dataset JSONL record is malformed."""

    code = "dataset_file"


class PromptModeError(FptError):
    """Prompt-input assembly called with arguments unfit for the mode."""

    code = "prompt_mode"


class SamplingError(FptError):
    """A class lacks the population required for the requested k-shot split."""

    code = "sampling"


class TrainingError(FptError):
    """Training aborted: non-finite loss or gradient."""

    code = "training"


class ConfigError(FptError):
    """Invalid configuration value or unknown config-file key."""

    code = "config"
