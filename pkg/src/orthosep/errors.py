"""Exception hierarchy. Every error carries a machine-parsable category
used by the CLI for exit reporting."""


class OrthosepError(Exception):
    category = "internal"


class ConfigError(OrthosepError):
    category = "config"


class DataError(OrthosepError):
    category = "data"


class ShapeError(DataError):
    category = "shape"


class AudioFormatError(DataError):
    category = "audio-format"


class CheckpointError(OrthosepError):
    category = "checkpoint"


class TrainingDiverged(OrthosepError):
    category = "divergence"


class IoError(OrthosepError):
    category = "io"
