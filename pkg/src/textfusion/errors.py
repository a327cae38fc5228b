"""Exception hierarchy shared across the package.

ValidationError subclasses signal bad user input (files, configs, shapes);
the CLI maps them to exit code 1. Everything else under TextFusionError is
a runtime failure and maps to exit code 2.
"""


class TextFusionError(Exception):
    pass


class ValidationError(TextFusionError):
    pass


class ShapeError(ValidationError):
    """Operands or arguments with incompatible dimensions."""


class DataFormatError(ValidationError):
    """Malformed series CSV or text sidecar."""


class EmbeddingFileError(ValidationError):
    """Malformed or unsupported binary embedding file."""


class PoolingError(ValidationError):
    """Requested pooling strategy is unavailable for an embedding set."""


class MetricError(ValidationError):
    """Metric undefined for the given inputs (e.g. all-zero WAPE target)."""


class ConfigError(ValidationError):
    """Invalid run configuration."""


class TapeError(TextFusionError):
    """Gradient tape misuse: detached graph, reuse after backward."""


class DivergenceError(TextFusionError):
    """Training loss became non-finite."""
