"""Exception hierarchy shared by every stage of the pipeline."""


class LRAGNNError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LRAGNNError, ValueError):
    pass


class DomainError(LRAGNNError, ValueError):
    pass


class StateError(LRAGNNError, RuntimeError):
    pass


class NumericError(LRAGNNError, FloatingPointError):
    pass


class DeterminismError(LRAGNNError, RuntimeError):
    pass


class InputError(LRAGNNError, ValueError):
    """Empty or malformed input data (empty dataset, missing sigma, ...)."""


class BoundsError(InputError):
    pass


class ConfigError(LRAGNNError, ValueError):
    pass


class IngestionError(InputError):
    def __init__(self, message, record_id=None):
        super().__init__(message if record_id is None else f"record {record_id!r}: {message}")
        self.record_id = record_id


class CompatibilityError(LRAGNNError, ValueError):
    pass
