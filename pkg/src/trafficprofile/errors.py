"""Exception types shared across the pipeline stages."""


class TrafficProfileError(Exception):
    """Base class for all errors raised by this package."""


# capture ingest
class UnreadableFile(TrafficProfileError):
    pass


class UnsupportedLinkType(TrafficProfileError):
    pass


# protocol parsers
class NotHttp(TrafficProfileError):
    pass


class NotTls(TrafficProfileError):
    pass


# enrichment
class ProviderUnavailable(TrafficProfileError):
    pass


class UnknownSourceCategory(TrafficProfileError):
    pass


# dataset assembly
class EmptyInput(TrafficProfileError):
    pass


class DegenerateLabel(TrafficProfileError):
    pass


class LabelsMissing(TrafficProfileError):
    pass


class InvalidLabel(TrafficProfileError):
    pass


# ml engine
class SingleClass(TrafficProfileError):
    pass


class DimensionMismatch(TrafficProfileError):
    pass


class FoldDegenerate(TrafficProfileError):
    pass


class EmptyPredictions(TrafficProfileError):
    pass


# pipeline
class InvalidSpec(TrafficProfileError):
    pass


class ConfigError(TrafficProfileError):
    pass


class StageError(TrafficProfileError):
    """Wraps a failure with the name of the pipeline stage it came from."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
