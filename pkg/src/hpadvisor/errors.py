"""Exception hierarchy shared by all hpadvisor modules."""


class AdvisorError(Exception):
    """Base class for every error raised by this package."""


# --- dataset construction / validation ---

class EmptyDatasetError(AdvisorError):
    """A class-count manifest contained no classes."""


class InvalidClassCountError(AdvisorError):
    """A class count was zero, negative, or not an integer."""


class InvariantViolationError(AdvisorError):
    """A domain type field breaks one of its structural invariants."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class RangeError(AdvisorError):
    """A bounded field (rate in [0,1], dropout in [0,1]) is out of range."""

    def __init__(self, field: str, message: str, record_index: int | None = None):
        prefix = f"record {record_index}: " if record_index is not None else ""
        super().__init__(f"{prefix}{field}: {message}")
        self.field = field
        self.message = message
        self.record_index = record_index


class UnknownCategoryError(AdvisorError):
    """A categorical label has no code in the active encoding table."""

    def __init__(self, feature: str, label: str):
        super().__init__(f"no code for label {label!r} of feature {feature!r}")
        self.feature = feature
        self.label = label


# --- meta-dataset store ---

class ParseError(AdvisorError):
    """The meta-dataset document is not well-formed JSON."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{loc}")
        self.line = line
        self.column = column


class SchemaError(AdvisorError):
    """An entry does not match the meta-dataset record schema."""

    def __init__(self, message: str, record_index: int | None = None, field: str | None = None):
        prefix = f"record {record_index}: " if record_index is not None else ""
        where = f"{field}: " if field else ""
        super().__init__(f"{prefix}{where}{message}")
        self.record_index = record_index
        self.field = field


# --- learner / explainer / retrieval ---

class InsufficientDataError(AdvisorError):
    """Too few records for the requested operation."""


class DimensionError(AdvisorError):
    """Vector length does not match the expected feature count."""


class ModelCorruptError(AdvisorError):
    """A tree in the model violates structural requirements (e.g. zero cover)."""


# --- prompting / LLM output parsing ---

class EmptyContextError(AdvisorError):
    """Prompt assembly was given no retrieved experiments."""


class FormatError(AdvisorError):
    """The LLM reply does not contain a parseable JSON object."""


class ResponseKeyError(FormatError):
    """The reply's JSON object has missing or unexpected keys."""

    def __init__(self, missing: tuple[str, ...], extra: tuple[str, ...]):
        parts = []
        if missing:
            parts.append(f"missing keys: {', '.join(missing)}")
        if extra:
            parts.append(f"unexpected keys: {', '.join(extra)}")
        super().__init__("; ".join(parts))
        self.missing = missing
        self.extra = extra


class OutOfSearchSpaceError(AdvisorError):
    """A recommended value is not an admissible search-space member."""

    def __init__(self, parameters: tuple[str, ...], message: str):
        super().__init__(message)
        self.parameters = parameters


class MissingExplanationError(AdvisorError):
    """The reply carried no explanation text after the JSON object."""


# --- LLM transport and judging ---

class TransportError(AdvisorError):
    """Base class for inference-server communication failures."""


class RequestTimeoutError(TransportError, TimeoutError):
    """The inference server did not answer within the configured timeout."""


class ServerError(TransportError):
    """The inference server answered with a non-success status."""

    def __init__(self, status: int, message: str = ""):
        super().__init__(f"server returned status {status}" + (f": {message}" if message else ""))
        self.status = status


class UnavailableError(TransportError):
    """All transport retries were exhausted."""


class JudgeFormatError(AdvisorError):
    """One judge run produced an unusable reply (recorded, run excluded)."""


class JudgeUnavailableError(AdvisorError):
    """Every judge run failed; no scores available."""
