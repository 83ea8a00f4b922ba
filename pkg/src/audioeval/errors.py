"""Error taxonomy shared across the harness.

Every failure surfaced to callers is an ``AudioEvalError`` subclass so the
CLI can distinguish config problems (exit 2) from execution problems.
"""


class AudioEvalError(Exception):
    """Base class for all harness errors."""


# -- configuration ----------------------------------------------------------

class ConfigError(AudioEvalError):
    """A configuration document could not be loaded or is invalid."""


class ConfigParseError(ConfigError):
    """Malformed config syntax; carries line context when available."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class DuplicateNameError(ConfigError):
    """Two entries share the same (kind, name)."""


class ResolutionError(ConfigError):
    """A referenced name does not resolve to an entry of the expected kind."""


class SchemaError(ConfigError):
    """An entry is structurally valid but semantically inconsistent."""


# -- datasets / audio -------------------------------------------------------

class DatasetError(AudioEvalError):
    """Base for dataset loading problems."""


class RowError(DatasetError):
    """A manifest row is malformed; carries the zero-based row index."""

    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"row {index}: {message}")


class AudioResolutionError(DatasetError):
    """An audio reference could not be resolved; carries the record id."""

    def __init__(self, record_id: str, message: str):
        self.record_id = record_id
        super().__init__(f"record {record_id!r}: {message}")


class FetchError(DatasetError):
    """A remote audio URI could not be fetched."""


class DecodeError(DatasetError):
    """An audio container could not be decoded; carries its format tag."""

    def __init__(self, message: str, format_tag: str | None = None):
        self.format_tag = format_tag
        if format_tag:
            message = f"{message} [format: {format_tag}]"
        super().__init__(message)


# -- templates --------------------------------------------------------------

class TemplateError(AudioEvalError):
    """Base for template parse/render problems."""


class TemplateParseError(TemplateError):
    """Bad template syntax; carries the character position."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class UnsupportedConstructError(TemplateParseError):
    """The template uses syntax outside the supported subset."""


class MissingVariableError(TemplateError):
    """A referenced, unguarded variable is absent from the record."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"template variable {name!r} not found in record")


class TemplateTypeError(TemplateError):
    """A value of the wrong type was substituted into a content slot."""


# -- runtime ----------------------------------------------------------------

class RuntimeAdapterError(AudioEvalError):
    """Base for worker/adapter failures."""


class SpawnError(RuntimeAdapterError):
    """The worker command could not be started."""


class StartupTimeoutError(RuntimeAdapterError):
    """No ready handshake arrived within the ready-timeout."""


class ProtocolError(RuntimeAdapterError):
    """The adapter violated the wire protocol."""


class InferenceTimeoutError(RuntimeAdapterError):
    """No response arrived within the request timeout."""


class WorkerFailureError(RuntimeAdapterError):
    """The worker process died while serving a request."""


class AdapterError(RuntimeAdapterError):
    """The adapter reported an error response; carries its message."""


class PermanentFailureError(RuntimeAdapterError):
    """The worker's restart budget is exhausted."""


# -- post-processing / metrics ----------------------------------------------

class StageError(AudioEvalError):
    """A processor chain stage failed; carries the stage index."""

    def __init__(self, stage: int, message: str):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}")


class ExtractionError(AudioEvalError):
    """No parseable answer was found in the text."""


class UndefinedMetricError(AudioEvalError):
    """The metric is undefined for these inputs (e.g. empty reference)."""


class InputError(AudioEvalError):
    """Structurally invalid metric inputs (e.g. length mismatch)."""


class EvaluatorError(AudioEvalError):
    """A model-based evaluator failed or returned an invalid value."""
