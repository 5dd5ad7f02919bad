"""Exception types shared across the package."""


class Chat2ImgError(Exception):
    """Base class for all package errors."""


class DataFormatError(Chat2ImgError):
    """A stored file could not be parsed. Carries the line number when known."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class ValidationError(Chat2ImgError):
    """A record or value violates an invariant."""


class ArgumentError(ValidationError):
    """A generation argument is missing, malformed, or out of bounds."""

    def __init__(self, message: str, *, key: str | None = None):
        self.key = key
        super().__init__(message)


class UnknownModelError(Chat2ImgError):
    def __init__(self, model_id: str):
        self.model_id = model_id
        super().__init__(f"unknown model: {model_id!r}")


class EncodingError(Chat2ImgError):
    """Feature encoding failed (empty input, dimension mismatch, backend failure)."""


class BackendError(Chat2ImgError):
    """A remote backend failed after bounded retries."""


class RewriteError(Chat2ImgError):
    """Prompt rewriting failed (empty input or empty backend output)."""


class OutputParseError(Chat2ImgError):
    """Structured backend output could not be parsed."""


class TrainingError(Chat2ImgError):
    """Training aborted (divergence or invalid setup)."""


class CheckpointError(Chat2ImgError):
    """Checkpoint file is malformed or the frozen base drifted since saving."""


class RenderError(Chat2ImgError):
    """Image rendering failed."""


class ConfigError(Chat2ImgError):
    """Configuration is invalid. Collects every field error at once."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
