"""Exception types shared across the package."""

from __future__ import annotations


class ShapeError(ValueError):
    """Tensor or mask dimensions do not satisfy an operation's contract."""


class LabelError(ValueError):
    """A label value is outside [0, C) and is not the ignore index."""


class ContractError(RuntimeError):
    """An API precondition was violated (non-scalar loss, mismatched ids, ...)."""


class ValidationError(ValueError):
    """Malformed user input: empty prompt fields, bad template data, ..."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DegenerateBatchError(ValueError):
    """Fewer than two classes present; covariance alignment must be skipped."""


class FormatError(ValueError):
    """A binary or text file does not match its on-disk format.

    `offset` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmbeddingLookupError(KeyError):
    """A prompt string is missing from a fixed embedding table."""

    def __init__(self, prompt: str):
        super().__init__(prompt)
        self.prompt = prompt

    def __str__(self) -> str:
        return f"no embedding stored for prompt: {self.prompt!r}"
