"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class KflError(Exception):
    """Base class for all toolkit errors."""


class RootNotFound(KflError):
    pass


class IoError(KflError):
    def __init__(self, path, reason: str = ""):
        self.path = str(path)
        super().__init__(f"{path}: {reason}" if reason else str(path))


class IndexFormatError(KflError):
    pass


class EmptyIndex(KflError):
    pass


class ParseError(KflError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


class InvariantViolation(KflError):
    def __init__(self, task_ids, reason: str):
        self.task_ids = list(task_ids) if not isinstance(task_ids, str) else [task_ids]
        super().__init__(f"{', '.join(self.task_ids)}: {reason}")


class DiffParseError(KflError):
    pass


class UnknownTaskId(KflError):
    pass


class LengthMismatch(KflError):
    pass


class MboxParseError(KflError):
    def __init__(self, offset: int, reason: str = "not an mbox archive"):
        self.offset = offset
        super().__init__(f"offset {offset}: {reason}")


class ProviderError(KflError):
    KINDS = ("auth", "rate_limit", "transport", "overlong_prompt")

    def __init__(self, kind: str, message: str = ""):
        if kind not in self.KINDS:
            raise ValueError(f"unknown provider error kind {kind!r}")
        self.kind = kind
        super().__init__(f"{kind}: {message}" if message else kind)


class ParseFailure(KflError):
    """Model output could not be parsed into the requested structure."""
