"""Structured exceptions shared across the harness."""

from __future__ import annotations


class CaptionRlError(Exception):
    """Base class for all harness errors."""


# --- caption parsing ---------------------------------------------------------


class CaptionFormatError(CaptionRlError):
    """The answer text is not a valid six-part structured caption."""


class MissingSection(CaptionFormatError):
    def __init__(self, section: int):
        self.section = section
        super().__init__(f"section {section} header not found")


class EmptySection(CaptionFormatError):
    def __init__(self, section: int):
        self.section = section
        super().__init__(f"section {section} has an empty body")


class OutOfOrder(CaptionFormatError):
    def __init__(self, sequence):
        self.sequence = tuple(sequence)
        super().__init__(f"section headers out of order: {self.sequence}")


# --- key-info validation -----------------------------------------------------


class SchemaError(CaptionRlError):
    """A key-info record violates the schema; names the first bad field."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class DuplicateObject(SchemaError):
    def __init__(self, path: str, name: str):
        self.name = name
        super().__init__(path, f"duplicate object name {name!r}")


# --- matching / judging ------------------------------------------------------


class MatcherUnavailable(CaptionRlError):
    """A networked matcher failed after exhausting its retries."""


class JudgeError(CaptionRlError):
    """Base class for judge-protocol failures."""


class ParseFailure(JudgeError):
    def __init__(self, reply: str, attempts: int):
        self.reply = reply
        self.attempts = attempts
        super().__init__(
            f"no 'Final Score:' line after {attempts} attempt(s); last reply: {reply!r}"
        )


class OutOfRange(JudgeError):
    def __init__(self, score: float):
        self.score = score
        super().__init__(f"judge score {score} outside [0, 1]")


class JudgeTimeout(JudgeError):
    pass


class HttpError(JudgeError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(f"judge endpoint returned HTTP {status}")


# --- numerics ----------------------------------------------------------------


class ShapeMismatch(CaptionRlError):
    pass


class GroupTooSmall(CaptionRlError):
    def __init__(self, size: int):
        self.size = size
        super().__init__(f"rollout group needs >= 2 responses, got {size}")


class EmptySequence(CaptionRlError):
    pass


# --- dataset assembly --------------------------------------------------------


class EmptyStep(CaptionRlError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"reasoning step {step} is empty")


class EmptyAnswer(CaptionRlError):
    def __init__(self):
        super().__init__("answer text is empty")


class UnknownRecordId(CaptionRlError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"unknown record id: {record_id}")
