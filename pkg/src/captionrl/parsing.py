"""Parsing of reason-then-describe model responses.

A well-formed response wraps its reasoning trace in a single
``<think>...</think>`` block followed by a single ``<answer>...</answer>``
block whose body is a six-part structured caption (dense / main object /
background / movement / style / camera).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import EmptySection, MissingSection, OutOfOrder

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"

SECTION_NAMES = (
    "Dense caption",
    "Main object caption",
    "Background caption",
    "Movement caption",
    "Style caption",
    "Camera caption",
)

# "3. Background caption:" etc., case-insensitive, tolerant of stray spaces.
_HEADER_RE = re.compile(
    r"([1-6])\s*\.\s*(dense|main object|background|movement|style|camera)\s+caption\s*:",
    re.IGNORECASE,
)

_SECTION_FOR_NAME = {
    "dense": 1,
    "main object": 2,
    "background": 3,
    "movement": 4,
    "style": 5,
    "camera": 6,
}


@dataclass(frozen=True)
class StructuredCaption:
    """The six-part dense caption."""

    dense: str
    main_object: str
    background: str
    movement: str
    style: str
    camera: str

    def as_tuple(self) -> tuple[str, str, str, str, str, str]:
        return (
            self.dense,
            self.main_object,
            self.background,
            self.movement,
            self.style,
            self.camera,
        )


@dataclass(frozen=True)
class ParsedResponse:
    """A raw model output split into reasoning trace and answer.

    ``think``/``answer`` are present exactly when the corresponding tag
    flag is true. ``stray_separator`` records non-whitespace text between
    ``</think>`` and ``<answer>``; it does not invalidate either tag.
    """

    think: str | None
    answer: str | None
    think_tag_ok: bool
    answer_tag_ok: bool
    six_part_ok: bool
    stray_separator: bool = False


def _single_block(raw: str, open_tag: str, close_tag: str) -> tuple[str, int, int] | None:
    """Return (inner, open_index, close_index) when the tag pair occurs
    exactly once and in order; None otherwise."""
    if raw.count(open_tag) != 1 or raw.count(close_tag) != 1:
        return None
    start = raw.index(open_tag)
    end = raw.index(close_tag)
    if end < start:
        return None
    inner = raw[start + len(open_tag) : end]
    return inner, start, end


def parse_response(raw: str) -> ParsedResponse:
    """Split raw model text into reasoning trace and answer.

    Never raises: malformed input yields false flags and absent fields.
    Tag content is preserved byte-exactly apart from trimming the
    surrounding whitespace. Repeated or nested tags of the same name
    invalidate that tag.
    """
    think_block = _single_block(raw, THINK_OPEN, THINK_CLOSE)
    answer_block = _single_block(raw, ANSWER_OPEN, ANSWER_CLOSE)

    think_ok = think_block is not None
    answer_ok = answer_block is not None
    stray = False

    if think_ok and answer_ok:
        think_close_end = think_block[2] + len(THINK_CLOSE)
        answer_start = answer_block[1]
        # The answer block must follow the think block.
        if answer_start < think_close_end:
            answer_ok = False
        else:
            stray = raw[think_close_end:answer_start].strip() != ""

    think = think_block[0].strip() if think_ok else None
    answer = answer_block[0].strip() if answer_ok else None

    six_part = False
    if answer_ok and answer is not None:
        try:
            parse_structured_caption(answer)
            six_part = True
        except (MissingSection, EmptySection, OutOfOrder):
            six_part = False

    return ParsedResponse(
        think=think,
        answer=answer,
        think_tag_ok=think_ok,
        answer_tag_ok=answer_ok,
        six_part_ok=six_part,
        stray_separator=stray,
    )


def parse_structured_caption(answer: str) -> StructuredCaption:
    """Parse a numbered six-section caption body.

    Raises MissingSection(k) when header k is absent, OutOfOrder when
    headers are present but duplicated or misordered, EmptySection(k)
    when a section body is blank.
    """
    matches = []
    for m in _HEADER_RE.finditer(answer):
        declared = int(m.group(1))
        named = _SECTION_FOR_NAME[m.group(2).lower()]
        if declared == named:
            matches.append((declared, m.start(), m.end()))

    seen = {k for k, _, _ in matches}
    for k in range(1, 7):
        if k not in seen:
            raise MissingSection(k)
    sequence = [k for k, _, _ in matches]
    if sequence != [1, 2, 3, 4, 5, 6]:
        raise OutOfOrder(sequence)

    bodies = []
    for i, (k, _, body_start) in enumerate(matches):
        body_end = matches[i + 1][1] if i + 1 < len(matches) else len(answer)
        body = answer[body_start:body_end].strip()
        if not body:
            raise EmptySection(k)
        bodies.append(body)
    return StructuredCaption(*bodies)


def render_structured_caption(caption: StructuredCaption) -> str:
    """Render the six sections back to numbered-header text (round-trips
    through parse_structured_caption)."""
    parts = [
        f"{i}. {name}: {text}"
        for i, (name, text) in enumerate(zip(SECTION_NAMES, caption.as_tuple()), start=1)
    ]
    return "\n".join(parts)


def render_response(think: str, answer: str) -> str:
    """Wrap a reasoning trace and answer in their tags."""
    return f"{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{answer}{ANSWER_CLOSE}"


def format_reward(parsed: ParsedResponse) -> float:
    """Answer-structure reward over the parsed tag flags.

    1.0 when both the think format and the answer format are satisfied,
    0.2 when exactly one is, 0.0 otherwise. The answer format requires
    the tag *and* the six-part caption body.
    """
    think_satisfied = parsed.think_tag_ok
    answer_satisfied = parsed.answer_tag_ok and parsed.six_part_ok
    if think_satisfied and answer_satisfied:
        return 1.0
    if think_satisfied or answer_satisfied:
        return 0.2
    return 0.0
