"""Dataset assembly: reasoning-trace records, dedup, condition balancing,
and key-info extraction through a chat backend.

Two record kinds flow through here. A CotRecord is a supervised training
target: instruction, four reasoning steps wrapped in think tags, and a
structured caption as the answer. An RlRecord pairs an instruction with
the key-info element sets the reward needs at optimization time.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import CaptionFormatError, EmptyAnswer, EmptyStep, SchemaError
from .judge import JudgeConfig, Transport, chat, load_prompt_template
from .keyinfo import (
    KeyInfoRecord,
    record_from_dict,
    record_to_dict,
)
from .parsing import (
    StructuredCaption,
    parse_response,
    parse_structured_caption,
    render_response,
)

logger = logging.getLogger(__name__)

CONDITION_TYPES = ("identities", "depth", "camera", "human_pose")

STEP_MARKERS = ("Step-1:", "Step-2:", "Step-3:", "Step-4:")

_EXTRACT_MAX_TOKENS = 2048


def _check_conditions(condition_types: Iterable[str]) -> tuple[str, ...]:
    seen = []
    for cond in condition_types:
        if cond not in CONDITION_TYPES:
            raise ValueError(f"unknown condition type: {cond!r}")
        if cond not in seen:
            seen.append(cond)
    return tuple(sorted(seen, key=CONDITION_TYPES.index))


@dataclass(frozen=True)
class CotRecord:
    id: str
    instruction: str
    condition_types: tuple[str, ...]
    step1: str
    step2: str
    step3: str
    step4: str
    answer: str
    rendered: str

    @property
    def steps(self) -> tuple[str, str, str, str]:
        return (self.step1, self.step2, self.step3, self.step4)


@dataclass(frozen=True)
class RlRecord:
    id: str
    instruction: str
    condition_types: tuple[str, ...]
    key_info: KeyInfoRecord
    gold_caption: StructuredCaption | None = None


def _stable_id(prefix: str, *parts: str) -> str:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()
    return f"{prefix}-{digest[:12]}"


def assemble_cot_record(
    instruction: str,
    steps: Sequence[str],
    answer: str,
    condition_types: Iterable[str] = (),
    record_id: str | None = None,
) -> CotRecord:
    """Wrap four reasoning steps and an answer into a training target.

    The think body carries the steps under fixed ``Step-k:`` markers so
    the trace stays machine-checkable. The rendered string is verified
    to round-trip through the response parser; a non-six-part answer is
    allowed but logged, since such records score a degraded format
    reward downstream.
    """
    if not instruction.strip():
        raise ValueError("instruction must be non-empty")
    if len(steps) != 4:
        raise ValueError(f"expected 4 steps, got {len(steps)}")
    cleaned = []
    for k, text in enumerate(steps, start=1):
        body = text.strip()
        if not body:
            raise EmptyStep(k)
        cleaned.append(body)
    answer_body = answer.strip()
    if not answer_body:
        raise EmptyAnswer()

    think = "\n".join(f"{marker} {body}" for marker, body in zip(STEP_MARKERS, cleaned))
    rendered = render_response(think, answer_body)
    parsed = parse_response(rendered)
    if not (parsed.think_tag_ok and parsed.answer_tag_ok):
        raise ValueError(
            "assembled response does not round-trip; step or answer text "
            "likely embeds a reserved tag"
        )
    try:
        parse_structured_caption(answer_body)
    except CaptionFormatError as exc:
        logger.warning("answer is not a six-part caption: %s", exc)

    if record_id is None:
        record_id = _stable_id("cot", instruction, answer_body)
    return CotRecord(
        id=record_id,
        instruction=instruction,
        condition_types=_check_conditions(condition_types),
        step1=cleaned[0],
        step2=cleaned[1],
        step3=cleaned[2],
        step4=cleaned[3],
        answer=answer_body,
        rendered=rendered,
    )


_NORM_RE = re.compile(r"[^\w\s]", re.UNICODE)


def normalize_instruction(text: str) -> str:
    stripped = _NORM_RE.sub("", text.lower())
    return " ".join(stripped.split())


def dedup_records(records: Sequence) -> list:
    """Keep the first record per normalized instruction, stable order."""
    seen: set[str] = set()
    kept = []
    for record in records:
        key = normalize_instruction(record.instruction)
        if key in seen:
            continue
        seen.add(key)
        kept.append(record)
    return kept


@dataclass(frozen=True)
class BalanceReport:
    quotas: dict[str, int]
    achieved: dict[str, int]

    @property
    def shortfalls(self) -> dict[str, int]:
        return {
            cond: self.quotas[cond] - self.achieved.get(cond, 0)
            for cond in self.quotas
            if self.achieved.get(cond, 0) < self.quotas[cond]
        }

    def to_dict(self) -> dict:
        return {
            "quotas": dict(self.quotas),
            "achieved": dict(self.achieved),
            "shortfalls": self.shortfalls,
        }


def balance_sample(
    records: Sequence,
    quota_per_condition: Mapping[str, int],
    seed: int = 0,
) -> tuple[list, BalanceReport]:
    """Seeded sample respecting a per-condition-type quota.

    Candidates are visited in shuffled order and accepted only if every
    quota-covered condition they carry still has room, so a record with
    several condition types counts toward each without overshooting any.
    Selected records come back in their original input order. Shortfalls
    are reported, not fatal.
    """
    quotas = {}
    for cond, quota in quota_per_condition.items():
        if cond not in CONDITION_TYPES:
            raise ValueError(f"unknown condition type: {cond!r}")
        if quota < 0:
            raise ValueError(f"quota for {cond!r} must be >= 0")
        quotas[cond] = int(quota)

    order = list(range(len(records)))
    random.Random(seed).shuffle(order)
    achieved = {cond: 0 for cond in quotas}
    chosen: set[int] = set()
    for idx in order:
        conds = [c for c in records[idx].condition_types if c in quotas]
        if not conds:
            continue
        if any(achieved[c] >= quotas[c] for c in conds):
            continue
        chosen.add(idx)
        for c in conds:
            achieved[c] += 1
        if all(achieved[c] >= quotas[c] for c in quotas):
            break

    selected = [records[i] for i in sorted(chosen)]
    return selected, BalanceReport(quotas=quotas, achieved=achieved)


# --- key-info extraction --------------------------------------------------------


@dataclass(frozen=True)
class ExtractionResult:
    record: KeyInfoRecord
    raw_reply: str


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def _json_from_reply(reply: str) -> dict:
    text = reply.strip()
    fenced = _FENCE_RE.search(text)
    if fenced:
        text = fenced.group(1).strip()
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end <= start:
        raise SchemaError("$", "no JSON object in backend reply")
    try:
        data = json.loads(text[start : end + 1])
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"malformed JSON from backend: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("$", "backend JSON is not an object")
    return data


def extract_key_info(
    gold_caption: str,
    instruction: str,
    cfg: JudgeConfig,
    transport: Transport | None = None,
    record_id: str | None = None,
) -> ExtractionResult:
    """Ask the chat backend to split a gold caption into the three
    element sets, then validate the reply against the record schema.

    The raw reply is kept on the result (and attached to any SchemaError)
    so failed extractions stay auditable.
    """
    if not gold_caption.strip():
        raise ValueError("gold_caption must be non-empty")
    if not instruction.strip():
        raise ValueError("instruction must be non-empty")

    template = load_prompt_template("extract_prompt.txt")
    prompt = template.format(instruction=instruction, gold_caption=gold_caption)
    raw = chat(cfg, prompt, transport=transport, max_tokens=_EXTRACT_MAX_TOKENS)

    if record_id is None:
        record_id = _stable_id("ki", instruction, gold_caption)
    try:
        data = _json_from_reply(raw)
        data.setdefault("id", record_id)
        record = record_from_dict(data)
    except SchemaError as exc:
        exc.raw_reply = raw
        raise
    return ExtractionResult(record=record, raw_reply=raw)


# --- serialization --------------------------------------------------------------


def cot_record_to_dict(record: CotRecord) -> dict:
    return {
        "id": record.id,
        "instruction": record.instruction,
        "condition_types": list(record.condition_types),
        "step1": record.step1,
        "step2": record.step2,
        "step3": record.step3,
        "step4": record.step4,
        "answer": record.answer,
        "rendered": record.rendered,
    }


def cot_record_from_dict(data: Mapping) -> CotRecord:
    try:
        return CotRecord(
            id=str(data["id"]),
            instruction=str(data["instruction"]),
            condition_types=_check_conditions(data.get("condition_types", ())),
            step1=str(data["step1"]),
            step2=str(data["step2"]),
            step3=str(data["step3"]),
            step4=str(data["step4"]),
            answer=str(data["answer"]),
            rendered=str(data["rendered"]),
        )
    except KeyError as exc:
        raise SchemaError("$", f"missing field {exc.args[0]!r}") from exc


def _caption_to_dict(caption: StructuredCaption) -> dict:
    return {
        "dense": caption.dense,
        "main_object": caption.main_object,
        "background": caption.background,
        "movement": caption.movement,
        "style": caption.style,
        "camera": caption.camera,
    }


def _caption_from_dict(data: Mapping) -> StructuredCaption:
    try:
        return StructuredCaption(
            dense=str(data["dense"]),
            main_object=str(data["main_object"]),
            background=str(data["background"]),
            movement=str(data["movement"]),
            style=str(data["style"]),
            camera=str(data["camera"]),
        )
    except KeyError as exc:
        raise SchemaError("$.gold_caption", f"missing field {exc.args[0]!r}") from exc


def rl_record_to_dict(record: RlRecord) -> dict:
    return {
        "id": record.id,
        "instruction": record.instruction,
        "condition_types": list(record.condition_types),
        "key_info": record_to_dict(record.key_info),
        "gold_caption": (
            _caption_to_dict(record.gold_caption) if record.gold_caption else None
        ),
    }


def rl_record_from_dict(data: Mapping) -> RlRecord:
    try:
        key_info = record_from_dict(data["key_info"])
        gold = data.get("gold_caption")
        return RlRecord(
            id=str(data["id"]),
            instruction=str(data["instruction"]),
            condition_types=_check_conditions(data.get("condition_types", ())),
            key_info=key_info,
            gold_caption=_caption_from_dict(gold) if gold else None,
        )
    except KeyError as exc:
        raise SchemaError("$", f"missing field {exc.args[0]!r}") from exc


def _write_jsonl(path: str | Path, dicts: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for data in dicts:
            fh.write(json.dumps(data, ensure_ascii=False) + "\n")


def _read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def write_cot_records(path: str | Path, records: Iterable[CotRecord]) -> None:
    _write_jsonl(path, (cot_record_to_dict(r) for r in records))


def read_cot_records(path: str | Path) -> list[CotRecord]:
    return [cot_record_from_dict(d) for d in _read_jsonl(path)]


def write_rl_records(path: str | Path, records: Iterable[RlRecord]) -> None:
    _write_jsonl(path, (rl_record_to_dict(r) for r in records))


def read_rl_records(path: str | Path) -> list[RlRecord]:
    return [rl_record_from_dict(d) for d in _read_jsonl(path)]


# --- condition report -----------------------------------------------------------

_REPORT_COLUMNS = (
    ("identities", "IDs"),
    ("depth", "Depth"),
    ("camera", "Camera"),
    ("human_pose", "Human-pose"),
)


def condition_counts(records: Sequence) -> dict[str, int]:
    counts = {cond: 0 for cond, _ in _REPORT_COLUMNS}
    for record in records:
        for cond in record.condition_types:
            counts[cond] = counts.get(cond, 0) + 1
    counts["total"] = len(records)
    return counts


def render_condition_table(records: Sequence, style: str = "markdown") -> str:
    """Per-condition count table, one row, markdown or CSV."""
    counts = condition_counts(records)
    headers = [label for _, label in _REPORT_COLUMNS] + ["Total"]
    values = [str(counts[cond]) for cond, _ in _REPORT_COLUMNS] + [str(counts["total"])]
    if style == "csv":
        return "\n".join([",".join(headers), ",".join(values)]) + "\n"
    if style != "markdown":
        raise ValueError(f"unknown table style: {style!r}")
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    head = "| " + " | ".join(h.ljust(w) for h, w in zip(headers, widths)) + " |"
    rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    body = "| " + " | ".join(v.ljust(w) for v, w in zip(values, widths)) + " |"
    return "\n".join([head, rule, body]) + "\n"
