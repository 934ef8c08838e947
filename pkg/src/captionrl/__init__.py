"""Reward harness for structured video-caption generation.

Parses tagged reasoning/answer responses, validates six-part structured
captions, computes the multi-dimensional caption reward (lexically or
through an LLM judge), and provides group-relative policy-optimization
numerics with a toy end-to-end trainer. A CLI exposes the batch
workflows; see ``captionrl --help``.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    CaptionFormatError,
    CaptionRlError,
    DuplicateObject,
    EmptyAnswer,
    EmptySection,
    EmptySequence,
    EmptyStep,
    GroupTooSmall,
    HttpError,
    JudgeError,
    JudgeTimeout,
    MatcherUnavailable,
    MissingSection,
    OutOfOrder,
    OutOfRange,
    ParseFailure,
    SchemaError,
    ShapeMismatch,
    UnknownRecordId,
)
from .grpo import (
    GrpoConfig,
    GrpoStats,
    RolloutGroup,
    ToyPolicy,
    ToyTaskSpec,
    ToyTrainConfig,
    ToyTrainResult,
    default_toy_task,
    gradient_check,
    group_advantages,
    grpo_loss,
    sft_loss,
    toy_score,
    train_toy,
)
from .judge import (
    JudgeClient,
    JudgeConfig,
    JudgeMatcher,
    ScoreCache,
    StabilityReport,
    parse_final_score,
    request_score,
    stability_report,
)
from .keyinfo import (
    Claim,
    ElementSet,
    KeyInfoRecord,
    ObjectSpec,
    flatten_claims,
    read_records,
    record_from_dict,
    record_to_dict,
    validate_record,
    write_records,
)
from .parsing import (
    ParsedResponse,
    StructuredCaption,
    format_reward,
    parse_response,
    parse_structured_caption,
    render_response,
    render_structured_caption,
)
from .pipeline import (
    CONDITION_TYPES,
    BalanceReport,
    CotRecord,
    ExtractionResult,
    RlRecord,
    assemble_cot_record,
    balance_sample,
    condition_counts,
    cot_record_from_dict,
    cot_record_to_dict,
    dedup_records,
    extract_key_info,
    normalize_instruction,
    read_cot_records,
    read_rl_records,
    render_condition_table,
    rl_record_from_dict,
    rl_record_to_dict,
    write_cot_records,
    write_rl_records,
)
from .rewards import (
    LexicalMatcher,
    RewardBreakdown,
    RewardWeights,
    aggregate_reward,
    coverage_score,
    score_candidate,
    tokenize,
)

__all__ = [
    "__version__",
    "CaptionRlError",
    "CaptionFormatError",
    "MissingSection",
    "EmptySection",
    "OutOfOrder",
    "SchemaError",
    "DuplicateObject",
    "MatcherUnavailable",
    "JudgeError",
    "ParseFailure",
    "OutOfRange",
    "JudgeTimeout",
    "HttpError",
    "ShapeMismatch",
    "GroupTooSmall",
    "EmptySequence",
    "EmptyStep",
    "EmptyAnswer",
    "UnknownRecordId",
    "ParsedResponse",
    "StructuredCaption",
    "parse_response",
    "parse_structured_caption",
    "render_response",
    "render_structured_caption",
    "format_reward",
    "ObjectSpec",
    "ElementSet",
    "KeyInfoRecord",
    "Claim",
    "flatten_claims",
    "record_from_dict",
    "record_to_dict",
    "validate_record",
    "read_records",
    "write_records",
    "tokenize",
    "LexicalMatcher",
    "RewardWeights",
    "RewardBreakdown",
    "coverage_score",
    "aggregate_reward",
    "score_candidate",
    "JudgeConfig",
    "JudgeClient",
    "JudgeMatcher",
    "ScoreCache",
    "parse_final_score",
    "request_score",
    "StabilityReport",
    "stability_report",
    "GrpoConfig",
    "GrpoStats",
    "RolloutGroup",
    "group_advantages",
    "grpo_loss",
    "sft_loss",
    "ToyPolicy",
    "ToyTaskSpec",
    "ToyTrainConfig",
    "ToyTrainResult",
    "default_toy_task",
    "toy_score",
    "gradient_check",
    "train_toy",
    "CONDITION_TYPES",
    "CotRecord",
    "RlRecord",
    "BalanceReport",
    "ExtractionResult",
    "assemble_cot_record",
    "normalize_instruction",
    "dedup_records",
    "balance_sample",
    "extract_key_info",
    "cot_record_to_dict",
    "cot_record_from_dict",
    "rl_record_to_dict",
    "rl_record_from_dict",
    "read_cot_records",
    "write_cot_records",
    "read_rl_records",
    "write_rl_records",
    "condition_counts",
    "render_condition_table",
]
