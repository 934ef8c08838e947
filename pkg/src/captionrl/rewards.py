"""Multi-dimensional content reward for candidate captions.

For one candidate the reward combines the format reward with coverage of
the three key-info element sets and a binary contradiction penalty:

    total = r_format + alpha * r_user + rho * r_detail + gamma * r_supp
            - lambda * r_contra

where r_user / r_detail / r_supp are the matched fractions of the user,
supplementary, and imaginary claim sets. The matching function is
pluggable: a deterministic lexical matcher (token-subsequence containment)
or a networked judge.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from . import kernels
from .keyinfo import Claim, ElementSet, KeyInfoRecord, element_set_to_dict, flatten_claims
from .parsing import format_reward, parse_response

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


@lru_cache(maxsize=4096)
def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, strip punctuation, split into word tokens."""
    return tuple(_WORD_RE.findall(text.lower()))


@runtime_checkable
class Matcher(Protocol):
    def match(self, claim: Claim, caption: str) -> bool: ...

    def contradiction(self, caption: str) -> bool: ...


@dataclass(frozen=True)
class RewardWeights:
    """Component weights (alpha, rho, gamma, lambda in the aggregation)."""

    alpha: float = 1.0
    rho: float = 1.0
    gamma: float = 0.8
    lambda_: float = 0.7

    def __post_init__(self):
        for name in ("alpha", "rho", "gamma", "lambda_"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be >= 0")

    @classmethod
    def from_mapping(cls, mapping) -> "RewardWeights":
        known = {k: float(v) for k, v in mapping.items() if k in ("alpha", "rho", "gamma", "lambda_")}
        if "lambda" in mapping:
            known["lambda_"] = float(mapping["lambda"])
        return cls(**known)


@dataclass(frozen=True)
class RewardBreakdown:
    r_format: float
    r_user: float
    r_detail: float
    r_supp: float
    r_contra: float
    total: float

    def to_dict(self) -> dict:
        return {
            "r_format": self.r_format,
            "r_user": self.r_user,
            "r_detail": self.r_detail,
            "r_supp": self.r_supp,
            "r_contra": self.r_contra,
            "total": self.total,
        }


class _TokenIndex:
    """Caption tokens interned to int32 ids for the matcher kernel."""

    def __init__(self, caption: str):
        tokens = tokenize(caption)
        self.ids_for_token: dict[str, int] = {}
        ids = np.empty(len(tokens), dtype=np.int32)
        for i, tok in enumerate(tokens):
            ids[i] = self.ids_for_token.setdefault(tok, len(self.ids_for_token))
        self.ids = ids

    def encode(self, phrase: str) -> np.ndarray | None:
        """Phrase token ids, or None when a token is absent from the caption
        (no containment possible)."""
        tokens = tokenize(phrase)
        out = np.empty(len(tokens), dtype=np.int32)
        for i, tok in enumerate(tokens):
            token_id = self.ids_for_token.get(tok)
            if token_id is None:
                return None
            out[i] = token_id
        return out


@lru_cache(maxsize=256)
def _index_for(caption: str) -> _TokenIndex:
    return _TokenIndex(caption)


class LexicalMatcher:
    """Deterministic matcher: a claim matches when its tokens occur as a
    contiguous token run in the caption (attribute claims additionally
    require the object name to occur somewhere).

    ``exclusions`` drives the contradiction check: triples
    (subject, first, second) flag a contradiction when the subject and both
    phrases all occur in the caption. The default empty list never flags.
    """

    def __init__(self, exclusions: Sequence[tuple[str, str, str]] = ()):
        self.exclusions = tuple(exclusions)

    def _contains(self, index: _TokenIndex, phrase: str) -> bool:
        needle = index.encode(phrase)
        if needle is None:
            return False
        if needle.size == 0:
            return False
        return bool(kernels.contains_ids(index.ids, needle))

    def match(self, claim: Claim, caption: str) -> bool:
        index = _index_for(caption)
        if claim.kind == "object_attribute":
            return self._contains(index, claim.subject) and self._contains(index, claim.value)
        return self._contains(index, claim.value)

    def match_many(self, claims: Sequence[Claim], caption: str) -> list[bool]:
        """Batch form of match(); one caption tokenization, one kernel call
        for the plain containment checks."""
        index = _index_for(caption)
        needles = []
        # Attribute claims need a second containment check on the subject.
        extra: list[tuple[int, str]] = []
        for pos, claim in enumerate(claims):
            if claim.kind == "object_attribute":
                extra.append((pos, claim.subject))
            needle = index.encode(claim.value)
            needles.append(needle if needle is not None and needle.size else None)

        empty = np.empty(0, dtype=np.int32)
        kernel_in = [n if n is not None else empty for n in needles]
        hits = kernels.batch_contains(index.ids, kernel_in)
        out = [bool(h) and needles[i] is not None for i, h in enumerate(hits)]
        for pos, subject in extra:
            if out[pos]:
                out[pos] = self._contains(index, subject)
        return out

    def contradiction(self, caption: str) -> bool:
        if not self.exclusions:
            return False
        index = _index_for(caption)
        for subject, first, second in self.exclusions:
            if (
                self._contains(index, subject)
                and self._contains(index, first)
                and self._contains(index, second)
            ):
                return True
        return False


def coverage_score(claims: Sequence[Claim], caption: str, matcher: Matcher) -> float:
    """Fraction of claims the matcher finds in the caption; 1.0 for an
    empty claim set (vacuous coverage)."""
    if not claims:
        return 1.0
    if isinstance(matcher, LexicalMatcher):
        matched = sum(matcher.match_many(claims, caption))
    else:
        matched = sum(1 for claim in claims if matcher.match(claim, caption))
    return matched / len(claims)


def aggregate_reward(
    r_format: float,
    r_user: float,
    r_detail: float,
    r_supp: float,
    r_contra: float,
    weights: RewardWeights = RewardWeights(),
) -> float:
    return (
        r_format
        + weights.alpha * r_user
        + weights.rho * r_detail
        + weights.gamma * r_supp
        - weights.lambda_ * r_contra
    )


def _set_coverage(element_set: ElementSet, caption: str, matcher: Matcher) -> float:
    claims = flatten_claims(element_set)
    if not claims:
        return 1.0
    if caption == "":
        return 0.0
    if getattr(matcher, "scores_whole_set", False):
        return matcher.set_coverage(json.dumps(element_set_to_dict(element_set)), caption)
    return coverage_score(claims, caption, matcher)


def score_candidate(
    raw_response: str,
    record: KeyInfoRecord,
    matcher: Matcher,
    weights: RewardWeights = RewardWeights(),
) -> RewardBreakdown:
    """Full reward breakdown for one raw model response.

    Coverage is computed over the answer text; a missing answer tag scores
    zero coverage on every non-empty claim set.
    """
    parsed = parse_response(raw_response)
    r_format = format_reward(parsed)
    answer = parsed.answer if parsed.answer_tag_ok and parsed.answer is not None else ""

    r_user = _set_coverage(record.user, answer, matcher)
    r_detail = _set_coverage(record.supplementary, answer, matcher)
    r_supp = _set_coverage(record.imaginary, answer, matcher)
    r_contra = 1.0 if matcher.contradiction(answer) else 0.0

    total = aggregate_reward(r_format, r_user, r_detail, r_supp, r_contra, weights)
    return RewardBreakdown(
        r_format=r_format,
        r_user=r_user,
        r_detail=r_detail,
        r_supp=r_supp,
        r_contra=r_contra,
        total=total,
    )
