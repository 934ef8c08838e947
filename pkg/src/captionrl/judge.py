"""Networked judge client for coverage scoring, plus stability analysis.

The judge is any chat-completions-compatible endpoint. One request renders
the scoring prompt with a key-info JSON object and the candidate caption;
the reply must contain a line ``Final Score: <x>`` with x in [0, 1].
Scores are cached by (model, rendered prompt, sampling params) so repeated
queries never touch the network twice.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import statistics
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import requests

from .errors import (
    HttpError,
    JudgeTimeout,
    MatcherUnavailable,
    OutOfRange,
    ParseFailure,
    ShapeMismatch,
)
from .keyinfo import Claim

ENDPOINT_ENV = "REWARD_JUDGE_ENDPOINT"
API_KEY_ENV = "REWARD_JUDGE_API_KEY"

_FINAL_SCORE_RE = re.compile(r"Final Score:\s*\[?\s*([-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*\]?")


def load_prompt_template(name: str = "judge_prompt.txt") -> str:
    return resources.files("captionrl.assets").joinpath(name).read_text(encoding="utf-8")


def render_judge_prompt(key_info_json: str, candidate: str) -> str:
    return load_prompt_template().format(json_data=key_info_json, prediction=candidate)


@dataclass(frozen=True)
class JudgeConfig:
    endpoint: str = ""
    model_name: str = "Qwen3-30B-A3B-Instruct-2507"
    max_new_tokens: int = 50
    temperature: float = 0.3
    top_p: float = 1.0
    timeout: float = 60.0
    max_retries: int = 2
    cache_path: str | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, **overrides) -> "JudgeConfig":
        """Config with endpoint/credential falling back to the environment."""
        if "endpoint" not in overrides or not overrides["endpoint"]:
            overrides["endpoint"] = os.environ.get(ENDPOINT_ENV, "")
        return cls(**overrides)


class Transport(Protocol):
    """One chat request in, the assistant's text reply out."""

    def send(self, payload: dict, timeout: float) -> str: ...


class HttpTransport:
    """POSTs chat-completions JSON to the configured endpoint."""

    def __init__(self, endpoint: str, api_key: str | None = None):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)

    def send(self, payload: dict, timeout: float) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(self.endpoint, json=payload, headers=headers, timeout=timeout)
        except requests.Timeout as exc:
            raise JudgeTimeout(str(exc)) from exc
        except requests.RequestException as exc:
            raise HttpError(0, str(exc)) from exc
        if response.status_code != 200:
            raise HttpError(response.status_code, response.text[:500])
        body = response.json()
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise HttpError(response.status_code, "malformed completion body") from exc


class ScoreCache:
    """Append-only JSONL score cache, safe under concurrent access."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._scores: dict[str, float] = {}
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entry = json.loads(line)
                        self._scores[entry["key"]] = entry["score"]

    def get(self, key: str) -> float | None:
        with self._lock:
            return self._scores.get(key)

    def put(self, key: str, score: float) -> None:
        with self._lock:
            if key in self._scores:
                return
            self._scores[key] = score
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "score": score}) + "\n")


def _cache_key(cfg: JudgeConfig, prompt: str) -> str:
    material = json.dumps(
        {
            "model": cfg.model_name,
            "prompt": prompt,
            "max_new_tokens": cfg.max_new_tokens,
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


def _chat_payload(cfg: JudgeConfig, prompt: str, max_tokens: int | None = None) -> dict:
    return {
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "max_tokens": max_tokens if max_tokens is not None else cfg.max_new_tokens,
        "temperature": cfg.temperature,
        "top_p": cfg.top_p,
    }


def chat(
    cfg: JudgeConfig,
    prompt: str,
    transport: Transport | None = None,
    max_tokens: int | None = None,
) -> str:
    """Single chat-completion round trip, no score parsing."""
    if transport is None:
        transport = HttpTransport(cfg.endpoint)
    return transport.send(_chat_payload(cfg, prompt, max_tokens), cfg.timeout)


def parse_final_score(reply: str) -> float | None:
    """Score from the first line matching ``Final Score: <x>``; None when
    no line matches."""
    for line in reply.splitlines():
        m = _FINAL_SCORE_RE.search(line)
        if m:
            return float(m.group(1))
    return None


def request_score(
    cfg: JudgeConfig,
    key_info_json: str,
    candidate: str,
    transport: Transport | None = None,
    cache: ScoreCache | None = None,
) -> float:
    """Render the scoring prompt, query the judge, parse the score.

    Malformed replies are re-requested up to cfg.max_retries times before
    ParseFailure. Out-of-range scores raise OutOfRange immediately; no
    clamping, since silent clamping would mask judge drift.
    """
    if not key_info_json or not candidate:
        raise ValueError("key_info_json and candidate must be non-empty")
    prompt = render_judge_prompt(key_info_json, candidate)
    key = _cache_key(cfg, prompt)
    if cache is None and cfg.cache_path:
        cache = ScoreCache(cfg.cache_path)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit

    if transport is None:
        transport = HttpTransport(cfg.endpoint)
    payload = _chat_payload(cfg, prompt)

    attempts = cfg.max_retries + 1
    reply = ""
    for _ in range(attempts):
        reply = transport.send(payload, cfg.timeout)
        score = parse_final_score(reply)
        if score is None:
            continue
        if not 0.0 <= score <= 1.0:
            raise OutOfRange(score)
        if cache is not None:
            cache.put(key, score)
        return score
    raise ParseFailure(reply, attempts)


class JudgeClient:
    """Bound (config, transport, cache) triple for repeated scoring."""

    def __init__(
        self,
        cfg: JudgeConfig,
        transport: Transport | None = None,
        cache: ScoreCache | None = None,
    ):
        self.cfg = cfg
        self.transport = transport if transport is not None else HttpTransport(cfg.endpoint)
        self.cache = cache if cache is not None else (
            ScoreCache(cfg.cache_path) if cfg.cache_path else None
        )

    def score(self, key_info_json: str, candidate: str) -> float:
        return request_score(
            self.cfg, key_info_json, candidate, transport=self.transport, cache=self.cache
        )


class JudgeMatcher:
    """Matcher backed by a judge endpoint.

    Whole element sets are scored with one request (the prompt already
    aggregates per-value support into a coverage fraction); per-claim
    match() renders a single-value JSON object and thresholds the score
    at 0.5. Transport failures surface as MatcherUnavailable.
    """

    scores_whole_set = True

    def __init__(self, client: JudgeClient, contradiction_check: Callable[[str], bool] | None = None):
        self.client = client
        self._contradiction_check = contradiction_check

    def set_coverage(self, key_info_json: str, caption: str) -> float:
        try:
            return self.client.score(key_info_json, caption)
        except (ParseFailure, JudgeTimeout, HttpError) as exc:
            raise MatcherUnavailable(str(exc)) from exc

    def match(self, claim: Claim, caption: str) -> bool:
        if claim.kind == "object_presence":
            payload = {"objects": [{"name": claim.value, "attributes": []}],
                       "actions": [], "camera": [], "style": []}
        elif claim.kind == "object_attribute":
            payload = {"objects": [{"name": claim.subject, "attributes": [claim.value]}],
                       "actions": [], "camera": [], "style": []}
        else:
            payload = {"objects": [], "actions": [], "camera": [], "style": []}
            payload[claim.kind] = [claim.value]
        return self.set_coverage(json.dumps(payload), caption) >= 0.5

    def contradiction(self, caption: str) -> bool:
        if self._contradiction_check is None:
            return False
        return self._contradiction_check(caption)


# --- judge stability ----------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    per_item_variance: tuple[float, ...]
    mean_variance: float
    median_variance: float
    mean_cv: float
    mean_vs_variance_correlation: float
    agreement_mae: float | None = None

    def to_dict(self) -> dict:
        return {
            "per_item_variance": list(self.per_item_variance),
            "mean_variance": self.mean_variance,
            "median_variance": self.median_variance,
            "mean_cv": self.mean_cv,
            "mean_vs_variance_correlation": self.mean_vs_variance_correlation,
            "agreement_mae": self.agreement_mae,
        }


def stability_report(
    score_matrix: Sequence[Sequence[float]],
    reference_scores: Sequence[float] | None = None,
) -> StabilityReport:
    """Descriptive statistics over repeated judge predictions.

    Rows are items, columns are repeats (>= 2 per row). Variances are
    population (divide by n) variances. Row CV is std/mean, 0 for rows
    with zero mean. The correlation is Pearson's between row means and
    row variances (0 when either side is constant). agreement_mae is the
    mean absolute difference between row means and the reference scores.
    """
    if not score_matrix:
        raise ShapeMismatch("score matrix must have at least one row")
    for i, row in enumerate(score_matrix):
        if len(row) < 2:
            raise ShapeMismatch(f"row {i} has {len(row)} repeats; need >= 2")
    if reference_scores is not None and len(reference_scores) != len(score_matrix):
        raise ShapeMismatch(
            f"{len(reference_scores)} reference scores for {len(score_matrix)} rows"
        )

    means = np.array([float(np.mean(row)) for row in score_matrix])
    variances = np.array([float(np.var(row)) for row in score_matrix])
    stds = np.sqrt(variances)
    cvs = np.where(means != 0.0, stds / np.where(means != 0.0, means, 1.0), 0.0)

    if len(means) < 2 or float(np.std(means)) == 0.0 or float(np.std(variances)) == 0.0:
        correlation = 0.0
    else:
        correlation = float(np.corrcoef(means, variances)[0, 1])

    agreement = None
    if reference_scores is not None:
        agreement = float(np.mean(np.abs(means - np.asarray(reference_scores, dtype=float))))

    return StabilityReport(
        per_item_variance=tuple(float(v) for v in variances),
        mean_variance=float(np.mean(variances)),
        median_variance=float(statistics.median(variances.tolist())),
        mean_cv=float(np.mean(cvs)),
        mean_vs_variance_correlation=correlation,
        agreement_mae=agreement,
    )
