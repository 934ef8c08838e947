"""Group-relative policy optimization on log-probability sequences.

Everything here works on plain arrays so it stays agnostic to how the
rollouts were produced. A rollout group is G responses to one prompt,
each carrying per-token log-probabilities under the new, old, and
reference policies. Advantages are reward z-scores within the group;
the loss is the clipped-ratio surrogate with a KL penalty toward the
reference policy.

The toy policy at the bottom exercises the full loop end to end: a
positional softmax over a small vocabulary learns to emit sentinel
markers and claim words, driven only by the scalar reward.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmptySequence, GroupTooSmall, ShapeMismatch
from .keyinfo import Claim
from .rewards import LexicalMatcher, RewardWeights, aggregate_reward, coverage_score

_LOGPROB_SLACK = 1e-9


@dataclass(frozen=True)
class GrpoConfig:
    epsilon: float = 0.2
    beta: float = 0.001
    group_size: int = 8
    degenerate_std_epsilon: float = 1e-8
    per_token_ratio: bool = False
    kl_estimator: str = "k3"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if self.kl_estimator not in ("k3", "k1"):
            raise ValueError(f"unknown kl estimator: {self.kl_estimator!r}")


def _as_arrays(name: str, seqs: Sequence[Sequence[float]]) -> tuple[np.ndarray, ...]:
    out = []
    for i, seq in enumerate(seqs):
        arr = np.asarray(seq, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeMismatch(f"{name}[{i}] must be one-dimensional")
        if arr.size == 0:
            raise EmptySequence(f"{name}[{i}] has no tokens")
        if np.any(arr > _LOGPROB_SLACK):
            raise ValueError(f"{name}[{i}] contains log-probabilities above zero")
        out.append(arr)
    return tuple(out)


@dataclass(frozen=True)
class RolloutGroup:
    """G sampled responses to one prompt with their per-token logprobs."""

    prompt_id: str
    rewards: tuple[float, ...]
    logp_new: tuple[np.ndarray, ...]
    logp_old: tuple[np.ndarray, ...]
    logp_ref: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.rewards) < 2:
            raise GroupTooSmall(len(self.rewards))
        sizes = {len(self.logp_new), len(self.logp_old), len(self.logp_ref), len(self.rewards)}
        if len(sizes) != 1:
            raise ShapeMismatch(f"inconsistent group sizes: {sorted(sizes)}")
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        object.__setattr__(self, "logp_new", _as_arrays("logp_new", self.logp_new))
        object.__setattr__(self, "logp_old", _as_arrays("logp_old", self.logp_old))
        object.__setattr__(self, "logp_ref", _as_arrays("logp_ref", self.logp_ref))
        for i, (a, b, c) in enumerate(zip(self.logp_new, self.logp_old, self.logp_ref)):
            if not (a.shape == b.shape == c.shape):
                raise ShapeMismatch(f"response {i} logprob lengths disagree")

    @property
    def size(self) -> int:
        return len(self.rewards)

    @property
    def token_counts(self) -> tuple[int, ...]:
        return tuple(arr.size for arr in self.logp_new)


def group_advantages(rewards: Sequence[float], degenerate_std_epsilon: float = 1e-8) -> np.ndarray:
    """Reward z-scores within one group (population standard deviation).

    A group whose rewards barely vary carries no ranking signal, so its
    advantages are all zero rather than amplified noise.
    """
    arr = np.asarray(rewards, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatch("rewards must be one-dimensional")
    if arr.size < 2:
        raise GroupTooSmall(arr.size)
    std = float(np.std(arr))
    if std < degenerate_std_epsilon:
        return np.zeros_like(arr)
    return (arr - arr.mean()) / std


def _kl_per_token(logp_new: np.ndarray, logp_ref: np.ndarray, estimator: str) -> np.ndarray:
    delta = logp_ref - logp_new
    if estimator == "k3":
        return np.exp(delta) - delta - 1.0
    return -delta


@dataclass(frozen=True)
class GrpoStats:
    loss: float
    surrogate: float
    kl: float
    advantages: tuple[float, ...]
    ratios: tuple[float, ...]
    clipped_fraction: float

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "surrogate": self.surrogate,
            "kl": self.kl,
            "advantages": list(self.advantages),
            "ratios": list(self.ratios),
            "clipped_fraction": self.clipped_fraction,
        }


def grpo_loss(group: RolloutGroup, cfg: GrpoConfig | None = None) -> GrpoStats:
    """Clipped-ratio surrogate with KL penalty, averaged over the group.

    The ratio is sequence-level by default: exp of the difference of
    summed logprobs. Token averages happen within each response first,
    then across responses, so long responses do not dominate the KL.
    Returned loss is the quantity to minimize:
    -(mean surrogate) + beta * KL.
    """
    if cfg is None:
        cfg = GrpoConfig()
    lo, hi = 1.0 - cfg.epsilon, 1.0 + cfg.epsilon
    adv = group_advantages(group.rewards, cfg.degenerate_std_epsilon)

    surrogates = np.empty(group.size)
    ratios = np.empty(group.size)
    kls = np.empty(group.size)
    clipped = 0
    for i in range(group.size):
        new, old, ref = group.logp_new[i], group.logp_old[i], group.logp_ref[i]
        if cfg.per_token_ratio:
            r_t = np.exp(new - old)
            surr_t = np.minimum(r_t * adv[i], np.clip(r_t, lo, hi) * adv[i])
            surrogates[i] = float(surr_t.mean())
            ratios[i] = float(r_t.mean())
            if np.any((r_t < lo) | (r_t > hi)):
                clipped += 1
        else:
            r = float(np.exp(new.sum() - old.sum()))
            surrogates[i] = min(r * adv[i], min(max(r, lo), hi) * adv[i])
            ratios[i] = r
            if r < lo or r > hi:
                clipped += 1
        kls[i] = float(_kl_per_token(new, ref, cfg.kl_estimator).mean())

    surrogate = float(surrogates.mean())
    kl = float(kls.mean())
    return GrpoStats(
        loss=-surrogate + cfg.beta * kl,
        surrogate=surrogate,
        kl=kl,
        advantages=tuple(float(a) for a in adv),
        ratios=tuple(float(r) for r in ratios),
        clipped_fraction=clipped / group.size,
    )


def sft_loss(logprobs: Sequence[Sequence[float]]) -> float:
    """Mean negative log-likelihood per token, pooled over all sequences."""
    arrays = _as_arrays("logprobs", logprobs)
    total = sum(float(a.sum()) for a in arrays)
    count = sum(a.size for a in arrays)
    return -total / count


# --- toy policy and task -------------------------------------------------------

THINK_MARK = "#"
ANSWER_MARK = "$"

_FILLER = (
    "the", "a", "an", "is", "was", "on", "in", "at", "it", "to",
    "and", "of", "with", "by", "for", "up", "out", "off", "so", "as",
    "red", "blue", "green",
)


@dataclass(frozen=True)
class ToyTaskSpec:
    """Tiny sentinel-format captioning task for the trainer and checks.

    A response is a fixed-length token sequence. The think mark must
    appear exactly once, the answer mark exactly once and after it, with
    at least one token following. Tokens after the answer mark form the
    caption; claim coverage is scored lexically with the same weights as
    the full reward.
    """

    vocab: tuple[str, ...]
    max_length: int
    user_claims: tuple[Claim, ...]
    detail_claims: tuple[Claim, ...]
    supp_claims: tuple[Claim, ...]
    weights: RewardWeights = RewardWeights()

    def __post_init__(self):
        if THINK_MARK not in self.vocab or ANSWER_MARK not in self.vocab:
            raise ValueError("vocab must contain both sentinel marks")
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocab tokens must be unique")
        if self.max_length < 4:
            raise ValueError("max_length must leave room for marks and content")


def default_toy_task(vocab_size: int = 30, max_length: int = 16) -> ToyTaskSpec:
    claim_words = ("cat", "dog", "running", "jumping", "bright")
    base = (THINK_MARK, ANSWER_MARK) + claim_words
    if vocab_size < len(base):
        raise ValueError(f"vocab_size must be at least {len(base)}")
    fill = [w for w in _FILLER if w not in base][: vocab_size - len(base)]
    if len(base) + len(fill) < vocab_size:
        fill += [f"w{k}" for k in range(vocab_size - len(base) - len(fill))]
    return ToyTaskSpec(
        vocab=base + tuple(fill),
        max_length=max_length,
        user_claims=(
            Claim("object_presence", "cat", "cat"),
            Claim("object_presence", "dog", "dog"),
        ),
        detail_claims=(
            Claim("action", "", "running"),
            Claim("action", "", "jumping"),
        ),
        supp_claims=(Claim("style", "", "bright"),),
    )


def toy_format_flags(tokens: Sequence[str]) -> tuple[bool, bool]:
    think_positions = [i for i, t in enumerate(tokens) if t == THINK_MARK]
    answer_positions = [i for i, t in enumerate(tokens) if t == ANSWER_MARK]
    think_ok = len(think_positions) == 1
    answer_ok = (
        len(answer_positions) == 1
        and answer_positions[0] < len(tokens) - 1
        and (not think_positions or answer_positions[0] > max(think_positions))
    )
    return think_ok, answer_ok


def toy_score(tokens: Sequence[str], spec: ToyTaskSpec) -> float:
    """Reward for one toy response: format contribution plus weighted
    lexical claim coverage of the caption after the answer mark."""
    think_ok, answer_ok = toy_format_flags(tokens)
    if think_ok and answer_ok:
        r_format = 1.0
    elif think_ok or answer_ok:
        r_format = 0.2
    else:
        r_format = 0.0
    caption = ""
    if answer_ok:
        toks = list(tokens)
        caption = " ".join(toks[toks.index(ANSWER_MARK) + 1 :])
    matcher = LexicalMatcher()
    r_user = coverage_score(spec.user_claims, caption, matcher)
    r_detail = coverage_score(spec.detail_claims, caption, matcher)
    r_supp = coverage_score(spec.supp_claims, caption, matcher)
    return aggregate_reward(r_format, r_user, r_detail, r_supp, 0.0, spec.weights)


class ToyPolicy:
    """Positional softmax policy: an independent categorical per slot.

    The whole parameter set is one (max_length, vocab) logits table,
    which keeps gradients exact and cheap while still giving the loss a
    real sequence model to push around.
    """

    def __init__(self, max_length: int, vocab_size: int, theta: np.ndarray | None = None):
        if theta is None:
            theta = np.zeros((max_length, vocab_size))
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (max_length, vocab_size):
            raise ShapeMismatch(
                f"theta shape {theta.shape} != ({max_length}, {vocab_size})"
            )
        self.max_length = max_length
        self.vocab_size = vocab_size
        self.theta = theta

    def log_softmax(self) -> np.ndarray:
        shifted = self.theta - self.theta.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def probs(self) -> np.ndarray:
        return np.exp(self.log_softmax())

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """(count, max_length) token-id matrix drawn slot by slot."""
        p = self.probs()
        cums = p.cumsum(axis=1)
        cums[:, -1] = 1.0
        draws = rng.random((count, self.max_length))
        out = np.empty((count, self.max_length), dtype=np.int64)
        for t in range(self.max_length):
            out[:, t] = np.searchsorted(cums[t], draws[:, t], side="right")
        return out

    def token_logprobs(self, token_ids: np.ndarray) -> np.ndarray:
        """Per-token logprobs for a (batch, max_length) id matrix."""
        ls = self.log_softmax()
        return ls[np.arange(self.max_length)[None, :], token_ids]


def toy_loss_and_grad(
    theta: np.ndarray,
    token_ids: np.ndarray,
    logp_old: np.ndarray,
    logp_ref: np.ndarray,
    advantages: np.ndarray,
    cfg: GrpoConfig,
) -> tuple[float, np.ndarray, float]:
    """Loss, its exact gradient in the logits table, and the KL term.

    Only the new-policy logprobs depend on theta; tokens, old and
    reference logprobs are data. The surrogate min() passes gradient
    through the unclipped branch when it is active and none otherwise,
    and the per-token softmax Jacobian (one-hot minus probabilities)
    chains the rest.
    """
    group, length = token_ids.shape
    lo, hi = 1.0 - cfg.epsilon, 1.0 + cfg.epsilon

    shifted = theta - theta.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    p = np.exp(shifted - log_z[:, None])
    pos = np.arange(length)
    logp_new = theta[pos[None, :], token_ids] - (theta.max(axis=1) + log_z)[None, :]

    s_new = logp_new.sum(axis=1)
    s_old = logp_old.sum(axis=1)
    ratios = np.exp(s_new - s_old)
    unclipped = ratios * advantages
    clipped = np.clip(ratios, lo, hi) * advantages
    surr = np.minimum(unclipped, clipped)
    use_unclipped = unclipped <= clipped

    delta = logp_ref - logp_new
    if cfg.kl_estimator == "k3":
        kl_tokens = np.exp(delta) - delta - 1.0
        dkl_dnew = 1.0 - np.exp(delta)
    else:
        kl_tokens = -delta
        dkl_dnew = np.ones_like(delta)
    kl = float(kl_tokens.mean(axis=1).mean())
    loss = -float(surr.mean()) + cfg.beta * kl

    # Per-token weight on d logp_new[i, t] / d theta.
    w = np.zeros((group, length))
    coeff = np.where(use_unclipped, advantages * ratios, 0.0)
    w += (-coeff / group)[:, None]
    w += cfg.beta * dkl_dnew / (group * length)

    grad = np.zeros_like(theta)
    np.add.at(grad, (np.broadcast_to(pos, (group, length)), token_ids), w)
    grad -= (w.sum(axis=0))[:, None] * p
    return loss, grad, kl


def gradient_check(
    seed: int = 0,
    vocab_size: int = 12,
    max_length: int = 8,
    group_size: int = 4,
    cfg: GrpoConfig | None = None,
    fd_step: float = 1e-5,
) -> float:
    """Max elementwise relative error between the analytic gradient and
    central finite differences on a random small instance."""
    if cfg is None:
        cfg = GrpoConfig(group_size=max(group_size, 2))
    rng = np.random.default_rng(seed)
    for attempt in range(50):
        theta_old = rng.normal(scale=0.5, size=(max_length, vocab_size))
        theta = theta_old + rng.normal(scale=0.05, size=theta_old.shape)
        theta_ref = theta_old + rng.normal(scale=0.05, size=theta_old.shape)

        old_policy = ToyPolicy(max_length, vocab_size, theta_old)
        ref_policy = ToyPolicy(max_length, vocab_size, theta_ref)
        token_ids = old_policy.sample(rng, group_size)
        logp_old = old_policy.token_logprobs(token_ids)
        logp_ref = ref_policy.token_logprobs(token_ids)
        rewards = rng.random(group_size)
        advantages = group_advantages(rewards, cfg.degenerate_std_epsilon)

        new_policy = ToyPolicy(max_length, vocab_size, theta)
        s_new = new_policy.token_logprobs(token_ids).sum(axis=1)
        ratios = np.exp(s_new - logp_old.sum(axis=1))
        margins = np.minimum(np.abs(ratios - (1 - cfg.epsilon)), np.abs(ratios - (1 + cfg.epsilon)))
        if margins.min() < 1e-3:
            continue  # too close to a clip kink for finite differences
        break
    else:
        raise RuntimeError("could not sample a well-conditioned check instance")

    _, analytic, _ = toy_loss_and_grad(theta, token_ids, logp_old, logp_ref, advantages, cfg)

    fd = np.zeros_like(theta)
    for t in range(max_length):
        for v in range(vocab_size):
            bump = np.zeros_like(theta)
            bump[t, v] = fd_step
            up, _, _ = toy_loss_and_grad(theta + bump, token_ids, logp_old, logp_ref, advantages, cfg)
            down, _, _ = toy_loss_and_grad(theta - bump, token_ids, logp_old, logp_ref, advantages, cfg)
            fd[t, v] = (up - down) / (2 * fd_step)

    scale = np.maximum(np.abs(analytic), np.abs(fd))
    err = np.where(scale < 1e-8, 0.0, np.abs(analytic - fd) / np.where(scale < 1e-8, 1.0, scale))
    return float(err.max())


# --- toy trainer ---------------------------------------------------------------


@dataclass(frozen=True)
class ToyTrainConfig:
    seed: int = 0
    iterations: int = 300
    group_size: int = 8
    learning_rate: float = 1.0
    vocab_size: int = 30
    max_length: int = 16
    epsilon: float = 0.2
    beta: float = 0.001

    def grpo(self) -> GrpoConfig:
        return GrpoConfig(epsilon=self.epsilon, beta=self.beta, group_size=self.group_size)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    mean_reward: float
    loss: float
    kl: float


@dataclass(frozen=True)
class ToyTrainResult:
    trace: tuple[TraceRow, ...]
    final_theta: np.ndarray
    elapsed_seconds: float

    def window_means(self, window: int = 20) -> tuple[float, float]:
        rewards = [row.mean_reward for row in self.trace]
        first = float(np.mean(rewards[:window]))
        last = float(np.mean(rewards[-window:]))
        return first, last

    def summary(self, window: int = 20) -> dict:
        first, last = self.window_means(window)
        return {
            "iterations": len(self.trace),
            "first_window_mean_reward": first,
            "final_window_mean_reward": last,
            "improvement_ratio": last / first if first > 0 else float("inf"),
            "final_loss": self.trace[-1].loss,
            "final_kl": self.trace[-1].kl,
            "elapsed_seconds": self.elapsed_seconds,
        }


def train_toy(
    cfg: ToyTrainConfig | None = None,
    spec: ToyTaskSpec | None = None,
    score_fn: Callable[[Sequence[str]], float] | None = None,
) -> ToyTrainResult:
    """Train the toy policy with one clipped-surrogate step per batch.

    The sampling policy is snapshotted each iteration (so ratios start
    at 1) and the reference policy is the initial table. Identical seeds
    give bit-identical traces.
    """
    if cfg is None:
        cfg = ToyTrainConfig()
    if spec is None:
        spec = default_toy_task(cfg.vocab_size, cfg.max_length)
    if score_fn is None:
        task = spec

        def score_fn(toks: Sequence[str]) -> float:
            return toy_score(toks, task)

    if len(spec.vocab) != cfg.vocab_size:
        raise ShapeMismatch(
            f"task vocab size {len(spec.vocab)} != configured {cfg.vocab_size}"
        )

    rng = np.random.default_rng(cfg.seed)
    grpo_cfg = cfg.grpo()
    policy = ToyPolicy(cfg.max_length, cfg.vocab_size)
    theta_ref = policy.theta.copy()
    ref_policy = ToyPolicy(cfg.max_length, cfg.vocab_size, theta_ref)

    start = time.perf_counter()
    trace = []
    for step in range(cfg.iterations):
        token_ids = policy.sample(rng, cfg.group_size)
        logp_old = policy.token_logprobs(token_ids)
        logp_ref = ref_policy.token_logprobs(token_ids)
        rewards = np.array(
            [score_fn([spec.vocab[j] for j in row]) for row in token_ids]
        )
        advantages = group_advantages(rewards, grpo_cfg.degenerate_std_epsilon)
        loss, grad, kl = toy_loss_and_grad(
            policy.theta, token_ids, logp_old, logp_ref, advantages, grpo_cfg
        )
        policy.theta = policy.theta - cfg.learning_rate * grad
        trace.append(
            TraceRow(
                iteration=step,
                mean_reward=float(rewards.mean()),
                loss=loss,
                kl=kl,
            )
        )
    elapsed = time.perf_counter() - start
    return ToyTrainResult(trace=tuple(trace), final_theta=policy.theta, elapsed_seconds=elapsed)


def write_trace_csv(path: str | Path, trace: Iterable[TraceRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "mean_reward", "loss", "kl"])
        for row in trace:
            writer.writerow([row.iteration, repr(row.mean_reward), repr(row.loss), repr(row.kl)])


def write_summary_json(path: str | Path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
