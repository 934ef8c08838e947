from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from captionrl import (
    EmptySequence,
    GroupTooSmall,
    GrpoConfig,
    RolloutGroup,
    ShapeMismatch,
    ToyPolicy,
    ToyTrainConfig,
    default_toy_task,
    gradient_check,
    group_advantages,
    grpo_loss,
    sft_loss,
    toy_score,
    train_toy,
)
from captionrl.grpo import toy_format_flags, toy_loss_and_grad
from _support import oracle_advantages, oracle_grpo_loss, oracle_sft_loss

REWARDS = st.lists(st.floats(-5, 5), min_size=2, max_size=16)


def random_group(rng: np.random.Generator, size: int = 4, max_len: int = 6) -> RolloutGroup:
    lengths = rng.integers(1, max_len + 1, size=size)
    return RolloutGroup(
        prompt_id="g",
        rewards=tuple(rng.random(size)),
        logp_new=tuple(-rng.random(n) for n in lengths),
        logp_old=tuple(-rng.random(n) for n in lengths),
        logp_ref=tuple(-rng.random(n) for n in lengths),
    )


@given(REWARDS)
def test_advantages_are_zscores(rewards):
    adv = group_advantages(rewards)
    if np.std(rewards) < 1e-8:
        assert np.all(adv == 0.0)
    else:
        assert abs(adv.mean()) < 1e-9
        assert abs(adv.std() - 1.0) < 1e-9


@given(REWARDS, st.floats(-10, 10), st.floats(0.5, 4))
def test_advantages_shift_scale_invariant(rewards, shift, scale):
    base = group_advantages(rewards)
    shifted = group_advantages([r + shift for r in rewards])
    scaled = group_advantages([r * scale for r in rewards])
    assert np.allclose(base, shifted, atol=1e-9)
    assert np.allclose(base, scaled, atol=1e-9)


@given(REWARDS)
def test_advantages_match_oracle(rewards):
    assert group_advantages(rewards) == pytest.approx(oracle_advantages(rewards), abs=1e-9)


def test_advantages_examples():
    assert list(group_advantages([0.0, 1.0])) == [-1.0, 1.0]
    assert list(group_advantages([3.0, 3.0, 3.0, 3.0])) == [0.0, 0.0, 0.0, 0.0]
    with pytest.raises(GroupTooSmall):
        group_advantages([1.0])
    with pytest.raises(ShapeMismatch):
        group_advantages(np.zeros((2, 2)))


def test_rollout_group_validation():
    ok = -np.ones(3)
    with pytest.raises(GroupTooSmall):
        RolloutGroup("p", (1.0,), (ok,), (ok,), (ok,))
    with pytest.raises(ShapeMismatch):
        RolloutGroup("p", (1.0, 2.0), (ok,), (ok, ok), (ok, ok))
    with pytest.raises(ShapeMismatch):
        RolloutGroup("p", (1.0, 2.0), (ok, ok[:2]), (ok, ok), (ok, ok))
    with pytest.raises(EmptySequence):
        RolloutGroup("p", (1.0, 2.0), (ok, np.array([])), (ok, ok), (ok, ok))
    with pytest.raises(ValueError):
        RolloutGroup("p", (1.0, 2.0), (ok, np.ones(3)), (ok, ok), (ok, ok))
    group = RolloutGroup("p", (1.0, 2.0), (ok, ok), (ok, ok), (ok, ok))
    assert group.size == 2
    assert group.token_counts == (3, 3)


def test_grpo_config_validation():
    with pytest.raises(ValueError):
        GrpoConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        GrpoConfig(beta=-0.1)
    with pytest.raises(ValueError):
        GrpoConfig(group_size=1)
    with pytest.raises(ValueError):
        GrpoConfig(kl_estimator="k9")


def test_loss_matches_oracle_on_random_groups():
    rng = np.random.default_rng(7)
    for _ in range(50):
        group = random_group(rng)
        stats = grpo_loss(group, GrpoConfig())
        expected = oracle_grpo_loss(
            group.rewards,
            [a.tolist() for a in group.logp_new],
            [a.tolist() for a in group.logp_old],
            [a.tolist() for a in group.logp_ref],
        )
        assert stats.loss == pytest.approx(expected, abs=1e-12)


def test_loss_with_k1_estimator_matches_oracle():
    rng = np.random.default_rng(11)
    group = random_group(rng)
    cfg = GrpoConfig(kl_estimator="k1")
    stats = grpo_loss(group, cfg)
    expected = oracle_grpo_loss(
        group.rewards,
        [a.tolist() for a in group.logp_new],
        [a.tolist() for a in group.logp_old],
        [a.tolist() for a in group.logp_ref],
        estimator="k1",
    )
    assert stats.loss == pytest.approx(expected, abs=1e-12)


def test_k3_kl_is_nonnegative():
    rng = np.random.default_rng(3)
    for _ in range(30):
        group = random_group(rng)
        assert grpo_loss(group, GrpoConfig()).kl >= 0.0


def test_identical_policies_give_unit_ratios_and_zero_kl():
    rng = np.random.default_rng(5)
    logps = tuple(-rng.random(4) for _ in range(4))
    group = RolloutGroup("p", (0.1, 0.4, 0.2, 0.9), logps, logps, logps)
    stats = grpo_loss(group, GrpoConfig())
    assert stats.ratios == pytest.approx([1.0, 1.0, 1.0, 1.0])
    assert stats.kl == 0.0
    assert stats.clipped_fraction == 0.0
    # Surrogate at ratio 1 is the advantage mean, which is zero.
    assert stats.surrogate == pytest.approx(0.0, abs=1e-12)
    assert stats.loss == pytest.approx(0.0, abs=1e-12)


def test_unclipped_region_uses_raw_ratio():
    base = -np.ones(1)
    # ratio = exp(-0.95 + 1.0) ~ 1.051, inside the clip window.
    group = RolloutGroup(
        "p", (0.0, 1.0), (np.array([-0.95]), base), (base, base), (base, base)
    )
    stats = grpo_loss(group, GrpoConfig(beta=0.0))
    ratio = math.exp(0.05)
    assert stats.ratios[0] == pytest.approx(ratio)
    assert stats.surrogate == pytest.approx((ratio * -1.0 + 1.0 * 1.0) / 2)


def test_clipping_bounds_the_positive_advantage_gain():
    base = -np.ones(1)
    # Large ratio with positive advantage: surrogate capped at 1 + epsilon.
    group = RolloutGroup(
        "p", (1.0, 0.0), (np.array([-0.1]), base), (np.array([-2.0]), base), (base, base)
    )
    stats = grpo_loss(group, GrpoConfig(beta=0.0, epsilon=0.2))
    assert stats.ratios[0] > 1.2
    # Second response sits at ratio 1 with advantage -1; peel it off the mean.
    surrogate_first = stats.surrogate * 2 - (1.0 * -1.0)
    assert surrogate_first == pytest.approx(1.2)
    assert stats.clipped_fraction == 0.5


def test_per_token_ratio_equals_sequence_on_length_one():
    rng = np.random.default_rng(13)
    group = random_group(rng, size=5, max_len=1)
    seq = grpo_loss(group, GrpoConfig(per_token_ratio=False))
    tok = grpo_loss(group, GrpoConfig(per_token_ratio=True))
    assert seq.loss == pytest.approx(tok.loss, abs=1e-12)


def test_sft_loss_matches_oracle():
    seqs = [[-0.5, -1.5], [-2.0], [-0.25, -0.25, -1.0]]
    assert sft_loss(seqs) == pytest.approx(oracle_sft_loss(seqs), abs=1e-12)
    with pytest.raises(EmptySequence):
        sft_loss([[]])


# --- toy policy and task --------------------------------------------------------


def test_toy_policy_probability_table():
    policy = ToyPolicy(4, 7)
    probs = policy.probs()
    assert probs.shape == (4, 7)
    assert np.allclose(probs.sum(axis=1), 1.0)
    assert np.allclose(probs, 1.0 / 7)

    rng = np.random.default_rng(0)
    ids_a = policy.sample(rng, 3)
    ids_b = ToyPolicy(4, 7).sample(np.random.default_rng(0), 3)
    assert np.array_equal(ids_a, ids_b)
    assert ids_a.shape == (3, 4)
    assert ids_a.min() >= 0 and ids_a.max() < 7


def test_toy_policy_logprob_lookup():
    rng = np.random.default_rng(1)
    theta = rng.normal(size=(3, 5))
    policy = ToyPolicy(3, 5, theta)
    ids = np.array([[0, 4, 2], [1, 1, 1]])
    logps = policy.token_logprobs(ids)
    table = policy.log_softmax()
    for b in range(2):
        for t in range(3):
            assert logps[b, t] == pytest.approx(table[t, ids[b, t]])


def test_toy_format_flags():
    assert toy_format_flags(["#", "$", "cat"]) == (True, True)
    assert toy_format_flags(["#", "cat", "dog"]) == (True, False)
    assert toy_format_flags(["$", "cat"]) == (False, True)
    assert toy_format_flags(["cat", "$"]) == (False, False)  # nothing after $
    assert toy_format_flags(["$", "cat", "#"]) == (True, False)  # $ before #
    assert toy_format_flags(["#", "#", "$", "x"]) == (False, True)
    assert toy_format_flags(["#", "$", "$", "x"]) == (True, False)
    assert toy_format_flags(["the", "cat"]) == (False, False)


def test_toy_score_components():
    spec = default_toy_task()
    full = ["#", "$", "cat", "dog", "running", "jumping", "bright"]
    assert toy_score(full, spec) == 3.8

    format_only = ["#", "$", "the", "a", "is"]
    assert toy_score(format_only, spec) == 1.0

    half_user = ["#", "$", "cat", "the"]
    assert toy_score(half_user, spec) == pytest.approx(1.0 + 0.5)

    think_only = ["#", "the", "cat"]
    assert toy_score(think_only, spec) == pytest.approx(0.2)

    nothing = ["the", "a"]
    assert toy_score(nothing, spec) == 0.0


def test_default_toy_task_shape():
    spec = default_toy_task(vocab_size=30)
    assert len(spec.vocab) == 30
    assert len(set(spec.vocab)) == 30
    assert "#" in spec.vocab and "$" in spec.vocab
    claim_count = len(spec.user_claims) + len(spec.detail_claims) + len(spec.supp_claims)
    assert claim_count == 5
    with pytest.raises(ValueError):
        default_toy_task(vocab_size=3)


def test_toy_loss_agrees_with_grpo_loss():
    """The vectorized trainer-path loss and the list-based public loss are
    independent implementations; they must agree on shared inputs."""
    rng = np.random.default_rng(21)
    length, vocab, size = 6, 9, 5
    theta_old = rng.normal(size=(length, vocab))
    theta_new = theta_old + 0.1 * rng.normal(size=(length, vocab))
    theta_ref = theta_old + 0.1 * rng.normal(size=(length, vocab))
    old_policy = ToyPolicy(length, vocab, theta_old)
    token_ids = old_policy.sample(rng, size)
    logp_old = old_policy.token_logprobs(token_ids)
    logp_ref = ToyPolicy(length, vocab, theta_ref).token_logprobs(token_ids)
    logp_new = ToyPolicy(length, vocab, theta_new).token_logprobs(token_ids)
    rewards = rng.random(size)

    cfg = GrpoConfig()
    advantages = group_advantages(rewards)
    loss, _, kl = toy_loss_and_grad(theta_new, token_ids, logp_old, logp_ref, advantages, cfg)

    group = RolloutGroup(
        "toy",
        tuple(rewards),
        tuple(logp_new[i] for i in range(size)),
        tuple(logp_old[i] for i in range(size)),
        tuple(logp_ref[i] for i in range(size)),
    )
    stats = grpo_loss(group, cfg)
    assert loss == pytest.approx(stats.loss, abs=1e-12)
    assert kl == pytest.approx(stats.kl, abs=1e-12)


def test_gradient_check_small_sample():
    for seed in range(3):
        assert gradient_check(seed=seed) < 1e-4


def test_gradient_check_respects_parameter_budget():
    # The default instance must stay within the small-problem regime the
    # finite-difference sweep assumes.
    assert 12 * 8 <= 200


def test_train_toy_is_bit_reproducible():
    cfg = ToyTrainConfig(iterations=40, seed=123)
    a = train_toy(cfg)
    b = train_toy(cfg)
    assert [r.mean_reward for r in a.trace] == [r.mean_reward for r in b.trace]
    assert [r.loss for r in a.trace] == [r.loss for r in b.trace]
    assert [r.kl for r in a.trace] == [r.kl for r in b.trace]
    assert np.array_equal(a.final_theta, b.final_theta)


def test_train_toy_improves_reward():
    result = train_toy(ToyTrainConfig(seed=0))
    first, last = result.window_means()
    assert last >= 1.5 * first
    assert last > first > 0


def test_train_toy_summary_and_trace_shapes(tmp_path):
    from captionrl.grpo import write_summary_json, write_trace_csv

    result = train_toy(ToyTrainConfig(iterations=25, seed=5))
    assert len(result.trace) == 25
    assert result.trace[0].iteration == 0
    assert result.trace[-1].iteration == 24

    summary = result.summary(window=10)
    assert summary["iterations"] == 25
    assert "improvement_ratio" in summary

    trace_path = tmp_path / "trace.csv"
    write_trace_csv(trace_path, result.trace)
    lines = trace_path.read_text().strip().splitlines()
    assert lines[0] == "iteration,mean_reward,loss,kl"
    assert len(lines) == 26

    summary_path = tmp_path / "summary.json"
    write_summary_json(summary_path, summary)
    import json

    assert json.loads(summary_path.read_text())["iterations"] == 25


def test_train_toy_rejects_mismatched_vocab():
    with pytest.raises(ShapeMismatch):
        train_toy(ToyTrainConfig(vocab_size=30), spec=default_toy_task(vocab_size=12))
