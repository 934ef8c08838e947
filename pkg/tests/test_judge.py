from __future__ import annotations

import json
import threading

import pytest
from hypothesis import given, strategies as st

from captionrl import (
    HttpError,
    JudgeClient,
    JudgeConfig,
    JudgeMatcher,
    MatcherUnavailable,
    OutOfRange,
    ParseFailure,
    ScoreCache,
    ShapeMismatch,
    parse_final_score,
    request_score,
    stability_report,
)
from captionrl.judge import HttpTransport, render_judge_prompt
from _support import FakeTransport, oracle_stability

KEY_INFO = json.dumps({"objects": [], "actions": ["runs"], "camera": [], "style": []})


def make_config(**overrides) -> JudgeConfig:
    base = dict(endpoint="http://judge.local/v1/chat/completions", max_retries=2)
    base.update(overrides)
    return JudgeConfig(**base)


def test_parse_final_score_variants():
    assert parse_final_score("Final Score: 0.85") == 0.85
    assert parse_final_score("Final Score: [0.9]") == 0.9
    assert parse_final_score("preamble\nmore text\nFinal Score: 0.7\n") == 0.7
    assert parse_final_score("Final Score: 1") == 1.0
    assert parse_final_score("Final Score: 8.5e-1") == 0.85
    assert parse_final_score("no score anywhere") is None
    assert parse_final_score("") is None


def test_request_score_happy_path():
    transport = FakeTransport(["Final Score: 0.85"])
    score = request_score(make_config(), KEY_INFO, "a candidate", transport=transport)
    assert score == 0.85
    assert transport.calls == 1


def test_request_payload_carries_sampling_config():
    transport = FakeTransport(["Final Score: 0.5"])
    cfg = make_config()
    request_score(cfg, KEY_INFO, "caption text", transport=transport)
    payload = transport.payloads[0]
    assert payload["model"] == cfg.model_name
    assert payload["max_tokens"] == 50
    assert payload["temperature"] == 0.3
    assert payload["top_p"] == 1.0
    prompt = payload["messages"][0]["content"]
    assert KEY_INFO in prompt
    assert "caption text" in prompt
    assert prompt == render_judge_prompt(KEY_INFO, "caption text")


def test_out_of_range_is_immediate():
    transport = FakeTransport(["Final Score: 1.5", "Final Score: 0.5"])
    with pytest.raises(OutOfRange) as exc_info:
        request_score(make_config(), KEY_INFO, "c", transport=transport)
    assert exc_info.value.score == 1.5
    assert transport.calls == 1

    transport = FakeTransport(["Final Score: -0.1"])
    with pytest.raises(OutOfRange):
        request_score(make_config(), KEY_INFO, "c", transport=transport)


def test_boundary_scores_accepted():
    assert request_score(make_config(), KEY_INFO, "c",
                         transport=FakeTransport(["Final Score: 0"])) == 0.0
    assert request_score(make_config(), KEY_INFO, "c",
                         transport=FakeTransport(["Final Score: 1.0"])) == 1.0


def test_retry_then_success():
    transport = FakeTransport(["gibberish", "Final Score: 0.6"])
    score = request_score(make_config(max_retries=2), KEY_INFO, "c", transport=transport)
    assert score == 0.6
    assert transport.calls == 2


def test_retry_exhaustion_raises_parse_failure():
    transport = FakeTransport(["bad", "still bad", "nope"])
    with pytest.raises(ParseFailure) as exc_info:
        request_score(make_config(max_retries=2), KEY_INFO, "c", transport=transport)
    assert exc_info.value.attempts == 3
    assert transport.calls == 3


def test_zero_retries_config():
    transport = FakeTransport(["unparseable"])
    with pytest.raises(ParseFailure) as exc_info:
        request_score(make_config(max_retries=0), KEY_INFO, "c", transport=transport)
    assert exc_info.value.attempts == 1
    assert transport.calls == 1


def test_http_errors_propagate():
    transport = FakeTransport([HttpError(503, "busy")])
    with pytest.raises(HttpError):
        request_score(make_config(), KEY_INFO, "c", transport=transport)


def test_empty_inputs_rejected():
    with pytest.raises(ValueError):
        request_score(make_config(), "", "c", transport=FakeTransport([]))
    with pytest.raises(ValueError):
        request_score(make_config(), KEY_INFO, "", transport=FakeTransport([]))


def test_cache_eliminates_repeat_calls(tmp_path):
    cache = ScoreCache(tmp_path / "scores.jsonl")
    transport = FakeTransport(["Final Score: 0.85"])
    cfg = make_config()
    first = request_score(cfg, KEY_INFO, "c", transport=transport, cache=cache)
    second = request_score(cfg, KEY_INFO, "c", transport=transport, cache=cache)
    assert first == second == 0.85
    assert transport.calls == 1

    # A fresh cache instance reloads the persisted entry; still no calls.
    reloaded = ScoreCache(tmp_path / "scores.jsonl")
    third = request_score(cfg, KEY_INFO, "c", transport=FakeTransport([]), cache=reloaded)
    assert third == 0.85


def test_cache_key_separates_prompts_and_params(tmp_path):
    cache = ScoreCache(tmp_path / "scores.jsonl")
    cfg = make_config()
    transport = FakeTransport(["Final Score: 0.1", "Final Score: 0.2", "Final Score: 0.3"])
    a = request_score(cfg, KEY_INFO, "first", transport=transport, cache=cache)
    b = request_score(cfg, KEY_INFO, "second", transport=transport, cache=cache)
    c = request_score(
        make_config(temperature=0.0), KEY_INFO, "first", transport=transport, cache=cache
    )
    assert (a, b, c) == (0.1, 0.2, 0.3)
    assert transport.calls == 3


def test_cache_file_has_no_duplicates(tmp_path):
    path = tmp_path / "scores.jsonl"
    cache = ScoreCache(path)
    cache.put("k", 0.5)
    cache.put("k", 0.9)
    assert cache.get("k") == 0.5
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 1


def test_cache_is_thread_safe(tmp_path):
    cache = ScoreCache(tmp_path / "scores.jsonl")

    def writer(start: int):
        for i in range(50):
            cache.put(f"key-{start + i}", float(i))

    threads = [threading.Thread(target=writer, args=(n * 25,)) for n in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    reloaded = ScoreCache(tmp_path / "scores.jsonl")
    for n in range(4):
        for i in range(50):
            assert reloaded.get(f"key-{n * 25 + i}") is not None


def test_judge_client_binds_transport_and_cache(tmp_path):
    transport = FakeTransport(["Final Score: 0.4"])
    client = JudgeClient(make_config(cache_path=str(tmp_path / "c.jsonl")), transport=transport)
    assert client.score(KEY_INFO, "x") == 0.4
    assert client.score(KEY_INFO, "x") == 0.4
    assert transport.calls == 1


def test_judge_config_validation():
    with pytest.raises(ValueError):
        JudgeConfig(temperature=-1.0)
    with pytest.raises(ValueError):
        JudgeConfig(max_new_tokens=0)
    with pytest.raises(ValueError):
        JudgeConfig(max_retries=-1)


def test_judge_config_from_env(monkeypatch):
    monkeypatch.setenv("REWARD_JUDGE_ENDPOINT", "http://env.local/chat")
    cfg = JudgeConfig.from_env()
    assert cfg.endpoint == "http://env.local/chat"
    explicit = JudgeConfig.from_env(endpoint="http://flag.local")
    assert explicit.endpoint == "http://flag.local"


def test_matcher_whole_set_and_threshold():
    client = JudgeClient(make_config(), transport=FakeTransport(
        ["Final Score: 0.8", "Final Score: 0.5", "Final Score: 0.49"]
    ))
    matcher = JudgeMatcher(client)
    assert matcher.scores_whole_set
    assert matcher.set_coverage(KEY_INFO, "caption") == 0.8

    from captionrl import Claim

    assert matcher.match(Claim("action", "", "runs"), "caption two")
    assert not matcher.match(Claim("style", "", "warm"), "caption three")


def test_matcher_wraps_failures():
    client = JudgeClient(make_config(max_retries=0), transport=FakeTransport(["nonsense"]))
    matcher = JudgeMatcher(client)
    with pytest.raises(MatcherUnavailable):
        matcher.set_coverage(KEY_INFO, "caption")

    client = JudgeClient(make_config(), transport=FakeTransport([HttpError(500, "boom")]))
    with pytest.raises(MatcherUnavailable):
        JudgeMatcher(client).set_coverage(KEY_INFO, "caption")


def test_matcher_contradiction_hook():
    client = JudgeClient(make_config(), transport=FakeTransport([]))
    assert JudgeMatcher(client).contradiction("anything") is False
    flagged = JudgeMatcher(client, contradiction_check=lambda caption: "both" in caption)
    assert flagged.contradiction("both at once")
    assert not flagged.contradiction("fine")


# --- transport ------------------------------------------------------------------


class StubResponse:
    def __init__(self, status_code=200, body=None, text=""):
        self.status_code = status_code
        self._body = body or {}
        self.text = text

    def json(self):
        return self._body


def test_http_transport_success(monkeypatch):
    captured = {}

    def fake_post(url, json=None, headers=None, timeout=None):
        captured.update(url=url, payload=json, headers=headers, timeout=timeout)
        return StubResponse(body={"choices": [{"message": {"content": "Final Score: 0.3"}}]})

    monkeypatch.setattr("captionrl.judge.requests.post", fake_post)
    transport = HttpTransport("http://judge.local/chat", api_key="secret")
    reply = transport.send({"model": "m"}, timeout=9.0)
    assert reply == "Final Score: 0.3"
    assert captured["url"] == "http://judge.local/chat"
    assert captured["headers"]["Authorization"] == "Bearer secret"
    assert captured["timeout"] == 9.0


def test_http_transport_key_from_env(monkeypatch):
    monkeypatch.setenv("REWARD_JUDGE_API_KEY", "env-key")
    captured = {}

    def fake_post(url, json=None, headers=None, timeout=None):
        captured.update(headers=headers)
        return StubResponse(body={"choices": [{"message": {"content": "x"}}]})

    monkeypatch.setattr("captionrl.judge.requests.post", fake_post)
    HttpTransport("http://j.local").send({}, timeout=1.0)
    assert captured["headers"]["Authorization"] == "Bearer env-key"


def test_http_transport_error_statuses(monkeypatch):
    monkeypatch.setattr(
        "captionrl.judge.requests.post",
        lambda *a, **k: StubResponse(status_code=500, text="exploded"),
    )
    with pytest.raises(HttpError) as exc_info:
        HttpTransport("http://j.local").send({}, timeout=1.0)
    assert exc_info.value.status == 500


def test_http_transport_malformed_body(monkeypatch):
    monkeypatch.setattr(
        "captionrl.judge.requests.post",
        lambda *a, **k: StubResponse(body={"unexpected": True}),
    )
    with pytest.raises(HttpError):
        HttpTransport("http://j.local").send({}, timeout=1.0)


# --- stability ------------------------------------------------------------------


def test_stability_fixture_row():
    report = stability_report([[0.8, 0.8, 0.9, 0.9, 0.8]])
    assert abs(report.per_item_variance[0] - 0.0024) < 1e-12
    assert abs(report.mean_cv - 0.0583) < 1e-4
    assert report.mean_vs_variance_correlation == 0.0
    assert report.agreement_mae is None


def test_stability_requires_repeats():
    with pytest.raises(ShapeMismatch):
        stability_report([[0.5]])
    with pytest.raises(ShapeMismatch):
        stability_report([])
    with pytest.raises(ShapeMismatch):
        stability_report([[0.5, 0.6]], reference_scores=[0.5, 0.6])


def test_stability_degenerate_correlation_is_zero():
    report = stability_report([[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]])
    assert report.mean_vs_variance_correlation == 0.0
    assert report.mean_cv == 0.0

    zero_mean = stability_report([[-0.5, 0.5], [-0.1, 0.1]])
    assert zero_mean.mean_cv == 0.0


def test_stability_agreement_mae():
    report = stability_report([[0.4, 0.6], [0.9, 0.7]], reference_scores=[0.6, 0.9])
    assert report.agreement_mae == pytest.approx((0.1 + 0.1) / 2)


@given(
    st.lists(
        st.lists(st.floats(0, 1, width=32), min_size=2, max_size=6),
        min_size=1,
        max_size=8,
    ),
)
def test_stability_matches_oracle(matrix):
    import statistics

    report = stability_report(matrix)
    expected = oracle_stability(matrix)
    assert report.per_item_variance == pytest.approx(expected["per_item_variance"], abs=1e-12)
    assert report.mean_variance == pytest.approx(expected["mean_variance"], abs=1e-12)
    assert report.median_variance == pytest.approx(expected["median_variance"], abs=1e-12)
    assert report.mean_cv == pytest.approx(expected["mean_cv"], abs=1e-9)
    # Near-degenerate spreads make Pearson numerically unstable, so compare
    # values only on well-conditioned inputs; bounds must hold regardless.
    means = [statistics.fmean(row) for row in matrix]
    well_conditioned = (
        len(matrix) >= 2
        and statistics.pstdev(means) > 1e-6
        and statistics.pstdev(expected["per_item_variance"]) > 1e-6
    )
    assert -1.0 <= report.mean_vs_variance_correlation <= 1.0
    if well_conditioned:
        assert report.mean_vs_variance_correlation == pytest.approx(
            expected["mean_vs_variance_correlation"], abs=1e-9
        )
