"""Generate binding test fixtures with the core as the oracle.

Outputs land in test/fixtures/:
  records.jsonl            key-info records the score fixtures refer to
  score_fixtures.json      50 responses with core-computed breakdowns
  weighted_fixtures.json   a batch scored under non-default weights
  advantage_fixtures.json  50 reward vectors with core-computed advantages

Run from the hostbind directory: python3 scripts/make_fixtures.py
"""
from __future__ import annotations

import json
import random
from pathlib import Path

from captionrl import (
    ElementSet,
    LexicalMatcher,
    ObjectSpec,
    KeyInfoRecord,
    RewardWeights,
    group_advantages,
    record_to_dict,
    render_response,
    score_candidate,
    write_records,
)

FIXTURES = Path(__file__).resolve().parent.parent / "test" / "fixtures"

WORDS = (
    "woman", "man", "dog", "cat", "desk", "laptop", "wall", "chair", "tree",
    "running", "sitting", "jumping", "typing", "smiling", "walking",
    "bright", "dark", "clean", "blurry", "wide", "fixed", "panning",
)

SECTIONS = (
    "Dense caption", "Main object caption", "Background caption",
    "Movement caption", "Style caption", "Camera caption",
)


def random_element_set(rng: random.Random) -> ElementSet:
    objects = tuple(
        ObjectSpec(name=name, attributes=tuple(rng.sample(WORDS[9:], rng.randint(0, 2))))
        for name in rng.sample(WORDS[:9], rng.randint(0, 3))
    )
    return ElementSet(
        objects=objects,
        actions=tuple(rng.sample(WORDS[9:15], rng.randint(0, 2))),
        camera=tuple(rng.sample(WORDS[19:], rng.randint(0, 2))),
        style=tuple(rng.sample(WORDS[15:19], rng.randint(0, 2))),
    )


def random_record(rng: random.Random, i: int) -> KeyInfoRecord:
    return KeyInfoRecord(
        id=f"fx-{i:03d}",
        user=random_element_set(rng),
        supplementary=random_element_set(rng),
        imaginary=random_element_set(rng),
    )


def random_response(rng: random.Random, record: KeyInfoRecord) -> str:
    """Responses spanning the format space: full, partial, and broken."""
    phrases = []
    for element_set in record.element_sets().values():
        for obj in element_set.objects:
            phrases.append(obj.name)
            for attr in obj.attributes:
                if rng.random() < 0.7:
                    phrases.append(f"{obj.name} {attr}")
        for group in (element_set.actions, element_set.camera, element_set.style):
            phrases.extend(p for p in group if rng.random() < 0.7)
    rng.shuffle(phrases)
    keep = phrases[: rng.randint(0, len(phrases))]
    body = ". ".join(keep) or "an empty scene"

    roll = rng.random()
    if roll < 0.15:
        return "no tags at all " + body
    if roll < 0.3:
        return f"<think>{body}</think> trailing text without an answer"
    caption = "\n".join(
        f"{k}. {name}: {body if k == 1 else 'see section one.'}"
        for k, name in enumerate(SECTIONS, start=1)
    )
    if roll < 0.45:
        caption = "\n".join(caption.splitlines()[:4])  # four-part: not six-part
    return render_response(f"reasoning about {record.id}", caption)


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240815)

    records = [random_record(rng, i) for i in range(50)]
    write_records(FIXTURES / "records.jsonl", records)

    matcher = LexicalMatcher()
    fixtures = []
    for record in records:
        response = random_response(rng, record)
        breakdown = score_candidate(response, record, matcher)
        fixtures.append(
            {
                "record_id": record.id,
                "response": response,
                "expected": {"record_id": record.id, **breakdown.to_dict()},
            }
        )
    (FIXTURES / "score_fixtures.json").write_text(
        json.dumps(fixtures, indent=2), encoding="utf-8"
    )

    weights = RewardWeights(alpha=2.0, rho=0.5, gamma=1.25, lambda_=0.9)
    weighted = {
        "weights": {"alpha": 2.0, "rho": 0.5, "gamma": 1.25, "lambda": 0.9},
        "items": [],
    }
    for fixture in fixtures[:10]:
        record = next(r for r in records if r.id == fixture["record_id"])
        breakdown = score_candidate(fixture["response"], record, matcher, weights)
        weighted["items"].append(
            {
                "record_id": record.id,
                "response": fixture["response"],
                "expected": {"record_id": record.id, **breakdown.to_dict()},
            }
        )
    (FIXTURES / "weighted_fixtures.json").write_text(
        json.dumps(weighted, indent=2), encoding="utf-8"
    )

    advantage_fixtures = []
    for _ in range(50):
        size = rng.randint(2, 12)
        if rng.random() < 0.1:
            rewards = [round(rng.uniform(0, 4), 6)] * size  # degenerate group
        else:
            rewards = [round(rng.uniform(-1, 4), 6) for _ in range(size)]
        advantage_fixtures.append(
            {"rewards": rewards, "expected": [float(a) for a in group_advantages(rewards)]}
        )
    (FIXTURES / "advantage_fixtures.json").write_text(
        json.dumps(advantage_fixtures, indent=2), encoding="utf-8"
    )

    print(f"wrote fixtures to {FIXTURES}")


if __name__ == "__main__":
    main()
