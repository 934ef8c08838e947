"""Shared fixtures: the worked example record and gold caption used
across parsing, reward, and pipeline tests."""

from __future__ import annotations

import pytest
from hypothesis import settings

from captionrl import record_from_dict

settings.register_profile("harness", deadline=None, max_examples=100)
settings.load_profile("harness")

GOLD_SECTIONS = {
    "dense": (
        "A woman is seated at a desk in a minimalistic room, working on a laptop. "
        "She is wearing a grey camouflage-patterned shirt and has long blonde hair. "
        "Initially, she is focused on her laptop, occasionally glancing at a smartphone "
        "beside her. As time progresses, she shifts her attention to the smartphone, "
        "eventually picking it up and moving it out of the frame. The video concludes "
        "with the desk and wall in the background, now empty."
    ),
    "main_object": (
        "A young woman with long, straight blonde hair, light-colored eyes, and a fair "
        "complexion, in her 20s or 30s and of Caucasian ethnicity, is seated at a white "
        "desk. She is wearing a short-sleeved, gray camouflage-patterned t-shirt and a "
        "delicate gold necklace. Her build is slim, and she has a friendly and engaging "
        "demeanor, often smiling and making eye contact with the camera. She appears to "
        "be happy and enthusiastic as she speaks, occasionally glancing down at a laptop "
        "in front of her and a smartphone to her right."
    ),
    "background": (
        "The background is a plain, light-colored wall, creating a minimalist and clean "
        "setting. The desk is white, and the overall lighting is bright and even, "
        "suggesting an indoor environment during the daytime."
    ),
    "movement": (
        "A woman in a gray coat sat in front of the computer, talking, and then the "
        "woman left the camera."
    ),
    "style": "Clean, minimalist, and professional.",
    "camera": (
        "The camera is fixed. The camera is roughly at the same height as the person, "
        "maintaining a medium close-up shot of the upper body. As the person moves, the "
        "shot transitions from a frontal view to a profile view, with the person moving "
        "from the center of the frame to exiting the frame."
    ),
}

GOLD_INSTRUCTION = (
    "A woman in a minimalistic room sits at a white desk, working on her laptop. "
    "She wears a grey camouflage-patterned shirt with long blonde hair. Gradually, "
    "she shifts her focus from her laptop to the smartphone beside her, eventually "
    "picking it up and moving it out of view. The scene is well-lit with a plain wall "
    "in the background, conveying a clean and professional style. The camera remains "
    "fixed at her height, transitioning from a front to a profile view as she exits "
    "the frame."
)

EXAMPLE_RECORD_DICT = {
    "id": "example-0001",
    "user": {
        "objects": [
            {"name": "woman", "attributes": ["sits", "long blonde hair", "grey camouflage-patterned shirt"]},
            {"name": "room", "attributes": ["minimalistic"]},
            {"name": "desk", "attributes": ["white"]},
            {"name": "laptop", "attributes": []},
            {"name": "smartphone", "attributes": []},
            {"name": "wall", "attributes": ["plain"]},
        ],
        "actions": [
            "shifts focus from laptop to smartphone",
            "picks up smartphone",
            "moves smartphone out of view",
        ],
        "camera": ["fixed at her height", "transitioning from front to profile view"],
        "style": ["clean", "professional"],
    },
    "supplementary": {
        "objects": [
            {"name": "woman", "attributes": ["slim build", "friendly demeanor", "smiling", "making eye contact"]},
            {"name": "laptop", "attributes": []},
            {"name": "smartphone", "attributes": []},
            {"name": "desk", "attributes": ["white"]},
            {"name": "wall", "attributes": ["light-colored", "minimalist", "clean"]},
        ],
        "actions": ["working on laptop", "glancing at smartphone", "talking"],
        "camera": ["medium close-up shot"],
        "style": ["clean", "minimalist", "professional"],
    },
    "imaginary": {
        "objects": [
            {
                "name": "woman",
                "attributes": [
                    "seated",
                    "long blonde hair",
                    "wearing gray camouflage-patterned shirt",
                    "slim build",
                    "friendly demeanor",
                    "smiling",
                    "making eye contact",
                    "happy",
                    "enthusiastic",
                ],
            },
            {"name": "laptop", "attributes": []},
            {"name": "smartphone", "attributes": []},
            {"name": "desk", "attributes": ["white"]},
            {"name": "wall", "attributes": ["light-colored", "minimalist", "clean"]},
        ],
        "actions": [
            "working on laptop",
            "glancing at smartphone",
            "picking up smartphone",
            "moving smartphone out of frame",
            "talking",
            "leaving camera",
        ],
        "camera": [
            "fixed",
            "medium close-up shot",
            "same height as person",
            "transitions from frontal view to profile view",
        ],
        "style": ["clean", "minimalist", "professional"],
    },
}


def gold_caption_inline() -> str:
    """The gold caption as one string with inline numbered headers, the
    shape it arrives in from upstream tools."""
    names = (
        ("dense", "Dense caption"),
        ("main_object", "Main object caption"),
        ("background", "Background caption"),
        ("movement", "Movement caption"),
        ("style", "Style caption"),
        ("camera", "Camera caption"),
    )
    parts = []
    for i, (key, label) in enumerate(names, start=1):
        parts.append(f"{i}. {label}: {GOLD_SECTIONS[key]}")
    return " ".join(parts)


@pytest.fixture
def gold_caption_text() -> str:
    return gold_caption_inline()


@pytest.fixture
def gold_instruction() -> str:
    return GOLD_INSTRUCTION


@pytest.fixture
def example_record():
    return record_from_dict(EXAMPLE_RECORD_DICT)


@pytest.fixture
def example_record_dict() -> dict:
    import copy

    return copy.deepcopy(EXAMPLE_RECORD_DICT)
