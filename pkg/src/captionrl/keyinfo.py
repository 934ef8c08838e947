"""Offline-extracted key-info element sets and their atomic claims.

A record carries three element sets: details the user asked for (``user``),
details supplied by non-textual conditions (``supplementary``), and
plausible invented details (``imaginary``). Each set lists objects with
attributes plus flat action / camera / style entries, and flattens into
countable claims for coverage scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Literal

from .errors import DuplicateObject, SchemaError

ClaimKind = Literal["object_presence", "object_attribute", "action", "camera", "style"]

SET_FIELDS = ("user", "supplementary", "imaginary")


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    attributes: tuple[str, ...] = ()


@dataclass(frozen=True)
class ElementSet:
    objects: tuple[ObjectSpec, ...] = ()
    actions: tuple[str, ...] = ()
    camera: tuple[str, ...] = ()
    style: tuple[str, ...] = ()

    def is_empty(self) -> bool:
        return not (self.objects or self.actions or self.camera or self.style)


@dataclass(frozen=True)
class KeyInfoRecord:
    id: str
    user: ElementSet
    supplementary: ElementSet
    imaginary: ElementSet

    def element_sets(self) -> dict[str, ElementSet]:
        return {
            "user": self.user,
            "supplementary": self.supplementary,
            "imaginary": self.imaginary,
        }


@dataclass(frozen=True)
class Claim:
    """One atomic checkable fact.

    ``subject`` is the owning object name for the two object kinds and
    empty for action / camera / style claims.
    """

    kind: ClaimKind
    subject: str
    value: str


def flatten_claims(element_set: ElementSet) -> list[Claim]:
    """Atomize an element set into claims.

    One presence claim per object, one attribute claim per attribute,
    one claim per action / camera / style entry, in input order.
    """
    claims: list[Claim] = []
    for obj in element_set.objects:
        claims.append(Claim("object_presence", obj.name, obj.name))
        for attr in obj.attributes:
            claims.append(Claim("object_attribute", obj.name, attr))
    claims.extend(Claim("action", "", a) for a in element_set.actions)
    claims.extend(Claim("camera", "", c) for c in element_set.camera)
    claims.extend(Claim("style", "", s) for s in element_set.style)
    return claims


# --- validation --------------------------------------------------------------


def _expect(condition: bool, path: str, reason: str) -> None:
    if not condition:
        raise SchemaError(path, reason)


def _validate_text_list(value, path: str) -> tuple[str, ...]:
    _expect(isinstance(value, list), path, "expected a list")
    out = []
    for i, entry in enumerate(value):
        _expect(isinstance(entry, str), f"{path}[{i}]", "expected a string")
        _expect(entry.strip() != "", f"{path}[{i}]", "empty")
        out.append(entry)
    return tuple(out)


def validate_element_set(data, path: str) -> ElementSet:
    _expect(isinstance(data, dict), path, "expected an object")
    for key in ("objects", "actions", "camera", "style"):
        _expect(key in data, f"{path}.{key}", "missing")
    unknown = set(data) - {"objects", "actions", "camera", "style"}
    _expect(not unknown, f"{path}.{sorted(unknown)[0]}" if unknown else path, "unexpected field")

    objects_raw = data["objects"]
    _expect(isinstance(objects_raw, list), f"{path}.objects", "expected a list")
    objects = []
    seen_names: set[str] = set()
    for i, obj in enumerate(objects_raw):
        obj_path = f"{path}.objects[{i}]"
        _expect(isinstance(obj, dict), obj_path, "expected an object")
        _expect("name" in obj, f"{obj_path}.name", "missing")
        _expect("attributes" in obj, f"{obj_path}.attributes", "missing")
        name = obj["name"]
        _expect(isinstance(name, str), f"{obj_path}.name", "expected a string")
        _expect(name.strip() != "", f"{obj_path}.name", "empty")
        if name in seen_names:
            raise DuplicateObject(f"{obj_path}.name", name)
        seen_names.add(name)
        attributes = _validate_text_list(obj["attributes"], f"{obj_path}.attributes")
        objects.append(ObjectSpec(name=name, attributes=attributes))

    return ElementSet(
        objects=tuple(objects),
        actions=_validate_text_list(data["actions"], f"{path}.actions"),
        camera=_validate_text_list(data["camera"], f"{path}.camera"),
        style=_validate_text_list(data["style"], f"{path}.style"),
    )


def record_from_dict(data, path: str = "") -> KeyInfoRecord:
    prefix = f"{path}." if path else ""
    _expect(isinstance(data, dict), path or "record", "expected an object")
    _expect("id" in data, f"{prefix}id", "missing")
    _expect(isinstance(data["id"], str) and data["id"] != "", f"{prefix}id", "empty")
    sets = {}
    for key in SET_FIELDS:
        _expect(key in data, f"{prefix}{key}", "missing")
        sets[key] = validate_element_set(data[key], f"{prefix}{key}")
    return KeyInfoRecord(id=data["id"], **sets)


def validate_record(raw_json: str) -> KeyInfoRecord:
    """Parse and validate one JSON record; errors name the first violated
    constraint and its path."""
    try:
        data = json.loads(raw_json)
    except json.JSONDecodeError as exc:
        raise SchemaError("record", f"invalid JSON: {exc}") from exc
    return record_from_dict(data)


# --- serialization ------------------------------------------------------------


def element_set_to_dict(element_set: ElementSet) -> dict:
    return {
        "objects": [
            {"name": o.name, "attributes": list(o.attributes)} for o in element_set.objects
        ],
        "actions": list(element_set.actions),
        "camera": list(element_set.camera),
        "style": list(element_set.style),
    }


def record_to_dict(record: KeyInfoRecord) -> dict:
    out = {"id": record.id}
    for key, element_set in record.element_sets().items():
        out[key] = element_set_to_dict(element_set)
    return out


def render_record(record: KeyInfoRecord) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=False)


def read_records(path: str | Path) -> list[KeyInfoRecord]:
    """Read a JSONL file of key-info records (one record per line)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(validate_record(line))
    return records


def write_records(path: str | Path, records: Iterable[KeyInfoRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(render_record(record) + "\n")


def iter_claims(record: KeyInfoRecord) -> Iterator[tuple[str, Claim]]:
    """Yield (set_name, claim) over all three element sets."""
    for name, element_set in record.element_sets().items():
        for claim in flatten_claims(element_set):
            yield name, claim
