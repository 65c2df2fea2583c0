"""Prompt template registry.

Templates are shipped as a versioned JSON resource and loaded verbatim; the
texts are the contract with the provider and must never be edited in code.
Input rendering is deliberately simple: a lone input is appended bare after
the request, multiple inputs are appended as labeled blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

from .errors import ValidationError

_SLOT_LABELS = {
    "post": "Tweet",
    "entities": "Entities",
    "context": "Context",
    "extracted_text": "Extracted Text",
    "image_description": "Image Description",
}


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    system: str
    request: str
    input_slots: tuple[str, ...]
    expects_image: bool


@dataclass(frozen=True)
class ResolvedPrompt:
    """A template with its slots filled, ready to send to a provider."""

    prompt_id: str
    system: str
    text: str
    expects_image: bool


def _load_registry() -> dict[str, PromptTemplate]:
    raw = resources.files("contexthsd.data").joinpath("prompts.json").read_text("utf-8")
    payload = json.loads(raw)
    registry = {}
    for prompt_id, entry in payload["prompts"].items():
        registry[prompt_id] = PromptTemplate(
            id=prompt_id,
            system=entry["system"],
            request=entry["request"],
            input_slots=tuple(entry["input_slots"]),
            expects_image=bool(entry["expects_image"]),
        )
    return registry


_REGISTRY = _load_registry()

REGISTRY_VERSION = 1
PROMPT_IDS = tuple(_REGISTRY)


def get_prompt(prompt_id: str) -> PromptTemplate:
    try:
        return _REGISTRY[prompt_id]
    except KeyError:
        raise ValidationError(f"unknown prompt id {prompt_id!r}") from None


def registry_payload() -> dict:
    """The registry as plain data, for golden-file comparison and export."""
    return {
        "version": REGISTRY_VERSION,
        "prompts": {
            t.id: {
                "system": t.system,
                "request": t.request,
                "input_slots": list(t.input_slots),
                "expects_image": t.expects_image,
            }
            for t in _REGISTRY.values()
        },
    }


def resolve_prompt(template: PromptTemplate, inputs: Mapping[str, str]) -> ResolvedPrompt:
    """Fill the template's declared slots with the given values.

    Raises ValidationError when the provided inputs do not exactly match the
    declared slots; silently dropping or inventing inputs would corrupt cache
    keys.
    """
    declared = set(template.input_slots)
    provided = set(inputs)
    if declared != provided:
        raise ValidationError(
            f"prompt {template.id!r} expects slots {sorted(declared)}, got {sorted(provided)}"
        )
    parts = [template.request]
    if len(template.input_slots) == 1:
        parts.append(inputs[template.input_slots[0]])
    else:
        for slot in template.input_slots:
            label = _SLOT_LABELS.get(slot, slot)
            parts.append(f"{label}: {inputs[slot]}")
    return ResolvedPrompt(
        prompt_id=template.id,
        system=template.system,
        text="\n\n".join(parts),
        expects_image=template.expects_image,
    )
