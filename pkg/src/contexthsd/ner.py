"""Named-entity extraction backends and fragment merging.

The default backend is an offline lexicon (surface -> tag family), which keeps
the pipeline runnable without model weights; the transformer backend wraps a
token-classification model for full-scale runs. Both emit raw fragments that
`extract_entities` merges and orders.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .errors import ConfigurationError, RetriableBackendError

TAG_FAMILIES = ("PER", "ORG", "LOC", "MISC")


@dataclass(frozen=True)
class EntityMention:
    surface: str
    tag: str
    start: int
    end: int
    confidence: float = 1.0

    def validate_against(self, text: str) -> None:
        if not (0 <= self.start < self.end <= len(text)):
            raise ValueError(f"span ({self.start}, {self.end}) outside text of length {len(text)}")
        if text[self.start : self.end].casefold() != self.surface.casefold():
            raise ValueError(
                f"surface {self.surface!r} does not match text slice "
                f"{text[self.start:self.end]!r}"
            )


class NerBackend(Protocol):
    def tag(self, text: str) -> list[EntityMention]: ...


class LexiconNer:
    """Case-insensitive whole-word lookup against a fixed surface->tag table."""

    def __init__(self, lexicon: dict[str, str]):
        self.lexicon = {surface.casefold(): tag for surface, tag in lexicon.items()}
        if not self.lexicon:
            self._pattern = None
        else:
            alternatives = sorted(self.lexicon, key=len, reverse=True)
            self._pattern = re.compile(
                r"(?<!\w)(" + "|".join(re.escape(s) for s in alternatives) + r")(?!\w)",
                re.IGNORECASE,
            )

    @classmethod
    def from_file(cls, path: str | Path) -> "LexiconNer":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def tag(self, text: str) -> list[EntityMention]:
        if self._pattern is None:
            return []
        mentions = []
        for match in self._pattern.finditer(text):
            surface = match.group(1)
            mentions.append(
                EntityMention(
                    surface=surface,
                    tag=self.lexicon[surface.casefold()],
                    start=match.start(1),
                    end=match.end(1),
                )
            )
        return mentions


class TransformersNer:
    """Token-classification backend (lazy import; needs the `real` extra)."""

    def __init__(self, model_name: str = "dslim/bert-base-NER"):
        try:
            from transformers import pipeline
        except ImportError as exc:
            raise ConfigurationError(
                "transformers is not installed; install the `real` extra for live NER"
            ) from exc
        self._pipe = pipeline(
            "token-classification", model=model_name, aggregation_strategy="simple"
        )

    def tag(self, text: str) -> list[EntityMention]:
        try:
            raw = self._pipe(text)
        except Exception as exc:
            raise RetriableBackendError(f"NER backend failure: {exc}") from exc
        mentions = []
        for item in raw:
            tag = item["entity_group"]
            if tag not in TAG_FAMILIES:
                tag = "MISC"
            start, end = int(item["start"]), int(item["end"])
            mentions.append(
                EntityMention(
                    surface=text[start:end],
                    tag=tag,
                    start=start,
                    end=end,
                    confidence=float(item["score"]),
                )
            )
        return mentions


def merge_fragments(text: str, fragments: list[EntityMention]) -> list[EntityMention]:
    """Merge adjacent same-tag subword fragments into single mentions.

    Fragments are merged only when their spans touch with zero gap (wordpiece
    splits); distinct words keep separate mentions. Output spans never overlap.
    """
    ordered = sorted(fragments, key=lambda m: (m.start, m.end))
    merged: list[EntityMention] = []
    for fragment in ordered:
        if merged:
            last = merged[-1]
            if fragment.tag == last.tag and fragment.start == last.end:
                merged[-1] = EntityMention(
                    surface=text[last.start : fragment.end],
                    tag=last.tag,
                    start=last.start,
                    end=fragment.end,
                    confidence=min(last.confidence, fragment.confidence),
                )
                continue
            if fragment.start < last.end:
                # Overlapping duplicates: keep the earlier, wider mention.
                continue
        merged.append(fragment)
    return merged


def extract_entities(text: str, backend: NerBackend) -> list[EntityMention]:
    """Run the backend and return merged mentions ordered by span start."""
    if not text:
        raise ValueError("cannot extract entities from empty text")
    fragments = backend.tag(text)
    mentions = merge_fragments(text, fragments)
    for mention in mentions:
        mention.validate_against(text)
    return mentions
