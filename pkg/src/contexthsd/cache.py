"""Append-only generation cache.

Every provider response is persisted as one JSON line keyed by a digest of
(prompt id, resolved inputs, provider id). Replaying the file applies
last-writer-wins per key, so concurrent appenders and partial reruns are safe;
a corrupt line is skipped with a log message rather than poisoning the store.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Optional

logger = logging.getLogger(__name__)

# Generation modes a record may carry.
MODE_NAMED_ENTITY = "named_entity"
MODE_FULL_TEXT = "full_text"
MODE_MULTIMODAL = "multimodal"
MODE_ENHANCE = "enhance"
MODE_OCR = "ocr"
MODE_CAPTION = "caption"

_FIELDS = ("cache_key", "post_id", "mode", "prompt_id", "provider_id", "text", "timestamp")


def compute_cache_key(
    prompt_id: str,
    inputs: Mapping[str, str],
    provider_id: str,
    image_digest: Optional[str] = None,
) -> str:
    """Stable digest identifying one generation request."""
    payload = {
        "prompt_id": prompt_id,
        "provider_id": provider_id,
        "inputs": dict(sorted(inputs.items())),
        "image": image_digest,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ContextRecord:
    """One generated (or linked) context text with provenance."""

    post_id: str
    mode: str
    text: str
    prompt_id: str
    provider_id: str
    cache_key: str
    timestamp: float = 0.0
    entities: Optional[tuple] = field(default=None, compare=False)

    @property
    def is_empty(self) -> bool:
        """Empty-context sentinel: no text was (or could be) generated."""
        return self.text == ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "cache_key": self.cache_key,
                "post_id": self.post_id,
                "mode": self.mode,
                "prompt_id": self.prompt_id,
                "provider_id": self.provider_id,
                "text": self.text,
                "timestamp": self.timestamp,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "ContextRecord":
        raw = json.loads(line)
        missing = [f for f in _FIELDS if f not in raw]
        if missing:
            raise ValueError(f"cache record missing fields {missing}")
        return cls(
            post_id=raw["post_id"],
            mode=raw["mode"],
            text=raw["text"],
            prompt_id=raw["prompt_id"],
            provider_id=raw["provider_id"],
            cache_key=raw["cache_key"],
            timestamp=float(raw["timestamp"]),
        )


def empty_sentinel(post_id: str, mode: str, prompt_id: str, provider_id: str, cache_key: str) -> ContextRecord:
    return ContextRecord(
        post_id=post_id,
        mode=mode,
        text="",
        prompt_id=prompt_id,
        provider_id=provider_id,
        cache_key=cache_key,
        timestamp=time.time(),
        entities=(),
    )


class ContextStore:
    """JSONL-backed cache of ContextRecords, safe for concurrent in-process writers."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._by_key: dict[str, ContextRecord] = {}
        self._by_post: dict[tuple[str, str, str], str] = {}
        if self.path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = ContextRecord.from_json(line)
                except (ValueError, KeyError) as exc:
                    logger.warning("%s:%d: skipping corrupt cache line (%s)", self.path, lineno, exc)
                    continue
                self._index(record)

    def _index(self, record: ContextRecord) -> None:
        self._by_key[record.cache_key] = record
        self._by_post[(record.post_id, record.mode, record.prompt_id)] = record.cache_key

    def get(self, cache_key: str) -> Optional[ContextRecord]:
        return self._by_key.get(cache_key)

    def lookup(self, post_id: str, mode: str, prompt_id: str) -> Optional[ContextRecord]:
        key = self._by_post.get((post_id, mode, prompt_id))
        return self._by_key.get(key) if key else None

    def put(self, record: ContextRecord) -> ContextRecord:
        """Append the record and index it; last writer wins per key."""
        if record.timestamp == 0.0:
            record = replace(record, timestamp=time.time())
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")
            self._index(record)
        return record

    def __len__(self) -> int:
        return len(self._by_key)

    def __iter__(self) -> Iterator[ContextRecord]:
        return iter(list(self._by_key.values()))
