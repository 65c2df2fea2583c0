"""Static-knowledge baselines: entity-link summaries and concept vectors.

The default linker backend is an offline fixture table (the live linker is
unreliable on informal text: wrong casing defeats it), kept behind the same
interface as the live client. The concept baseline maps n-grams to a
pre-trained 300-dimensional vector table and averages the hits.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .errors import RetriableBackendError, SchemaError

CONCEPT_DIM = 300

_SENTENCE_END = re.compile(r"[.!?]+(?=\s|$)")
_TOKEN = re.compile(r"[a-z0-9']+")


@dataclass(frozen=True)
class LinkedEntity:
    surface: str
    article_title: str
    summary: str


def first_sentences(text: str, n: int = 2) -> str:
    """Truncate to the first n sentence-terminated segments.

    A sentence boundary is ./!/? followed by whitespace or end of string;
    trailing unterminated text counts as a final segment.
    """
    text = text.strip()
    if not text:
        return ""
    ends = [m.end() for m in _SENTENCE_END.finditer(text)]
    if len(ends) >= n:
        return text[: ends[n - 1]].strip()
    return text


class LinkerBackend(Protocol):
    def link(self, text: str) -> list[tuple[str, str, str]]:
        """Return (surface, article title, raw summary) triples, ordered by first occurrence."""
        ...


class FixtureLinker:
    """Offline surface -> (title, summary) table; misses yield no link."""

    def __init__(self, table: dict[str, dict[str, str]]):
        self.table = {surface.casefold(): entry for surface, entry in table.items()}
        if self.table:
            alternatives = sorted(self.table, key=len, reverse=True)
            self._pattern = re.compile(
                r"(?<!\w)(" + "|".join(re.escape(s) for s in alternatives) + r")(?!\w)",
                re.IGNORECASE,
            )
        else:
            self._pattern = None

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureLinker":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def link(self, text: str) -> list[tuple[str, str, str]]:
        if self._pattern is None:
            return []
        seen: set[str] = set()
        links = []
        for match in self._pattern.finditer(text):
            key = match.group(1).casefold()
            if key in seen:
                continue
            seen.add(key)
            entry = self.table[key]
            links.append((match.group(1), entry["title"], entry["summary"]))
        return links


class RelApiLinker:
    """Thin client for a live entity-linking HTTP endpoint (integration only).

    Calls are rate-limited like LLM provider calls when a limiter is given.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, limiter=None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.limiter = limiter

    def link(self, text: str) -> list[tuple[str, str, str]]:
        import requests

        if self.limiter is not None:
            self.limiter.acquire()
        try:
            response = requests.post(
                self.endpoint, json={"text": text, "spans": []}, timeout=self.timeout
            )
            response.raise_for_status()
        except requests.RequestException as exc:
            raise RetriableBackendError(f"linker unavailable: {exc}") from exc
        links = []
        seen: set[str] = set()
        for row in response.json():
            # Rows are (start, length, mention, entity, ...) tuples.
            mention, entity = row[2], row[3]
            if entity in seen:
                continue
            seen.add(entity)
            links.append((mention, entity, self._summary(entity)))
        return links

    def _summary(self, title: str) -> str:
        import requests

        url = f"https://en.wikipedia.org/api/rest_v1/page/summary/{title.replace(' ', '_')}"
        try:
            response = requests.get(url, timeout=self.timeout)
            response.raise_for_status()
            return response.json().get("extract", "")
        except requests.RequestException as exc:
            raise RetriableBackendError(f"summary fetch failed: {exc}") from exc


def link_and_summarize(text: str, linker: LinkerBackend) -> list[LinkedEntity]:
    """Link mentions and keep the first two sentences of each article summary."""
    return [
        LinkedEntity(surface=surface, article_title=title, summary=first_sentences(summary, 2))
        for surface, title, summary in linker.link(text)
    ]


def rel_augment(post_text: str, links: list[LinkedEntity], separator: str = " ") -> str:
    """Append linked summaries to the post; posts without links stay unchanged."""
    if not links:
        return post_text
    return post_text + separator + " ".join(link.summary for link in links)


class ConceptTable:
    """Concept -> vector table in the standard text release format.

    One row per concept: the token followed by its space-separated components.
    An optional leading `count dim` header line is skipped. Multi-word concepts
    use underscores.
    """

    def __init__(self, vectors: dict[str, np.ndarray], dim: int = CONCEPT_DIM):
        self.dim = dim
        self.vectors = vectors
        for token, vec in vectors.items():
            if vec.shape != (dim,):
                raise SchemaError(f"concept {token!r} has {vec.shape[0]} components, expected {dim}")

    @classmethod
    def from_file(cls, path: str | Path, dim: int = CONCEPT_DIM) -> "ConceptTable":
        vectors: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split(" ")
                if not line.strip():
                    continue
                if lineno == 1 and len(parts) == 2:
                    continue  # word2vec-style header
                if len(parts) != dim + 1:
                    raise SchemaError(
                        f"{path}:{lineno}: expected token + {dim} components, got {len(parts)} fields"
                    )
                try:
                    vectors[parts[0]] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
                except ValueError as exc:
                    raise SchemaError(f"{path}:{lineno}: malformed component ({exc})") from exc
        return cls(vectors, dim=dim)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def get(self, token: str) -> Optional[np.ndarray]:
        return self.vectors.get(token)


def normalize_tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.casefold())


def match_concepts(tokens: list[str], table: ConceptTable, max_n: int = 3) -> list[tuple[int, int, str]]:
    """Longest-first greedy n-gram matching over the token sequence.

    Returns (start, end, concept key) triples over token positions; a token is
    consumed by at most one match.
    """
    consumed = [False] * len(tokens)
    matches: list[tuple[int, int, str]] = []
    for n in range(max_n, 0, -1):
        for i in range(0, len(tokens) - n + 1):
            if any(consumed[i : i + n]):
                continue
            key = "_".join(tokens[i : i + n])
            if key in table:
                matches.append((i, i + n, key))
                for j in range(i, i + n):
                    consumed[j] = True
    matches.sort(key=lambda m: m[0])
    return matches


def conceptnet_vector(text: str, table: ConceptTable) -> np.ndarray:
    """Average the matched concept vectors and L2-normalize.

    No matches yields the all-zeros vector (left unnormalized by definition).
    """
    tokens = normalize_tokens(text)
    matches = match_concepts(tokens, table)
    if not matches:
        return np.zeros(table.dim, dtype=np.float64)
    stacked = np.stack([table.get(key) for _, _, key in matches])
    mean = stacked.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        return np.zeros(table.dim, dtype=np.float64)
    return mean / norm
