"""Corpus loading, validation, deduplication, and stratified splitting.

Two corpora are supported: a tweet corpus labeled for (implicit) hate speech
and a meme corpus labeled for misogyny. Loaders validate schemas eagerly so a
bad file fails before any downstream stage runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import CorpusIntegrityError, RowValueError, SchemaError

logger = logging.getLogger(__name__)

LATENT_HATRED = "latent_hatred"
MAMI = "mami"

POSITIVE = "positive"
NEGATIVE = "negative"

# Fine-grained implicit hate classes, in registry order.
FINE_CLASSES = (
    "white_grievance",
    "incitement",
    "stereotypical",
    "inferiority",
    "irony",
    "threatening",
    "other",
)

# Misogyny sub-labels, in annotation-column order.
MAMI_LABELS = ("shaming", "stereotype", "objectification", "violence")

_LH_CLASS_TO_BINARY = {
    "not_hate": NEGATIVE,
    "implicit_hate": POSITIVE,
    "explicit_hate": POSITIVE,
}

_LH_COLUMNS = ("post", "class", "implicit_class")
_MAMI_COLUMNS = (
    "file_name",
    "misogynous",
    "shaming",
    "stereotype",
    "objectification",
    "violence",
    "Text Transcription",
)


@dataclass(frozen=True)
class Post:
    """One labeled corpus item."""

    id: str
    text: str
    binary_label: str
    fine_label: Optional[str] = None
    multi_labels: Optional[frozenset[str]] = None
    image_ref: Optional[str] = None


@dataclass(frozen=True)
class Corpus:
    name: str
    items: tuple[Post, ...]
    provenance: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.items)

    def by_id(self) -> dict[str, Post]:
        return {p.id: p for p in self.items}


@dataclass(frozen=True)
class SplitPair:
    train: Corpus
    test: Corpus
    ratio: float
    seed: int


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_columns(fieldnames: Iterable[str] | None, required: tuple[str, ...], path: Path) -> None:
    present = set(fieldnames or ())
    for col in required:
        if col not in present:
            raise SchemaError(f"{path}: missing required column {col!r}")


def load_latent_hatred(path: str | Path) -> Corpus:
    """Load the tweet corpus from its tab-separated release file.

    Rows are mapped to a binary label (implicit/explicit hate -> positive,
    not_hate -> negative); implicit rows additionally carry their fine-grained
    class when annotated. Row order is preserved and ids are derived from it.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    items: list[Post] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        _require_columns(reader.fieldnames, _LH_COLUMNS, path)
        for idx, row in enumerate(reader):
            cls = (row["class"] or "").strip()
            if cls not in _LH_CLASS_TO_BINARY:
                raise RowValueError(f"{path}: unknown class token {cls!r}", row=idx)
            binary = _LH_CLASS_TO_BINARY[cls]
            fine = None
            if cls == "implicit_hate":
                token = (row["implicit_class"] or "").strip()
                if token:
                    if token not in FINE_CLASSES:
                        raise RowValueError(
                            f"{path}: unknown implicit class token {token!r}", row=idx
                        )
                    fine = token
            items.append(
                Post(
                    id=f"lh-{idx:06d}",
                    text=row["post"] or "",
                    binary_label=binary,
                    fine_label=fine,
                )
            )
    return Corpus(
        name=LATENT_HATRED,
        items=tuple(items),
        provenance={path.name: _sha256_file(path)},
    )


def _find_annotation_files(directory: Path) -> list[Path]:
    files = sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix in (".tsv", ".csv")
    )
    if not files:
        raise SchemaError(f"{directory}: no annotation table (*.tsv/*.csv) found")
    return files


def _resolve_image(directory: Path, file_name: str) -> Optional[Path]:
    for candidate in (directory / file_name, directory / "images" / file_name):
        if candidate.is_file():
            return candidate
    return None


def _parse_binary_flag(row: dict, column: str, idx: int, path: Path) -> int:
    raw = (row[column] or "").strip()
    if raw not in ("0", "1"):
        raise RowValueError(f"{path}: label {column!r} outside {{0,1}}: {raw!r}", row=idx)
    return int(raw)


def load_mami(directory: str | Path) -> Corpus:
    """Load the meme corpus from an annotation table plus image directory.

    Memes with byte-identical images are duplicates; only the first occurrence
    is kept. Misogyny sub-labels are collected into a set per meme, empty for
    non-misogynous memes.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise SchemaError(f"{directory}: not a directory")

    provenance: dict[str, str] = {}
    rows: list[tuple[int, Path, dict]] = []
    for table in _find_annotation_files(directory):
        provenance[table.name] = _sha256_file(table)
        with open(table, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh, delimiter="\t")
            _require_columns(reader.fieldnames, _MAMI_COLUMNS, table)
            for idx, row in enumerate(reader):
                rows.append((idx, table, row))

    missing: list[str] = []
    seen_ids: set[str] = set()
    seen_digests: set[str] = set()
    items: list[Post] = []
    n_duplicates = 0
    for idx, table, row in rows:
        file_name = (row["file_name"] or "").strip()
        meme_id = Path(file_name).stem
        if meme_id in seen_ids:
            raise RowValueError(f"{table}: duplicate meme id {meme_id!r}", row=idx)
        seen_ids.add(meme_id)

        image = _resolve_image(directory, file_name)
        if image is None:
            missing.append(meme_id)
            continue

        misogynous = _parse_binary_flag(row, "misogynous", idx, table)
        labels = set()
        for label in MAMI_LABELS:
            if _parse_binary_flag(row, label, idx, table):
                labels.add(label)
        if not misogynous and labels:
            raise RowValueError(
                f"{table}: non-misogynous meme {meme_id!r} carries sub-labels", row=idx
            )

        digest = _sha256_file(image)
        if digest in seen_digests:
            n_duplicates += 1
            continue
        seen_digests.add(digest)

        items.append(
            Post(
                id=meme_id,
                text=row["Text Transcription"] or "",
                binary_label=POSITIVE if misogynous else NEGATIVE,
                multi_labels=frozenset(labels),
                image_ref=str(image),
            )
        )

    if missing:
        raise CorpusIntegrityError(f"{directory}: annotation rows without images", missing)
    if n_duplicates:
        logger.info("removed %d duplicate memes by image digest", n_duplicates)
    return Corpus(name=MAMI, items=tuple(items), provenance=provenance)


def stratum_key(corpus_name: str, post: Post) -> tuple:
    """Stratification key: finest annotated level for tweets, binary for memes."""
    if corpus_name == LATENT_HATRED:
        return (post.binary_label, post.fine_label or "")
    return (post.binary_label,)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(corpus: Corpus, ratio: float, seed: int) -> SplitPair:
    """Deterministic stratified split: shuffle-then-cut inside each stratum.

    Per-stratum train count is round-half-up(ratio * stratum size), so the
    achieved proportion is within one item of the target in every stratum.
    Singleton strata go to train with a warning.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")

    strata: dict[tuple, list[Post]] = {}
    for post in corpus.items:
        strata.setdefault(stratum_key(corpus.name, post), []).append(post)

    rng = random.Random(seed)
    train_ids: set[str] = set()
    for key in sorted(strata):
        members = list(strata[key])
        if len(members) == 1:
            logger.warning(
                "stratum %r has a single item %s; assigning it to train", key, members[0].id
            )
            train_ids.add(members[0].id)
            continue
        rng.shuffle(members)
        n_train = _round_half_up(ratio * len(members))
        train_ids.update(p.id for p in members[:n_train])

    train_items = tuple(p for p in corpus.items if p.id in train_ids)
    test_items = tuple(p for p in corpus.items if p.id not in train_ids)
    return SplitPair(
        train=Corpus(corpus.name, train_items, corpus.provenance),
        test=Corpus(corpus.name, test_items, corpus.provenance),
        ratio=ratio,
        seed=seed,
    )


@dataclass(frozen=True)
class CorpusStats:
    """Counts and proportions per label level, used as loader self-checks."""

    name: str
    total: int
    binary_counts: dict[str, int]
    fine_counts: dict[str, int]
    fine_labeled_total: int
    multi_counts: dict[str, int]
    positive_total: int

    def binary_proportions(self) -> dict[str, float]:
        return {k: v / self.total if self.total else 0.0 for k, v in self.binary_counts.items()}

    def fine_proportions(self) -> dict[str, float]:
        denom = self.fine_labeled_total
        return {k: v / denom if denom else 0.0 for k, v in self.fine_counts.items()}

    def multi_proportions(self) -> dict[str, float]:
        denom = self.positive_total
        return {k: v / denom if denom else 0.0 for k, v in self.multi_counts.items()}

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "total": self.total,
            "binary_counts": dict(self.binary_counts),
            "binary_proportions": self.binary_proportions(),
            "fine_counts": dict(self.fine_counts),
            "fine_labeled_total": self.fine_labeled_total,
            "fine_proportions": self.fine_proportions(),
            "multi_counts": dict(self.multi_counts),
            "positive_total": self.positive_total,
            "multi_proportions": self.multi_proportions(),
        }

    def format_table(self) -> str:
        lines = [f"corpus: {self.name} ({self.total} items)"]
        for label in (NEGATIVE, POSITIVE):
            n = self.binary_counts.get(label, 0)
            lines.append(f"  {label:<16} {n:>7}  {100.0 * n / self.total if self.total else 0:6.2f}%")
        if self.fine_labeled_total:
            lines.append(f"  fine-grained classes ({self.fine_labeled_total} labeled):")
            for cls in FINE_CLASSES:
                n = self.fine_counts.get(cls, 0)
                lines.append(
                    f"    {cls:<16} {n:>6}  {100.0 * n / self.fine_labeled_total:6.2f}%"
                )
        if self.name == MAMI and self.positive_total:
            lines.append(f"  misogyny sub-labels (of {self.positive_total} misogynous):")
            for label in MAMI_LABELS:
                n = self.multi_counts.get(label, 0)
                lines.append(
                    f"    {label:<16} {n:>6}  {100.0 * n / self.positive_total:6.2f}%"
                )
        return "\n".join(lines)


def corpus_stats(corpus: Corpus) -> CorpusStats:
    binary = {NEGATIVE: 0, POSITIVE: 0}
    fine = {cls: 0 for cls in FINE_CLASSES}
    multi = {label: 0 for label in MAMI_LABELS}
    fine_total = 0
    for post in corpus.items:
        binary[post.binary_label] += 1
        if post.fine_label is not None:
            fine[post.fine_label] += 1
            fine_total += 1
        if post.multi_labels:
            for label in post.multi_labels:
                multi[label] += 1
    return CorpusStats(
        name=corpus.name,
        total=len(corpus.items),
        binary_counts=binary,
        fine_counts=fine,
        fine_labeled_total=fine_total,
        multi_counts=multi,
        positive_total=binary[POSITIVE],
    )


def write_split_manifest(split: SplitPair, path: str | Path) -> None:
    """Persist the partition as line-delimited {id, partition} records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for post in split.train.items:
            fh.write(json.dumps({"id": post.id, "partition": "train"}) + "\n")
        for post in split.test.items:
            fh.write(json.dumps({"id": post.id, "partition": "test"}) + "\n")


def read_split_manifest(path: str | Path) -> dict[str, str]:
    assignments: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            assignments[record["id"]] = record["partition"]
    return assignments


def apply_split_manifest(corpus: Corpus, path: str | Path, ratio: float, seed: int) -> SplitPair:
    """Rebuild a SplitPair from a persisted manifest, for exact reproducibility."""
    assignments = read_split_manifest(path)
    unknown = [p.id for p in corpus.items if p.id not in assignments]
    if unknown:
        raise CorpusIntegrityError("corpus ids missing from split manifest", unknown)
    train = tuple(p for p in corpus.items if assignments[p.id] == "train")
    test = tuple(p for p in corpus.items if assignments[p.id] == "test")
    return SplitPair(
        train=Corpus(corpus.name, train, corpus.provenance),
        test=Corpus(corpus.name, test, corpus.provenance),
        ratio=ratio,
        seed=seed,
    )
