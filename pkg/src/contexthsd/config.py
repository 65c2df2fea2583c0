"""Run configuration: one YAML file drives every stage.

Per-command flags only override keys that already exist here; validation is
eager so a bad config aborts before any artifact is written. The strategy/task
matrix is restricted to supported combinations: meme runs only take
multimodal-source context (there is no reliable named-entity signal in memes),
tweet runs take named-entity or full-text context.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import yaml

from .corpus import LATENT_HATRED, MAMI
from .errors import ValidationError
from .represent import StrategySpec

TASKS_BY_CORPUS = {
    LATENT_HATRED: ("binary", "multiclass"),
    MAMI: ("binary", "multilabel"),
}

SOURCES_BY_CORPUS = {
    LATENT_HATRED: ("named_entity", "full_text"),
    MAMI: ("multimodal",),
}

GEN_MODES = ("ne", "ft", "mm", "enhance-ne", "enhance-ft", "enhance-mm")


@dataclass(frozen=True)
class SplitConfig:
    ratio: float = 0.8
    seed: int = 1234


@dataclass(frozen=True)
class ProviderConfig:
    id: str = "mock-echo"
    model: str = ""
    parallelism: int = 4
    rate_per_sec: float = 0.0  # 0 disables rate limiting


@dataclass(frozen=True)
class EncoderConfig:
    id: str = "mock"
    ce_tail: str = "identity"  # mock tail kind for embedding fusion


@dataclass(frozen=True)
class NerConfig:
    backend: str = "lexicon"
    lexicon_path: str = ""
    model: str = "dslim/bert-base-NER"


@dataclass(frozen=True)
class LinkerConfig:
    fixture_path: str = ""
    endpoint: str = ""


@dataclass(frozen=True)
class ConceptConfig:
    table_path: str = ""
    dim: int = 300


@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 500
    learning_rate: float = 0.001
    batch_size: int = 64
    hidden_dims: tuple[int, ...] = (512, 512, 512)


@dataclass(frozen=True)
class RunConfig:
    corpus_name: str
    corpus_path: str
    output_dir: str
    split: SplitConfig = SplitConfig()
    provider: ProviderConfig = ProviderConfig()
    encoder: EncoderConfig = EncoderConfig()
    ner: NerConfig = NerConfig()
    linker: LinkerConfig = LinkerConfig()
    concepts: ConceptConfig = ConceptConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    strategies: tuple[str, ...] = ("zero_context",)
    tasks: tuple[str, ...] = ("binary",)
    runs: int = 5
    seed_base: int = 7
    failure_threshold: float = 0.05
    cache_path: str = ""
    labels_path: Optional[str] = None

    def resolved_cache_path(self) -> Path:
        if self.cache_path:
            return Path(self.cache_path)
        return Path(self.output_dir) / "cache" / "context_cache.jsonl"


def _section(raw: dict, key: str) -> dict:
    value = raw.get(key, {}) or {}
    if not isinstance(value, dict):
        raise ValidationError(f"config section {key!r} must be a mapping")
    return value


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}

    corpus = _section(raw, "corpus")
    classifier_raw = dict(_section(raw, "classifier"))
    if "hidden_dims" in classifier_raw:
        classifier_raw["hidden_dims"] = tuple(classifier_raw["hidden_dims"])
    try:
        config = RunConfig(
            corpus_name=corpus.get("name", ""),
            corpus_path=str(corpus.get("path", "")),
            output_dir=str(raw.get("output_dir", "out")),
            split=SplitConfig(**_section(raw, "split")),
            provider=ProviderConfig(**_section(raw, "provider")),
            encoder=EncoderConfig(**_section(raw, "encoder")),
            ner=NerConfig(**_section(raw, "ner")),
            linker=LinkerConfig(**_section(raw, "linker")),
            concepts=ConceptConfig(**_section(raw, "concepts")),
            classifier=ClassifierConfig(**classifier_raw),
            strategies=tuple(raw.get("strategies", ["zero_context"])),
            tasks=tuple(raw.get("tasks", ["binary"])),
            runs=int(raw.get("runs", 5)),
            seed_base=int(raw.get("seed_base", 7)),
            failure_threshold=float(raw.get("failure_threshold", 0.05)),
            cache_path=str(raw.get("cache_path", "")),
            labels_path=raw.get("labels_path"),
        )
    except TypeError as exc:
        raise ValidationError(f"bad config key: {exc}") from exc
    return config


def apply_overrides(
    config: RunConfig,
    *,
    provider: Optional[str] = None,
    mock: bool = False,
    seed_base: Optional[int] = None,
    runs: Optional[int] = None,
) -> RunConfig:
    if mock:
        config = replace(
            config,
            provider=replace(config.provider, id="mock-echo", model=""),
            encoder=replace(config.encoder, id="mock"),
        )
    elif provider:
        config = replace(config, provider=replace(config.provider, id=provider))
    if seed_base is not None:
        config = replace(config, seed_base=seed_base)
    if runs is not None:
        config = replace(config, runs=runs)
    return config


def validate_config(config: RunConfig) -> None:
    """Check paths, the strategy/task matrix, and numeric ranges."""
    if config.corpus_name not in TASKS_BY_CORPUS:
        raise ValidationError(f"unknown corpus name {config.corpus_name!r}")
    if not config.corpus_path or not Path(config.corpus_path).exists():
        raise ValidationError(f"corpus path does not exist: {config.corpus_path!r}")
    if not 0.0 < config.split.ratio < 1.0:
        raise ValidationError(f"split ratio must be in (0, 1), got {config.split.ratio}")
    if config.runs < 1:
        raise ValidationError("runs must be at least 1")

    allowed_tasks = TASKS_BY_CORPUS[config.corpus_name]
    for task in config.tasks:
        if task not in allowed_tasks:
            raise ValidationError(
                f"task {task!r} is not available for corpus {config.corpus_name}"
            )

    allowed_sources = SOURCES_BY_CORPUS[config.corpus_name]
    for name in config.strategies:
        spec = StrategySpec.parse(name)  # raises ConfigurationError on bad names
        if spec.source is not None and spec.source not in allowed_sources:
            raise ValidationError(
                f"strategy {name!r}: context source {spec.source!r} is not available "
                f"for corpus {config.corpus_name}"
            )

    for referenced in (
        config.ner.lexicon_path,
        config.linker.fixture_path,
        config.concepts.table_path,
        config.labels_path or "",
    ):
        if referenced and not Path(referenced).exists():
            raise ValidationError(f"referenced path does not exist: {referenced!r}")


def validate_gen_mode(config: RunConfig, mode: str) -> None:
    if mode not in GEN_MODES:
        raise ValidationError(f"unknown generation mode {mode!r}; choose from {GEN_MODES}")
    tweet_modes = ("ne", "ft", "enhance-ne", "enhance-ft")
    meme_modes = ("mm", "enhance-mm")
    if config.corpus_name == MAMI and mode in tweet_modes:
        raise ValidationError(
            f"generation mode {mode!r} is not available for the meme corpus"
        )
    if config.corpus_name == LATENT_HATRED and mode in meme_modes:
        raise ValidationError(
            f"generation mode {mode!r} is not available for the tweet corpus"
        )
