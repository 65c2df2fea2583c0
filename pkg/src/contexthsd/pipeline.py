"""Stage drivers behind the CLI: ingest, context generation, representation,
training, evaluation, comparison, and plotting.

Stages after generation are content-stamped: each writes a digest of its
actual inputs next to its outputs and becomes a no-op while that digest is
unchanged. Context generation needs no stamp because the cache itself is the
resume mechanism (already-cached keys are skipped).
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import cache as cachemod
from .cache import ContextStore
from .classify import (
    Abstention,
    ContextEmbedModel,
    LabelRegistry,
    llm_predict,
    predict,
    train_context_embed,
)
from .config import RunConfig, validate_config, validate_gen_mode
from .contextgen import (
    GenerationSession,
    generate_entity_context,
    generate_fulltext_context,
    generate_multimodal_assets,
    llm_enhance,
)
from .corpus import (
    LATENT_HATRED,
    MAMI,
    Corpus,
    Post,
    SplitPair,
    apply_split_manifest,
    corpus_stats,
    load_latent_hatred,
    load_mami,
    stratified_split,
    write_split_manifest,
)
from .encoders import build_encoder, build_token_access
from .errors import (
    GenerationError,
    InputError,
    MissingContextError,
    RetriableBackendError,
    ThresholdExceededError,
    UpstreamMissingError,
    ValidationError,
)
from .evaluate import (
    AggregateReport,
    MetricReport,
    aggregate,
    classification_report,
    multilabel_f1,
    plot_confusion,
    prediction_diff,
    write_confusion_csv,
)
from .linkers import ConceptTable, FixtureLinker
from .mlp import MLPConfig, load_model, save_model, train_mlp
from .ner import LexiconNer, TransformersNer, extract_entities
from .providers import TokenBucket, build_provider
from .represent import (
    CONTEXT_EMBED,
    CONTEXT_KEYS,
    ENHANCE_KEYS,
    StrategyInputs,
    StrategySpec,
    base_text,
    build_representations,
    load_representations,
    missing_context_ids,
    save_representations,
)

logger = logging.getLogger(__name__)

TASK_HEADS = {"binary": "softmax_2", "multiclass": "softmax_7", "multilabel": "sigmoid_4"}


# ---------------------------------------------------------------------------
# Shared helpers


def _out(config: RunConfig, *parts: str) -> Path:
    return Path(config.output_dir).joinpath(*parts)


def _digest(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _stamp_current(config: RunConfig, stage: str, digest: str, outputs: list[Path]) -> bool:
    stamp = _out(config, "stamps", f"{stage}.json")
    if not stamp.exists():
        return False
    if not all(p.exists() for p in outputs):
        return False
    try:
        recorded = json.loads(stamp.read_text())
    except json.JSONDecodeError:
        return False
    return recorded.get("inputs") == digest


def _write_stamp(config: RunConfig, stage: str, digest: str) -> None:
    stamp = _out(config, "stamps", f"{stage}.json")
    stamp.parent.mkdir(parents=True, exist_ok=True)
    stamp.write_text(json.dumps({"stage": stage, "inputs": digest}, indent=2))


def _load_corpus(config: RunConfig) -> Corpus:
    if config.corpus_name == LATENT_HATRED:
        return load_latent_hatred(config.corpus_path)
    return load_mami(config.corpus_path)


def _manifest_path(config: RunConfig) -> Path:
    return _out(config, "manifests", f"{config.corpus_name}_split.jsonl")


def _load_split(config: RunConfig, corpus: Optional[Corpus] = None) -> SplitPair:
    manifest = _manifest_path(config)
    if not manifest.exists():
        raise UpstreamMissingError("split manifest not found", "ingest")
    corpus = corpus or _load_corpus(config)
    return apply_split_manifest(corpus, manifest, config.split.ratio, config.split.seed)


def _store(config: RunConfig) -> ContextStore:
    return ContextStore(config.resolved_cache_path())


def _session(config: RunConfig) -> GenerationSession:
    provider = build_provider(config.provider.id, config.provider.model)
    limiter = None
    if config.provider.rate_per_sec > 0:
        limiter = TokenBucket(config.provider.rate_per_sec, burst=config.provider.parallelism)
    return GenerationSession(provider=provider, store=_store(config), limiter=limiter)


def _ner_backend(config: RunConfig):
    if config.ner.backend == "lexicon":
        if not config.ner.lexicon_path:
            raise ValidationError("ner.backend=lexicon requires ner.lexicon_path")
        return LexiconNer.from_file(config.ner.lexicon_path)
    if config.ner.backend == "transformers":
        return TransformersNer(config.ner.model)
    raise ValidationError(f"unknown NER backend {config.ner.backend!r}")


def _strategy_inputs(config: RunConfig, store: ContextStore, spec: StrategySpec) -> StrategyInputs:
    inputs = StrategyInputs(store=store, corpus_name=config.corpus_name)
    if spec.method == "rel":
        if not config.linker.fixture_path:
            raise ValidationError("rel strategy requires linker.fixture_path")
        inputs.linker = FixtureLinker.from_file(config.linker.fixture_path)
    if spec.method == "conceptnet":
        if not config.concepts.table_path:
            raise ValidationError("conceptnet strategy requires concepts.table_path")
        inputs.concepts = ConceptTable.from_file(config.concepts.table_path, dim=config.concepts.dim)
    return inputs


def _registry(config: RunConfig) -> LabelRegistry:
    return LabelRegistry.load(config.labels_path)


def _relevant_cache_digest(store: ContextStore, posts: list[Post], keys: list[tuple[str, str]]) -> str:
    """Digest of exactly the cache records a stage consumes."""
    entries = []
    for post in posts:
        for mode, prompt_id in keys:
            record = store.lookup(post.id, mode, prompt_id)
            if record is not None:
                entries.append((post.id, mode, prompt_id, record.cache_key, record.text))
    entries.sort()
    return _digest(entries)


# ---------------------------------------------------------------------------
# ingest


def run_ingest(config: RunConfig) -> dict:
    """Load, validate, dedup, split; write the manifest and a stats report."""
    validate_config(config)
    corpus = _load_corpus(config)
    digest = _digest(
        {"provenance": corpus.provenance, "ratio": config.split.ratio, "seed": config.split.seed}
    )
    manifest = _manifest_path(config)
    stats_path = _out(config, "reports", "ingest_stats.json")
    if _stamp_current(config, "ingest", digest, [manifest, stats_path]):
        return {"status": "up-to-date", "items": len(corpus)}

    stats = corpus_stats(corpus)
    split = stratified_split(corpus, config.split.ratio, config.split.seed)
    write_split_manifest(split, manifest)
    stats_path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "stats": stats.to_dict(),
        "split": {
            "ratio": config.split.ratio,
            "seed": config.split.seed,
            "train": len(split.train),
            "test": len(split.test),
        },
    }
    stats_path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    _write_stamp(config, "ingest", digest)
    print(stats.format_table())
    print(f"split: {len(split.train)} train / {len(split.test)} test -> {manifest}")
    return {"status": "built", "items": len(corpus), "train": len(split.train), "test": len(split.test)}


# ---------------------------------------------------------------------------
# gen-context


def _gen_one(
    config: RunConfig,
    session: GenerationSession,
    mode: str,
    post: Post,
    ner_backend,
    store: ContextStore,
) -> Optional[str]:
    """Generate whatever `mode` requires for one post; returns a skip reason."""
    if mode == "ne":
        entities = extract_entities(post.text, ner_backend) if post.text else []
        generate_entity_context(session, post.id, entities)
    elif mode == "ft":
        generate_fulltext_context(session, post)
    elif mode == "mm":
        generate_multimodal_assets(session, post.id, post.image_ref)
    elif mode in ("enhance-ne", "enhance-ft"):
        source = "named_entity" if mode == "enhance-ne" else "full_text"
        cmode, cprompt = CONTEXT_KEYS[source]
        context = store.lookup(post.id, cmode, cprompt)
        if context is None:
            raise UpstreamMissingError(
                f"no {source} context for post {post.id}",
                f"gen-context --mode {'ne' if source == 'named_entity' else 'ft'}",
            )
        llm_enhance(session, post.text, context, mode="textual")
    elif mode == "enhance-mm":
        ocr = store.lookup(post.id, cachemod.MODE_OCR, "ocr")
        caption = store.lookup(post.id, cachemod.MODE_CAPTION, "caption")
        context = store.lookup(post.id, cachemod.MODE_MULTIMODAL, "meme_context")
        if ocr is None or caption is None or context is None:
            raise UpstreamMissingError(
                f"no multimodal assets for meme {post.id}", "gen-context --mode mm"
            )
        llm_enhance(
            session, ocr.text, context, mode="multimodal", image_description=caption.text
        )
    return None


def run_gen_context(config: RunConfig, mode: str) -> dict:
    """Populate the cache for one generation mode; resumable and rate-limited."""
    validate_config(config)
    validate_gen_mode(config, mode)
    corpus = _load_corpus(config)
    session = _session(config)
    store = session.store
    ner_backend = _ner_backend(config) if mode == "ne" else None

    failures: list[tuple[str, str]] = []

    def work(post: Post) -> None:
        try:
            _gen_one(config, session, mode, post, ner_backend, store)
        except (GenerationError, RetriableBackendError, InputError) as exc:
            failures.append((post.id, str(exc)))

    before = len(store)
    parallelism = max(1, config.provider.parallelism)
    if parallelism == 1:
        for post in corpus.items:
            work(post)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(work, corpus.items))
    generated = len(store) - before

    total = len(corpus.items)
    done = total - len(failures)
    summary = {
        "status": "complete" if not failures else "failures",
        "mode": mode,
        "items": total,
        "generated_records": generated,
        "failed": len(failures),
    }
    print(
        f"gen-context --mode {mode}: {done}/{total} items ok, "
        f"{generated} new cache records, {len(failures)} failures"
    )
    if mode in ("ft", "mm"):
        # Length sanity metric: generated context tends to dwarf the post.
        cmode, cprompt = CONTEXT_KEYS["full_text" if mode == "ft" else "multimodal"]
        post_tokens, ctx_tokens = [], []
        for post in corpus.items:
            record = store.lookup(post.id, cmode, cprompt)
            if record is not None and not record.is_empty:
                post_tokens.append(len(post.text.split()))
                ctx_tokens.append(len(record.text.split()))
        if ctx_tokens:
            mean_post = sum(post_tokens) / len(post_tokens)
            mean_ctx = sum(ctx_tokens) / len(ctx_tokens)
            summary["mean_post_tokens"] = round(mean_post, 2)
            summary["mean_context_tokens"] = round(mean_ctx, 2)
            print(
                f"  length sanity: mean post {mean_post:.1f} tokens, "
                f"mean context {mean_ctx:.1f} tokens"
            )
    if failures:
        for post_id, message in failures[:10]:
            logger.error("generation failed for %s: %s", post_id, message)
        if len(failures) / max(1, total) > config.failure_threshold:
            raise ThresholdExceededError("generation failure rate above threshold", len(failures), total)
    return summary


# ---------------------------------------------------------------------------
# represent


def _producing_gen_command(spec: StrategySpec, corpus_name: str) -> str:
    alias = {"named_entity": "ne", "full_text": "ft", "multimodal": "mm"}
    if spec.source is not None:
        base = f"gen-context --mode {alias[spec.source]}"
        if spec.method == "llm_enhance":
            base += f" then gen-context --mode enhance-{alias[spec.source]}"
        return base
    return "gen-context --mode mm" if corpus_name == MAMI else "gen-context"


def _strategy_cache_keys(spec: StrategySpec, corpus_name: str) -> list[tuple[str, str]]:
    keys: list[tuple[str, str]] = []
    if corpus_name == MAMI:
        keys += [(cachemod.MODE_OCR, "ocr"), (cachemod.MODE_CAPTION, "caption")]
    if spec.source is not None:
        keys.append(CONTEXT_KEYS[spec.source])
        if spec.method == "llm_enhance":
            keys.append(ENHANCE_KEYS[spec.source])
    return keys


def _aux_digests(config: RunConfig, spec: StrategySpec) -> dict:
    aux = {}
    if spec.method == "rel" and config.linker.fixture_path:
        aux["linker"] = _file_digest(Path(config.linker.fixture_path))
    if spec.method == "conceptnet" and config.concepts.table_path:
        aux["concepts"] = _file_digest(Path(config.concepts.table_path))
    return aux


def run_represent(config: RunConfig, strategy_name: str) -> dict:
    """Build and persist train/test matrices for one strategy."""
    validate_config(config)
    spec = StrategySpec.parse(strategy_name)
    if spec.method == "llm_prediction":
        return {"status": "skipped", "reason": "llm_prediction uses no representations"}
    corpus = _load_corpus(config)
    split = _load_split(config, corpus)
    store = _store(config)
    encoder = build_encoder(config.encoder.id)

    directory = _out(config, "representations", strategy_name)
    cache_digest = _relevant_cache_digest(
        store, list(corpus.items), _strategy_cache_keys(spec, config.corpus_name)
    )
    digest = _digest(
        {
            "strategy": strategy_name,
            "encoder": encoder.encoder_id,
            "cache": cache_digest,
            "manifest": _file_digest(_manifest_path(config)),
            "aux": _aux_digests(config, spec),
        }
    )

    if spec.method == CONTEXT_EMBED:
        # Representations depend on the projection learned at training time;
        # here we only verify the contexts exist and record the input digest.
        marker = directory / "deferred.json"
        if _stamp_current(config, f"represent_{strategy_name}", digest, [marker]):
            return {"status": "up-to-date", "strategy": strategy_name}
        inputs = _strategy_inputs(config, store, spec)
        missing = missing_context_ids(list(corpus.items), spec, inputs)
        if missing:
            raise UpstreamMissingError(
                f"contexts missing for {len(missing)} posts (e.g. {missing[:3]})",
                _producing_gen_command(spec, config.corpus_name),
            )
        directory.mkdir(parents=True, exist_ok=True)
        marker.write_text(json.dumps({"strategy": strategy_name, "deferred": True}))
        _write_stamp(config, f"represent_{strategy_name}", digest)
        return {"status": "deferred", "strategy": strategy_name}

    outputs = [
        directory / "train.npy",
        directory / "test.npy",
        directory / "train.manifest.json",
        directory / "test.manifest.json",
    ]
    if _stamp_current(config, f"represent_{strategy_name}", digest, outputs):
        return {"status": "up-to-date", "strategy": strategy_name}

    inputs = _strategy_inputs(config, store, spec)
    shapes = {}
    for partition, part_corpus in (("train", split.train), ("test", split.test)):
        try:
            ids, matrix = build_representations(list(part_corpus.items), spec, inputs, encoder)
        except MissingContextError as exc:
            raise UpstreamMissingError(
                f"{len(exc.ids)} posts lack cached contexts for {strategy_name}",
                _producing_gen_command(spec, config.corpus_name),
            ) from exc
        save_representations(directory, partition, ids, matrix, strategy_name, encoder.encoder_id)
        shapes[partition] = list(matrix.shape)
    _write_stamp(config, f"represent_{strategy_name}", digest)
    print(f"represent {strategy_name}: train {shapes['train']}, test {shapes['test']}")
    return {"status": "built", "strategy": strategy_name, "shapes": shapes}


# ---------------------------------------------------------------------------
# train


def _task_posts(posts: list[Post], task: str) -> list[Post]:
    if task == "multiclass":
        return [p for p in posts if p.fine_label is not None]
    return list(posts)


def _task_targets(posts: list[Post], task: str, registry: LabelRegistry) -> np.ndarray:
    if task == "binary":
        index = {cls: i for i, cls in enumerate(registry.binary_classes)}
        return np.array([index[p.binary_label] for p in posts])
    if task == "multiclass":
        index = {cls: i for i, cls in enumerate(registry.multiclass_classes)}
        return np.array([index[p.fine_label] for p in posts])
    matrix = np.zeros((len(posts), len(registry.multilabel_classes)))
    for i, post in enumerate(posts):
        for j, label in enumerate(registry.multilabel_classes):
            if post.multi_labels and label in post.multi_labels:
                matrix[i, j] = 1.0
    return matrix


def _true_labels(posts: list[Post], task: str):
    if task == "binary":
        return [p.binary_label for p in posts]
    if task == "multiclass":
        return [p.fine_label for p in posts]
    return [p.multi_labels or frozenset() for p in posts]


def _select_rows(ids: list[str], matrix: np.ndarray, wanted: list[str]) -> np.ndarray:
    index = {post_id: row for row, post_id in enumerate(ids)}
    missing = [w for w in wanted if w not in index]
    if missing:
        raise UpstreamMissingError(
            f"representations missing for ids {missing[:3]}...", "represent"
        )
    return matrix[[index[w] for w in wanted]]


def _mlp_config(config: RunConfig, input_dim: int, task: str, seed: int) -> MLPConfig:
    return MLPConfig(
        input_dim=input_dim,
        hidden_dims=config.classifier.hidden_dims,
        output_head=TASK_HEADS[task],
        epochs=config.classifier.epochs,
        learning_rate=config.classifier.learning_rate,
        batch_size=config.classifier.batch_size,
        seed=seed,
    )


def _ce_training_data(
    config: RunConfig, posts: list[Post], spec: StrategySpec, store: ContextStore
):
    inputs = StrategyInputs(store=store, corpus_name=config.corpus_name)
    mode, prompt_id = CONTEXT_KEYS[spec.source]
    ordered = sorted(posts, key=lambda p: p.id)
    texts, contexts = [], []
    producer = _producing_gen_command(spec, config.corpus_name)
    for post in ordered:
        record = store.lookup(post.id, mode, prompt_id)
        if record is None:
            raise UpstreamMissingError(f"context missing for {post.id}", producer)
        try:
            texts.append(base_text(post, inputs))
        except MissingContextError as exc:
            raise UpstreamMissingError(f"base text assets missing for {post.id}", producer) from exc
        contexts.append(record)
    return ordered, texts, contexts


def run_train(config: RunConfig, strategy_name: str, task: str) -> dict:
    """Train `runs` seeded models for one (strategy, task) experiment."""
    validate_config(config)
    if task not in config.tasks:
        raise ValidationError(f"task {task!r} is not enabled in the config")
    spec = StrategySpec.parse(strategy_name)
    if not spec.trains_model:
        return {"status": "skipped", "reason": "llm_prediction baseline trains no model"}

    corpus = _load_corpus(config)
    split = _load_split(config, corpus)
    registry = _registry(config)
    store = _store(config)
    seeds = [config.seed_base + i for i in range(config.runs)]
    model_dir = _out(config, "models", f"{task}_{strategy_name}")
    directory = _out(config, "representations", strategy_name)

    train_posts = _task_posts(sorted(split.train.items, key=lambda p: p.id), task)
    y = _task_targets(train_posts, task, registry)
    wanted = [p.id for p in train_posts]

    if spec.method == CONTEXT_EMBED:
        encoder = build_encoder(config.encoder.id)
        token_access = build_token_access(config.encoder.id, tail=config.encoder.ce_tail)
        ordered, texts, contexts = _ce_training_data(config, train_posts, spec, store)
        y = _task_targets(ordered, task, registry)
        digest = _digest(
            {
                "strategy": strategy_name,
                "task": task,
                "cache": _relevant_cache_digest(
                    store, ordered, _strategy_cache_keys(spec, config.corpus_name)
                ),
                "classifier": config.classifier.__dict__,
                "seeds": seeds,
                "tail": token_access.tail_fingerprint(),
            },
        )
        outputs = [model_dir / f"seed{s}.npz" for s in seeds]
        if _stamp_current(config, f"train_{task}_{strategy_name}", digest, outputs):
            return {"status": "up-to-date"}
        fingerprint_before = token_access.tail_fingerprint()
        for seed in seeds:
            mlp_config = _mlp_config(config, token_access.token_dim, task, seed)
            model = train_context_embed(
                texts,
                contexts,
                y,
                encoder,
                token_access,
                mlp_config,
                strategy_tag=strategy_name,
                max_tokens=encoder.max_tokens,
            )
            model.save(model_dir / f"seed{seed}.npz")
        assert token_access.tail_fingerprint() == fingerprint_before, "frozen tail was mutated"
        _write_stamp(config, f"train_{task}_{strategy_name}", digest)
        print(
            f"train {task}/{strategy_name}: {len(seeds)} seeds x "
            f"{config.classifier.epochs} epochs (joint projection)"
        )
        return {"status": "built", "seeds": seeds}

    if not (directory / "train.npy").exists():
        raise UpstreamMissingError(
            f"representations for {strategy_name} not found", f"represent --strategy {strategy_name}"
        )
    ids, matrix, _ = load_representations(directory, "train")
    X = _select_rows(ids, matrix, wanted)
    digest = _digest(
        {
            "strategy": strategy_name,
            "task": task,
            "matrix": _file_digest(directory / "train.npy"),
            "classifier": config.classifier.__dict__,
            "seeds": seeds,
        }
    )
    outputs = [model_dir / f"seed{s}.npz" for s in seeds]
    if _stamp_current(config, f"train_{task}_{strategy_name}", digest, outputs):
        return {"status": "up-to-date"}

    for seed in seeds:
        mlp_config = _mlp_config(config, X.shape[1], task, seed)
        model = train_mlp(X, y, mlp_config, strategy_tag=strategy_name)
        save_model(model, model_dir / f"seed{seed}.npz")
    _write_stamp(config, f"train_{task}_{strategy_name}", digest)
    print(f"train {task}/{strategy_name}: {len(seeds)} seeds x {config.classifier.epochs} epochs")
    return {"status": "built", "seeds": seeds}


# ---------------------------------------------------------------------------
# eval


def _report_dir(config: RunConfig, task: str, strategy_name: str) -> Path:
    return _out(config, "reports", f"{task}_{strategy_name}")


def _predictions_to_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _label_to_json(value):
    if isinstance(value, frozenset):
        return sorted(value)
    return value


def _build_report(
    task: str,
    seed: int,
    truths,
    preds,
    registry: LabelRegistry,
) -> MetricReport:
    if task == "multilabel":
        return multilabel_f1(truths, preds, registry.multilabel_classes, task=task, seed=seed)
    if task == "binary":
        return classification_report(
            task, seed, truths, preds, registry.binary_classes, positive_class=registry.positive_class
        )
    return classification_report(
        task, seed, truths, preds, registry.multiclass_classes, named_subset=registry.named_subset
    )


def _llm_task_name(config: RunConfig, task: str) -> str:
    if config.corpus_name == LATENT_HATRED:
        return {"binary": "binary_tweet", "multiclass": "multiclass_tweet"}[task]
    return {"binary": "binary_meme", "multilabel": "multilabel_meme"}[task]


def _require_model(model_dir: Path, seed: int, strategy_name: str, task: str) -> Path:
    path = model_dir / f"seed{seed}.npz"
    if not path.exists():
        raise UpstreamMissingError(
            f"model {path} not found", f"train --strategy {strategy_name} --task {task}"
        )
    return path


def run_eval(config: RunConfig, strategy_name: str, task: str) -> dict:
    """Evaluate all seeds of one experiment on the test split and aggregate."""
    validate_config(config)
    spec = StrategySpec.parse(strategy_name)
    corpus = _load_corpus(config)
    split = _load_split(config, corpus)
    registry = _registry(config)
    report_dir = _report_dir(config, task, strategy_name)
    stage = f"eval_{task}_{strategy_name}"

    test_posts = _task_posts(sorted(split.test.items, key=lambda p: p.id), task)
    truths = _true_labels(test_posts, task)
    test_ids = [p.id for p in test_posts]

    reports: list[MetricReport] = []
    if spec.method == "llm_prediction":
        seeds = [config.seed_base]
        digest = _digest(
            {
                "task": task,
                "strategy": strategy_name,
                "provider": config.provider.id,
                "ids": test_ids,
                "truths": [_label_to_json(t) for t in truths],
            }
        )
    else:
        seeds = [config.seed_base + i for i in range(config.runs)]
        model_dir = _out(config, "models", f"{task}_{strategy_name}")
        model_paths = [_require_model(model_dir, s, strategy_name, task) for s in seeds]
        if spec.method == CONTEXT_EMBED:
            store = _store(config)
            input_digest = _relevant_cache_digest(
                store, test_posts, _strategy_cache_keys(spec, config.corpus_name)
            )
        else:
            directory = _out(config, "representations", strategy_name)
            if not (directory / "test.npy").exists():
                raise UpstreamMissingError(
                    f"representations for {strategy_name} not found",
                    f"represent --strategy {strategy_name}",
                )
            input_digest = _file_digest(directory / "test.npy")
        digest = _digest(
            {
                "task": task,
                "strategy": strategy_name,
                "models": [_file_digest(p) for p in model_paths],
                "inputs": input_digest,
            }
        )

    outputs = [report_dir / "aggregate.json"] + [
        report_dir / f"seed{s}_{kind}" for s in seeds for kind in ("metrics.json", "predictions.jsonl")
    ]
    if _stamp_current(config, stage, digest, outputs):
        return {"status": "up-to-date"}

    if spec.method == "llm_prediction":
        session = _session(config)
        llm_task = _llm_task_name(config, task)
        seed = seeds[0]
        preds = []
        rows = []
        abstained = 0
        for post, truth in zip(test_posts, truths):
            result = llm_predict(session, post, llm_task, registry)
            if isinstance(result, Abstention):
                abstained += 1
                pred = frozenset() if task == "multilabel" else "__abstain__"
                rows.append(
                    {
                        "id": post.id,
                        "true": _label_to_json(truth),
                        "pred": _label_to_json(pred),
                        "abstained": True,
                        "raw": result.raw,
                    }
                )
            else:
                pred = result
                rows.append(
                    {"id": post.id, "true": _label_to_json(truth), "pred": _label_to_json(pred)}
                )
            preds.append(pred)
        report = _build_report(task, seed, truths, preds, registry)
        if abstained:
            report.extras["abstentions"] = abstained
        reports.append(report)
        _predictions_to_jsonl(report_dir / f"seed{seed}_predictions.jsonl", rows)
        (report_dir / f"seed{seed}_metrics.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True)
        )
    else:
        class_names = registry.classes(task)
        if spec.method == CONTEXT_EMBED:
            encoder = build_encoder(config.encoder.id)
            token_access = build_token_access(config.encoder.id, tail=config.encoder.ce_tail)
            store = _store(config)
            ordered, texts, contexts = _ce_training_data(config, test_posts, spec, store)
            truths = _true_labels(ordered, task)
            test_ids = [p.id for p in ordered]
            from .classify import context_vectors, pooled_matrix

            ctx_vecs = context_vectors(contexts, encoder)
            for seed, model_path in zip(seeds, model_paths):
                ce_model = ContextEmbedModel.load(model_path)
                X, _ = pooled_matrix(
                    texts, ctx_vecs, token_access, ce_model.projection, encoder.max_tokens
                )
                preds, scores = predict(ce_model.mlp, X, class_names)
                reports.append(
                    _emit_seed_report(report_dir, task, seed, test_ids, truths, preds, scores, registry)
                )
        else:
            ids, matrix, _ = load_representations(directory, "test")
            X = _select_rows(ids, matrix, test_ids)
            for seed, model_path in zip(seeds, model_paths):
                model, _extras = load_model(model_path)
                preds, scores = predict(model, X, class_names)
                reports.append(
                    _emit_seed_report(report_dir, task, seed, test_ids, truths, preds, scores, registry)
                )

    agg = aggregate(task, strategy_name, reports)
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "aggregate.json").write_text(json.dumps(agg.to_dict(), indent=2, sort_keys=True))
    _write_stamp(config, stage, digest)
    mean = agg.mean.get("macro_f1", float("nan"))
    print(f"eval {task}/{strategy_name}: macro F1 {mean:.4f} over {len(reports)} run(s)")
    return {"status": "built", "macro_f1_mean": mean, "runs": len(reports)}


def _emit_seed_report(
    report_dir: Path,
    task: str,
    seed: int,
    test_ids: list[str],
    truths,
    preds,
    scores: np.ndarray,
    registry: LabelRegistry,
) -> MetricReport:
    report = _build_report(task, seed, truths, preds, registry)
    rows = [
        {
            "id": post_id,
            "true": _label_to_json(truth),
            "pred": _label_to_json(pred),
            "scores": [round(float(s), 6) for s in score_row],
        }
        for post_id, truth, pred, score_row in zip(test_ids, truths, preds, scores)
    ]
    _predictions_to_jsonl(report_dir / f"seed{seed}_predictions.jsonl", rows)
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / f"seed{seed}_metrics.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True)
    )
    return report


# ---------------------------------------------------------------------------
# compare


def _load_predictions(path: Path, task: str) -> tuple[dict, dict]:
    preds, truths = {}, {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            if task == "multilabel":
                preds[row["id"]] = frozenset(row["pred"])
                truths[row["id"]] = frozenset(row["true"])
            else:
                preds[row["id"]] = row["pred"]
                truths[row["id"]] = row["true"]
    return preds, truths


def run_compare(config: RunConfig, task: str, name_a: str, name_b: str) -> dict:
    """Diff the predictions of two runs on the shared test split."""
    validate_config(config)
    seed = config.seed_base
    diffs = {}
    paths = {}
    for name in (name_a, name_b):
        path = _report_dir(config, task, name) / f"seed{seed}_predictions.jsonl"
        if not path.exists():
            raise UpstreamMissingError(
                f"predictions for {task}/{name} not found",
                f"eval --strategy {name} --task {task}",
            )
        paths[name] = path
        diffs[name] = _load_predictions(path, task)

    stage = f"compare_{task}_{name_a}_vs_{name_b}"
    digest = _digest({name: _file_digest(path) for name, path in paths.items()})
    out_base = _out(config, "reports", f"compare_{task}_{name_a}_vs_{name_b}")
    if _stamp_current(config, stage, digest, [out_base.with_suffix(".json"), out_base.with_suffix(".txt")]):
        return {"status": "up-to-date"}

    preds_a, truths_a = diffs[name_a]
    preds_b, truths_b = diffs[name_b]
    if truths_a != truths_b:
        raise ValidationError("the two runs were evaluated on different test labels")
    report = prediction_diff(preds_a, preds_b, truths_a, model_a=name_a, model_b=name_b)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    out_base.with_suffix(".json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    out_base.with_suffix(".txt").write_text(report.to_text())
    _write_stamp(config, stage, digest)
    pct = report.percentages()
    print(
        f"compare {task}: {name_a} vs {name_b}: "
        f"only-{name_a} {pct['a_only_correct']}%, only-{name_b} {pct['b_only_correct']}%"
    )
    return {"status": "built", "percentages": pct}


# ---------------------------------------------------------------------------
# plot


def run_plot(config: RunConfig) -> dict:
    """Render confusion matrices and the cross-strategy F1 summary table."""
    validate_config(config)
    reports_root = _out(config, "reports")
    plots = _out(config, "plots")
    plots.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    rendered = 0
    for aggregate_path in sorted(reports_root.glob("*/aggregate.json")):
        agg = AggregateReport.from_dict(json.loads(aggregate_path.read_text()))
        run_name = aggregate_path.parent.name
        first = agg.runs[0]
        if isinstance(first.confusion, dict):
            for label, matrix in first.confusion.items():
                stem = f"confusion_{run_name}_{label}"
                write_confusion_csv(np.array(matrix), ["absent", "present"], plots / f"{stem}.csv")
                plot_confusion(np.array(matrix), ["absent", "present"], plots / f"{stem}.png", title=f"{run_name}: {label}")
                rendered += 1
        else:
            stem = f"confusion_{run_name}"
            write_confusion_csv(np.array(first.confusion), first.classes, plots / f"{stem}.csv")
            plot_confusion(np.array(first.confusion), first.classes, plots / f"{stem}.png", title=run_name)
            rendered += 1
        row = {
            "task": agg.task,
            "strategy": agg.strategy,
            "macro_f1": round(agg.mean.get("macro_f1", float("nan")), 4),
            "macro_f1_std": round(agg.stdev.get("macro_f1", float("nan")), 4),
        }
        if "positive_f1" in agg.mean:
            row["positive_f1"] = round(agg.mean["positive_f1"], 4)
        summary_rows.append(row)

    if summary_rows:
        import csv as csvmod

        with open(plots / "summary_f1.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csvmod.DictWriter(
                fh, fieldnames=["task", "strategy", "macro_f1", "macro_f1_std", "positive_f1"]
            )
            writer.writeheader()
            for row in summary_rows:
                writer.writerow(row)

        # Results-table layout: one row per strategy, binary macro/positive F1
        # next to the fine-grained task's macro F1.
        by_strategy: dict[str, dict[str, dict]] = {}
        fine_task = ""
        for row in summary_rows:
            by_strategy.setdefault(row["strategy"], {})[row["task"]] = row
            if row["task"] in ("multiclass", "multilabel"):
                fine_task = row["task"]
        header = "| Strategy | Binary Macro F1 | Binary Positive F1 |"
        divider = "| --- | --- | --- |"
        if fine_task:
            header += f" {fine_task.capitalize()} Macro F1 |"
            divider += " --- |"
        lines = [header, divider]

        def _cell(row, key):
            if row is None or key not in row:
                return "-"
            return f"{row[key]:.2f}"

        for strategy in sorted(by_strategy):
            cells = by_strategy[strategy]
            binary = cells.get("binary")
            line = (
                f"| {strategy} | {_cell(binary, 'macro_f1')} | {_cell(binary, 'positive_f1')} |"
            )
            if fine_task:
                line += f" {_cell(cells.get(fine_task), 'macro_f1')} |"
            lines.append(line)
        (plots / "summary_f1.md").write_text("\n".join(lines) + "\n")
    print(f"plot: {rendered} confusion matrices, {len(summary_rows)} summary rows -> {plots}")
    return {"status": "built", "confusions": rendered, "summary_rows": len(summary_rows)}
