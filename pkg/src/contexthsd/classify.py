"""Classifier-facing operations: training drivers, prediction, and the
direct-LLM baseline with its reply parser.

The embedding-fusion trainer learns the context projection jointly with the
classifier while the encoder tail stays frozen; gradients reach the projection
through the tail's vector-Jacobian product.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import mlp
from .cache import ContextRecord
from .contextgen import GenerationSession, read_image
from .corpus import Post
from .encoders import SentenceEncoder, TokenAccess
from .errors import ContractError, DivergenceError, LabelParseError, ValidationError
from .mlp import Adam, MLPConfig, TrainedModel, encode_targets, epoch_permutation, loss_and_grads
from .prompts import get_prompt, resolve_prompt
from .represent import (
    ContextEmbedParams,
    ContextEmbedTape,
    context_embed_backward,
    context_embed_item,
    encode,
    init_context_embed_params,
)

logger = logging.getLogger(__name__)

TASK_BINARY_TWEET = "binary_tweet"
TASK_MULTICLASS_TWEET = "multiclass_tweet"
TASK_BINARY_MEME = "binary_meme"
TASK_MULTILABEL_MEME = "multilabel_meme"

PREDICT_PROMPTS = {
    TASK_BINARY_TWEET: "predict_binary_tweet",
    TASK_MULTICLASS_TWEET: "predict_multiclass_tweet",
    TASK_BINARY_MEME: "predict_binary_meme",
    TASK_MULTILABEL_MEME: "predict_multilabel_meme",
}

# Task kind drives both the output head and the parse grammar.
TASK_KINDS = {
    TASK_BINARY_TWEET: "binary",
    TASK_MULTICLASS_TWEET: "multiclass",
    TASK_BINARY_MEME: "binary",
    TASK_MULTILABEL_MEME: "multilabel",
}

_FOLD_STRIP = re.compile(r"[^\w\s]")
_SPACES = re.compile(r"\s+")


@dataclass(frozen=True)
class LabelRegistry:
    """Canonical class names and their prompt-string aliases per task kind."""

    binary_classes: tuple[str, ...]
    binary_names: dict[str, str]
    positive_class: str
    multiclass_classes: tuple[str, ...]
    multiclass_names: dict[str, str]
    named_subset: tuple[str, ...]
    multilabel_classes: tuple[str, ...]
    multilabel_names: dict[str, str]
    multilabel_empty: str

    @classmethod
    def load(cls, path: Optional[str | Path] = None) -> "LabelRegistry":
        if path is None:
            raw = resources.files("contexthsd.data").joinpath("labels.json").read_text("utf-8")
        else:
            raw = Path(path).read_text("utf-8")
        payload = json.loads(raw)
        return cls(
            binary_classes=tuple(payload["binary"]["classes"]),
            binary_names=dict(payload["binary"]["prompt_names"]),
            positive_class=payload["binary"]["positive_class"],
            multiclass_classes=tuple(payload["multiclass"]["classes"]),
            multiclass_names=dict(payload["multiclass"]["prompt_names"]),
            named_subset=tuple(payload["multiclass"]["named_subset"]),
            multilabel_classes=tuple(payload["multilabel"]["classes"]),
            multilabel_names=dict(payload["multilabel"]["prompt_names"]),
            multilabel_empty=payload["multilabel"]["empty_token"],
        )

    def classes(self, task_kind: str) -> tuple[str, ...]:
        return {
            "binary": self.binary_classes,
            "multiclass": self.multiclass_classes,
            "multilabel": self.multilabel_classes,
        }[task_kind]


def _fold(raw: str) -> str:
    return _SPACES.sub(" ", _FOLD_STRIP.sub(" ", raw.casefold())).strip()


def parse_llm_label(raw: str, task: str, registry: LabelRegistry) -> Union[str, frozenset[str]]:
    """Parse a model reply into canonical label(s) or raise LabelParseError.

    Replies are case-folded and stripped of punctuation; binary accepts
    exactly yes/no, multi-class exactly one class name, multi-label a
    comma-separated list of class names (or the empty token for none).
    """
    kind = TASK_KINDS[task]
    if kind == "binary":
        folded = _fold(raw)
        if folded in registry.binary_names:
            return registry.binary_names[folded]
        raise LabelParseError(f"reply is not yes/no for task {task}", raw)
    if kind == "multiclass":
        folded = _fold(raw)
        if folded in registry.multiclass_names:
            return registry.multiclass_names[folded]
        raise LabelParseError(f"reply does not match exactly one class for task {task}", raw)
    # multilabel
    folded = _fold(raw)
    if folded == registry.multilabel_empty:
        return frozenset()
    labels: set[str] = set()
    for part in raw.split(","):
        token = _fold(part)
        if not token:
            continue
        if token not in registry.multilabel_names:
            raise LabelParseError(f"unknown label {token!r} for task {task}", raw)
        labels.add(registry.multilabel_names[token])
    if not labels:
        raise LabelParseError(f"reply carries no labels for task {task}", raw)
    return frozenset(labels)


@dataclass(frozen=True)
class Abstention:
    """An unparseable reply, kept verbatim; scored as wrong, never coerced."""

    raw: str


def llm_predict(
    session: GenerationSession,
    post: Post,
    task: str,
    registry: LabelRegistry,
) -> Union[str, frozenset[str], Abstention]:
    """Ask the provider to classify one item directly; replies are cached."""
    if task not in PREDICT_PROMPTS:
        raise ValidationError(f"unknown prediction task {task!r}")
    template = get_prompt(PREDICT_PROMPTS[task])
    image = None
    if template.expects_image:
        if not post.image_ref:
            raise ValidationError(f"task {task} needs an image but post {post.id} has none")
        image = read_image(post.image_ref)
        inputs: dict[str, str] = {}
    else:
        inputs = {"post": post.text}
    resolved = resolve_prompt(template, inputs)
    record = session._generate(
        resolved, inputs, post_id=post.id, mode=f"predict:{task}", image=image
    )
    try:
        return parse_llm_label(record.text, task, registry)
    except LabelParseError as exc:
        logger.warning("post %s: unparseable reply for %s: %r", post.id, task, exc.raw)
        return Abstention(raw=record.text)


def predict(model: TrainedModel, X: np.ndarray, classes: tuple[str, ...]):
    """Score the matrix and decode labels.

    Softmax heads take the argmax (lowest index wins ties); sigmoid heads
    threshold each label at 0.5 inclusive.
    """
    scores = model.predict_scores(X)
    if scores.shape[1] != len(classes):
        raise ContractError(f"head arity {scores.shape[1]} != {len(classes)} classes")
    if model.config.is_multilabel:
        labels = [
            frozenset(cls for j, cls in enumerate(classes) if scores[i, j] >= 0.5)
            for i in range(scores.shape[0])
        ]
    else:
        labels = [classes[int(i)] for i in np.argmax(scores, axis=1)]
    return labels, scores


@dataclass
class ContextEmbedModel:
    """Learned context projection plus the classifier trained on top of it."""

    projection: ContextEmbedParams
    mlp: TrainedModel

    def save(self, path: str | Path) -> None:
        mlp.save_model(
            self.mlp,
            path,
            extra_arrays={"proj_weight": self.projection.weight, "proj_bias": self.projection.bias},
        )

    @classmethod
    def load(cls, path: str | Path) -> "ContextEmbedModel":
        model, extras = mlp.load_model(path)
        return cls(
            projection=ContextEmbedParams(weight=extras["proj_weight"], bias=extras["proj_bias"]),
            mlp=model,
        )


def context_vectors(
    contexts: list[ContextRecord], encoder: SentenceEncoder
) -> list[Optional[np.ndarray]]:
    """Encode context texts once; empty sentinels stay None (zero slot)."""
    vectors: list[Optional[np.ndarray]] = []
    memo: dict[str, np.ndarray] = {}
    for record in contexts:
        if record.is_empty:
            vectors.append(None)
            continue
        if record.cache_key not in memo:
            memo[record.cache_key] = encode(record.text, encoder)
        vectors.append(memo[record.cache_key])
    return vectors


def pooled_matrix(
    texts: list[str],
    ctx_vecs: list[Optional[np.ndarray]],
    token_access: TokenAccess,
    params: ContextEmbedParams,
    max_tokens: int = 384,
    token_embeddings: Optional[list[np.ndarray]] = None,
) -> tuple[np.ndarray, list[ContextEmbedTape]]:
    if token_embeddings is None:
        token_embeddings = [token_access.embed_tokens(t, max_tokens - 1) for t in texts]
    tapes = [
        context_embed_item(text, vec, token_access, params, max_tokens, token_embeddings=embs)
        for text, vec, embs in zip(texts, ctx_vecs, token_embeddings)
    ]
    return np.stack([t.pooled for t in tapes]), tapes


def train_context_embed(
    texts: list[str],
    contexts: list[ContextRecord],
    y: np.ndarray,
    encoder: SentenceEncoder,
    token_access: TokenAccess,
    config: MLPConfig,
    strategy_tag: str = "",
    max_tokens: int = 384,
) -> ContextEmbedModel:
    """Jointly train the context projection and the classifier.

    The encoder tail and token embeddings are frozen constants; only the
    projection and classifier parameters receive Adam updates. The same seed
    discipline as train_mlp applies, so training is fully reproducible.
    """
    if len(texts) != len(contexts) or len(texts) != len(y):
        raise ContractError("texts, contexts, and targets must align")
    if config.input_dim != token_access.token_dim:
        raise ContractError(
            f"config input_dim {config.input_dim} != token dim {token_access.token_dim}"
        )
    targets = encode_targets(y, config)
    ctx_vecs = context_vectors(contexts, encoder)
    token_embs = [token_access.embed_tokens(t, max_tokens - 1) for t in texts]

    rng = np.random.default_rng(config.seed)
    projection = init_context_embed_params(
        token_access.token_dim, encoder.output_dim, rng=rng
    )
    params = mlp.init_params(config, rng=rng)

    flat = [projection.weight, projection.bias] + [a for pair in params for a in pair]
    optimizer = Adam([a.shape for a in flat])

    n = len(texts)
    batch = max(1, config.batch_size)
    trace: list[float] = []
    for epoch in range(config.epochs):
        order = epoch_permutation(config.seed, epoch, n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            rows = order[start : start + batch]
            batch_texts = [texts[i] for i in rows]
            batch_ctx = [ctx_vecs[i] for i in rows]
            pooled, tapes = pooled_matrix(
                batch_texts,
                batch_ctx,
                token_access,
                projection,
                max_tokens,
                token_embeddings=[token_embs[i] for i in rows],
            )
            loss, grads, d_pooled = loss_and_grads(params, pooled, targets[rows], config.output_head)
            if not np.isfinite(loss):
                raise DivergenceError("training loss is not finite", epoch=epoch)
            grad_weight = np.zeros_like(projection.weight)
            grad_bias = np.zeros_like(projection.bias)
            for tape, grad_row in zip(tapes, d_pooled):
                gw, gb = context_embed_backward(tape, token_access, projection, grad_row)
                grad_weight += gw
                grad_bias += gb
            flat_grads = [grad_weight, grad_bias] + [a for pair in grads for a in pair]
            optimizer.step(flat, flat_grads, config.learning_rate)
            epoch_loss += loss * rows.shape[0]
        trace.append(epoch_loss / n)

    trained = TrainedModel(params=params, config=config, strategy_tag=strategy_tag, loss_trace=trace)
    return ContextEmbedModel(projection=projection, mlp=trained)
