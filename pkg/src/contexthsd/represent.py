"""Turning (post, context) pairs into classifier input vectors.

Implements the four context-incorporation strategies plus the baseline
representations, with explicit empty-context rules per strategy: appended
context falls back to the bare post, concatenated context falls back to a
zero block, and the embedding-layer fusion uses a zero slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import cache as c
from .cache import ContextRecord, ContextStore
from .corpus import MAMI, Post
from .encoders import SentenceEncoder, TokenAccess, masked_mean
from .errors import ConfigurationError, ContractError, MissingContextError
from .linkers import CONCEPT_DIM, ConceptTable, FixtureLinker, link_and_summarize, rel_augment

SEPARATOR = " [SEP] "

ZERO_CONTEXT = "zero_context"
APPEND_EMBED = "append_embed"
EMBED_CONCAT = "embed_concat"
CONTEXT_EMBED = "context_embed"
LLM_ENHANCE = "llm_enhance"
REL = "rel"
CONCEPTNET = "conceptnet"

STRATEGY_DIMS = {
    ZERO_CONTEXT: 768,
    APPEND_EMBED: 768,
    EMBED_CONCAT: 1536,
    CONTEXT_EMBED: 768,
    LLM_ENHANCE: 768,
    REL: 768,
    CONCEPTNET: 768 + CONCEPT_DIM,
}

# (mode, prompt id) addressing context records in the cache, per source.
CONTEXT_KEYS = {
    "named_entity": (c.MODE_NAMED_ENTITY, "entity_context"),
    "full_text": (c.MODE_FULL_TEXT, "tweet_context"),
    "multimodal": (c.MODE_MULTIMODAL, "meme_context"),
}
ENHANCE_KEYS = {
    "named_entity": (c.MODE_ENHANCE, "enhance_tweet_ne"),
    "full_text": (c.MODE_ENHANCE, "enhance_tweet_ft"),
    "multimodal": (c.MODE_ENHANCE, "enhance_meme"),
}


@dataclass(frozen=True)
class Representation:
    post_id: str
    strategy: str
    vector: np.ndarray
    dim: int


@dataclass
class ContextEmbedParams:
    """Affine projection from context space into token-embedding space."""

    weight: np.ndarray  # (token_dim, context_dim)
    bias: np.ndarray  # (token_dim,)


def init_context_embed_params(
    token_dim: int,
    context_dim: int = 768,
    seed: int = 0,
    noise: float = 0.01,
    rng: Optional[np.random.Generator] = None,
) -> ContextEmbedParams:
    """Near-identity initialization: rectangular eye plus small noise."""
    if rng is None:
        rng = np.random.default_rng(seed)
    weight = np.eye(token_dim, context_dim) + noise * rng.standard_normal((token_dim, context_dim))
    bias = np.zeros(token_dim)
    return ContextEmbedParams(weight=weight, bias=bias)


def encode(text: str, encoder: SentenceEncoder) -> np.ndarray:
    """Encode text to the encoder's unit-norm sentence vector."""
    vec = np.asarray(encoder.encode(text), dtype=np.float64)
    if vec.shape != (encoder.output_dim,):
        raise ContractError(
            f"encoder returned shape {vec.shape}, expected ({encoder.output_dim},)"
        )
    return vec


def append_embed(post_text: str, context: ContextRecord, encoder: SentenceEncoder) -> Representation:
    """Append context to the post after a separator and encode the union."""
    if context.is_empty:
        text = post_text
    else:
        text = post_text + SEPARATOR + context.text
    return Representation("", APPEND_EMBED, encode(text, encoder), encoder.output_dim)


def embed_concat(post_text: str, context: ContextRecord, encoder: SentenceEncoder) -> Representation:
    """Encode post and context separately and concatenate the vectors."""
    post_vec = encode(post_text, encoder)
    if context.is_empty:
        ctx_vec = np.zeros(encoder.output_dim)
    else:
        ctx_vec = encode(context.text, encoder)
    return Representation("", EMBED_CONCAT, np.concatenate([post_vec, ctx_vec]), 2 * encoder.output_dim)


@dataclass
class ContextEmbedTape:
    """Intermediates needed to push gradients back through the fused forward."""

    sequence: np.ndarray
    mask: np.ndarray
    context_vec: Optional[np.ndarray]  # None for the empty sentinel (zero slot)
    pooled: np.ndarray


def context_embed_item(
    post_text: str,
    context_vec: Optional[np.ndarray],
    token_access: TokenAccess,
    params: ContextEmbedParams,
    max_tokens: int = 384,
    token_embeddings: Optional[np.ndarray] = None,
) -> ContextEmbedTape:
    """Fused forward for one post: [projected context] + token embeddings -> tail -> pool.

    The context slot takes `projection(context_vec)`, or the zero vector for
    the empty sentinel. Token embeddings occupy at most max_tokens - 1
    positions so the fused sequence respects the encoder's length budget;
    they are frozen, so callers looping over epochs may precompute them.
    """
    if token_embeddings is None:
        tokens = token_access.embed_tokens(post_text, max_tokens - 1)
    else:
        tokens = token_embeddings
    if context_vec is None:
        slot = np.zeros(token_access.token_dim)
    else:
        slot = params.weight @ context_vec + params.bias
    sequence = np.concatenate([slot[None, :], tokens], axis=0)
    mask = np.ones(sequence.shape[0])
    hidden = token_access.tail_forward(sequence, mask)
    pooled = masked_mean(hidden, mask)
    return ContextEmbedTape(sequence=sequence, mask=mask, context_vec=context_vec, pooled=pooled)


def context_embed_backward(
    tape: ContextEmbedTape,
    token_access: TokenAccess,
    params: ContextEmbedParams,
    grad_pooled: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the pooled output w.r.t. the projection (weight, bias).

    The encoder tail is frozen: gradients flow through it (via its VJP) but
    never update it. Token embeddings are constants, so only the context slot
    row contributes; the sentinel's forced-zero slot contributes nothing.
    """
    if tape.context_vec is None:
        return np.zeros_like(params.weight), np.zeros_like(params.bias)
    n_unmasked = tape.mask.sum()
    grad_hidden = (tape.mask[:, None] / n_unmasked) * grad_pooled[None, :]
    grad_sequence = token_access.tail_vjp(tape.sequence, tape.mask, grad_hidden)
    grad_slot = grad_sequence[0]
    grad_weight = np.outer(grad_slot, tape.context_vec)
    grad_bias = grad_slot
    return grad_weight, grad_bias


def context_embed_forward(
    post_text: str,
    context: ContextRecord,
    encoder: SentenceEncoder,
    token_access: TokenAccess,
    params: ContextEmbedParams,
    max_tokens: int = 384,
) -> Representation:
    ctx_vec = None if context.is_empty else encode(context.text, encoder)
    tape = context_embed_item(post_text, ctx_vec, token_access, params, max_tokens)
    return Representation("", CONTEXT_EMBED, tape.pooled, token_access.token_dim)


@dataclass
class StrategySpec:
    """A run configuration: where context comes from and how it is incorporated."""

    method: str
    source: Optional[str] = None

    _SOURCE_ALIASES = {"ne": "named_entity", "ft": "full_text", "mm": "multimodal"}
    _BASELINES = (ZERO_CONTEXT, REL, CONCEPTNET, "llm_prediction")
    _FUSIONS = (APPEND_EMBED, EMBED_CONCAT, CONTEXT_EMBED, LLM_ENHANCE)

    @classmethod
    def parse(cls, name: str) -> "StrategySpec":
        if "+" in name:
            source_alias, method = name.split("+", 1)
            source = cls._SOURCE_ALIASES.get(source_alias, source_alias)
            if source not in CONTEXT_KEYS:
                raise ConfigurationError(f"unknown context source in strategy {name!r}")
            if method not in cls._FUSIONS:
                raise ConfigurationError(f"unknown incorporation method in strategy {name!r}")
            return cls(method=method, source=source)
        if name not in cls._BASELINES:
            raise ConfigurationError(f"unknown strategy {name!r}")
        return cls(method=name, source=None)

    @property
    def name(self) -> str:
        if self.source is None:
            return self.method
        alias = {v: k for k, v in self._SOURCE_ALIASES.items()}[self.source]
        return f"{alias}+{self.method}"

    @property
    def trains_model(self) -> bool:
        return self.method != "llm_prediction"


@dataclass
class StrategyInputs:
    """Everything build_representations may need besides the encoder."""

    store: Optional[ContextStore] = None
    linker: Optional[FixtureLinker] = None
    concepts: Optional[ConceptTable] = None
    token_access: Optional[TokenAccess] = None
    ce_params: Optional[ContextEmbedParams] = None
    corpus_name: str = ""


def base_text(post: Post, inputs: StrategyInputs) -> str:
    """The strategy-independent text of a post.

    Memes are represented as extracted text plus image description, joined by
    the separator, with regenerated OCR replacing any shipped transcription.
    """
    if inputs.corpus_name != MAMI:
        return post.text
    store = inputs.store
    if store is None:
        raise ConfigurationError("meme representations require a context store")
    ocr = store.lookup(post.id, c.MODE_OCR, "ocr")
    caption = store.lookup(post.id, c.MODE_CAPTION, "caption")
    if ocr is None or caption is None:
        raise MissingContextError("missing OCR/caption records", [post.id])
    return ocr.text + SEPARATOR + caption.text


def _required_context(post: Post, spec: StrategySpec, inputs: StrategyInputs) -> ContextRecord:
    mode, prompt_id = CONTEXT_KEYS[spec.source]
    record = inputs.store.lookup(post.id, mode, prompt_id) if inputs.store else None
    if record is None:
        raise MissingContextError(f"missing {spec.source} context", [post.id])
    return record


def _missing_records(post: Post, spec: StrategySpec, inputs: StrategyInputs) -> bool:
    store = inputs.store
    if inputs.corpus_name == MAMI:
        if store is None:
            return True
        if store.lookup(post.id, c.MODE_OCR, "ocr") is None:
            return True
        if store.lookup(post.id, c.MODE_CAPTION, "caption") is None:
            return True
    if spec.source is not None:
        if store is None:
            return True
        mode, prompt_id = CONTEXT_KEYS[spec.source]
        context = store.lookup(post.id, mode, prompt_id)
        if context is None:
            return True
        if spec.method == LLM_ENHANCE and not context.is_empty:
            emode, eprompt = ENHANCE_KEYS[spec.source]
            if store.lookup(post.id, emode, eprompt) is None:
                return True
    return False


def missing_context_ids(posts: list[Post], spec: StrategySpec, inputs: StrategyInputs) -> list[str]:
    """Ids of posts whose required cache records are absent for this strategy."""
    return [p.id for p in sorted(posts, key=lambda p: p.id) if _missing_records(p, spec, inputs)]


def representation_for_post(
    post: Post, spec: StrategySpec, inputs: StrategyInputs, encoder: SentenceEncoder
) -> Representation:
    base = base_text(post, inputs)
    if spec.method == ZERO_CONTEXT:
        rep = Representation(post.id, ZERO_CONTEXT, encode(base, encoder), encoder.output_dim)
    elif spec.method == APPEND_EMBED:
        rep = append_embed(base, _required_context(post, spec, inputs), encoder)
    elif spec.method == EMBED_CONCAT:
        rep = embed_concat(base, _required_context(post, spec, inputs), encoder)
    elif spec.method == CONTEXT_EMBED:
        if inputs.token_access is None or inputs.ce_params is None:
            raise ConfigurationError("context_embed requires token access and projection params")
        rep = context_embed_forward(
            base,
            _required_context(post, spec, inputs),
            encoder,
            inputs.token_access,
            inputs.ce_params,
            max_tokens=encoder.max_tokens,
        )
    elif spec.method == LLM_ENHANCE:
        context = _required_context(post, spec, inputs)
        if context.is_empty:
            text = base
        else:
            emode, eprompt = ENHANCE_KEYS[spec.source]
            record = inputs.store.lookup(post.id, emode, eprompt)
            if record is None:
                raise MissingContextError("missing enhanced text", [post.id])
            text = record.text
        rep = Representation(post.id, LLM_ENHANCE, encode(text, encoder), encoder.output_dim)
    elif spec.method == REL:
        if inputs.linker is None:
            raise ConfigurationError("rel strategy requires a linker backend")
        augmented = rel_augment(base, link_and_summarize(base, inputs.linker))
        rep = Representation(post.id, REL, encode(augmented, encoder), encoder.output_dim)
    elif spec.method == CONCEPTNET:
        if inputs.concepts is None:
            raise ConfigurationError("conceptnet strategy requires a concept-vector table")
        from .linkers import conceptnet_vector

        vector = np.concatenate([encode(base, encoder), conceptnet_vector(base, inputs.concepts)])
        rep = Representation(post.id, CONCEPTNET, vector, vector.shape[0])
    else:
        raise ConfigurationError(f"strategy {spec.method!r} has no representation")
    rep = Representation(post.id, rep.strategy, rep.vector, rep.dim)
    _check_dim(rep, encoder, inputs)
    return rep


def _check_dim(rep: Representation, encoder: SentenceEncoder, inputs: StrategyInputs) -> None:
    expected = STRATEGY_DIMS[rep.strategy]
    if rep.strategy == CONTEXT_EMBED and inputs.token_access is not None:
        expected = inputs.token_access.token_dim
    elif encoder.output_dim != 768:
        return  # non-default encoders shift every contract; skip the fixed table
    if rep.dim != expected or rep.vector.shape != (expected,):
        raise ContractError(
            f"strategy {rep.strategy} produced dim {rep.vector.shape[0]}, expected {expected}"
        )


def build_representations(
    posts: list[Post],
    spec: StrategySpec,
    inputs: StrategyInputs,
    encoder: SentenceEncoder,
) -> tuple[list[str], np.ndarray]:
    """Build one representation per post, order-stable by id.

    Missing context records are reported for all offending posts before any
    encoding starts, so a partial cache fails fast instead of mid-run.
    """
    ordered = sorted(posts, key=lambda p: p.id)
    missing = missing_context_ids(ordered, spec, inputs)
    if missing:
        raise MissingContextError(f"contexts not generated for strategy {spec.name}", missing)
    ids = []
    rows = []
    for post in ordered:
        rep = representation_for_post(post, spec, inputs, encoder)
        ids.append(post.id)
        rows.append(rep.vector)
    matrix = np.stack(rows) if rows else np.zeros((0, STRATEGY_DIMS[spec.method]))
    return ids, matrix


def save_representations(
    directory: str | Path,
    partition: str,
    ids: list[str],
    matrix: np.ndarray,
    strategy: str,
    encoder_id: str,
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / f"{partition}.npy", matrix)
    manifest = {
        "partition": partition,
        "strategy": strategy,
        "encoder_id": encoder_id,
        "dim": int(matrix.shape[1]) if matrix.size else 0,
        "ids": ids,
    }
    with open(directory / f"{partition}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_representations(directory: str | Path, partition: str) -> tuple[list[str], np.ndarray, dict]:
    directory = Path(directory)
    matrix = np.load(directory / f"{partition}.npy")
    with open(directory / f"{partition}.manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    return manifest["ids"], matrix, manifest
