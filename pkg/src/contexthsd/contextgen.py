"""Background-context generation operations.

Three generation modes (named-entity, full-text, multimodal), the rewrite
operation that folds context back into the post, and the direct OCR/captioning
of memes. Every call goes through the cache, so reruns are free and batch
drivers can resume.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from . import cache as c
from .cache import ContextRecord, ContextStore, compute_cache_key, empty_sentinel
from .corpus import Post
from .errors import InputError
from .ner import EntityMention
from .prompts import get_prompt, resolve_prompt
from .providers import LLMProvider, RetryPolicy, TokenBucket, generate_cached


@dataclass
class GenerationSession:
    """Bundles the provider, cache, and throttling shared by a batch run."""

    provider: LLMProvider
    store: ContextStore
    retry: Optional[RetryPolicy] = None
    limiter: Optional[TokenBucket] = None

    def _generate(self, resolved, inputs, *, post_id, mode, image=None) -> ContextRecord:
        return generate_cached(
            self.provider,
            self.store,
            resolved,
            inputs,
            post_id=post_id,
            mode=mode,
            image=image,
            retry=self.retry,
            limiter=self.limiter,
        )


def render_entities(entities: list[EntityMention]) -> str:
    """One entity per line as `surface (TAG)`."""
    return "\n".join(f"{m.surface} ({m.tag})" for m in entities)


def generate_entity_context(
    session: GenerationSession, post_id: str, entities: list[EntityMention]
) -> ContextRecord:
    """Generate joint background context for a post's named entities.

    Posts without entities short-circuit to the empty-context sentinel without
    touching the provider; downstream strategies decide what an empty context
    means for them.
    """
    template = get_prompt("entity_context")
    if not entities:
        key = compute_cache_key(template.id, {"entities": ""}, session.provider.provider_id)
        mine = session.store.lookup(post_id, c.MODE_NAMED_ENTITY, template.id)
        if mine is not None and mine.cache_key == key:
            return replace(mine, entities=())
        record = empty_sentinel(post_id, c.MODE_NAMED_ENTITY, template.id, session.provider.provider_id, key)
        return session.store.put(record)
    inputs = {"entities": render_entities(entities)}
    resolved = resolve_prompt(template, inputs)
    record = session._generate(resolved, inputs, post_id=post_id, mode=c.MODE_NAMED_ENTITY)
    return replace(record, entities=tuple(entities))


def generate_fulltext_context(session: GenerationSession, post: Post) -> ContextRecord:
    """Generate background context from the full post text."""
    if not post.text:
        raise ValueError(f"post {post.id} has empty text")
    template = get_prompt("tweet_context")
    inputs = {"post": post.text}
    resolved = resolve_prompt(template, inputs)
    return session._generate(resolved, inputs, post_id=post.id, mode=c.MODE_FULL_TEXT)


def read_image(image_ref: str | Path) -> bytes:
    try:
        data = Path(image_ref).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read image {image_ref}: {exc}") from exc
    if not data:
        raise InputError(f"image {image_ref} is empty")
    return data


def generate_multimodal_assets(
    session: GenerationSession, post_id: str, image_ref: str | Path
) -> tuple[ContextRecord, ContextRecord, ContextRecord]:
    """Extract meme text, caption the image, and generate meme context.

    Returns (ocr, caption, context) records. The regenerated OCR text replaces
    any transcription shipped with the dataset downstream.
    """
    image = read_image(image_ref)
    records = []
    for prompt_id, mode in (
        ("ocr", c.MODE_OCR),
        ("caption", c.MODE_CAPTION),
        ("meme_context", c.MODE_MULTIMODAL),
    ):
        resolved = resolve_prompt(get_prompt(prompt_id), {})
        records.append(session._generate(resolved, {}, post_id=post_id, mode=mode, image=image))
    return records[0], records[1], records[2]


_ENHANCE_PROMPTS = {
    ("textual", c.MODE_NAMED_ENTITY): "enhance_tweet_ne",
    ("textual", c.MODE_FULL_TEXT): "enhance_tweet_ft",
    ("multimodal", c.MODE_MULTIMODAL): "enhance_meme",
}


def llm_enhance(
    session: GenerationSession,
    base_text: str,
    context: ContextRecord,
    mode: str = "textual",
    image_description: str = "",
) -> str:
    """Rewrite a post so the generated context is embedded in its text.

    An empty-context sentinel leaves the post unchanged without a provider
    call. The multimodal variant folds the extracted text, image description,
    and context into one representation.
    """
    if context.is_empty:
        return base_text
    prompt_id = _ENHANCE_PROMPTS.get((mode, context.mode))
    if prompt_id is None:
        raise ValueError(f"no enhance prompt for mode={mode!r} with context mode {context.mode!r}")
    if prompt_id == "enhance_meme":
        inputs = {
            "extracted_text": base_text,
            "image_description": image_description,
            "context": context.text,
        }
    else:
        inputs = {"post": base_text, "context": context.text}
    resolved = resolve_prompt(get_prompt(prompt_id), inputs)
    record = session._generate(resolved, inputs, post_id=context.post_id, mode=c.MODE_ENHANCE)
    return record.text
