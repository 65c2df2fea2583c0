from __future__ import annotations

import pytest

from contexthsd import cache as c
from contexthsd.contextgen import (
    GenerationSession,
    generate_entity_context,
    generate_fulltext_context,
    generate_multimodal_assets,
    llm_enhance,
    render_entities,
)
from contexthsd.corpus import Post
from contexthsd.errors import InputError
from contexthsd.ner import EntityMention
from contexthsd.providers import ScriptedProvider

TRUMP = EntityMention("trump", "PER", 0, 5)
USA = EntityMention("usa", "LOC", 24, 27)


def test_render_entities_one_per_line():
    assert render_entities([TRUMP, USA]) == "trump (PER)\nusa (LOC)"


class TestEntityContext:
    def test_empty_entities_short_circuit(self, echo_session):
        record = generate_entity_context(echo_session, "p1", [])
        assert record.is_empty
        assert record.mode == c.MODE_NAMED_ENTITY
        assert echo_session.provider.calls == 0
        # The sentinel is cached too, so reruns stay provider-free.
        again = generate_entity_context(echo_session, "p1", [])
        assert again.cache_key == record.cache_key
        assert echo_session.provider.calls == 0

    def test_entities_rendered_into_prompt(self, echo_session):
        record = generate_entity_context(echo_session, "p1", [TRUMP, USA])
        assert "trump (PER)" in record.text
        assert "usa (LOC)" in record.text
        assert record.mode == c.MODE_NAMED_ENTITY
        assert record.entities == (TRUMP, USA)

    def test_same_inputs_same_key_one_call(self, echo_session):
        first = generate_entity_context(echo_session, "p1", [TRUMP])
        second = generate_entity_context(echo_session, "p2", [TRUMP])
        assert first.cache_key == second.cache_key
        assert echo_session.provider.calls == 1


class TestFulltextContext:
    def test_echo_contains_post_text(self, echo_session):
        post = Post(id="p1", text="report trump sought visas", binary_label="negative")
        record = generate_fulltext_context(echo_session, post)
        assert post.text in record.text
        assert record.mode == c.MODE_FULL_TEXT

    def test_empty_post_rejected(self, echo_session):
        with pytest.raises(ValueError):
            generate_fulltext_context(echo_session, Post(id="p", text="", binary_label="negative"))


class TestMultimodalAssets:
    def _session(self, store):
        provider = ScriptedProvider(
            {"ocr": "EXTRACTED", "caption": "A CAPTION", "meme_context": "MEME CONTEXT"}
        )
        return GenerationSession(provider=provider, store=store)

    def test_three_distinct_records(self, tmp_path, store):
        image = tmp_path / "m.jpg"
        image.write_bytes(b"mock image bytes")
        session = self._session(store)
        ocr, caption, context = generate_multimodal_assets(session, "m1", image)
        assert (ocr.mode, caption.mode, context.mode) == (
            c.MODE_OCR,
            c.MODE_CAPTION,
            c.MODE_MULTIMODAL,
        )
        assert {ocr.text, caption.text, context.text} == {"EXTRACTED", "A CAPTION", "MEME CONTEXT"}

    def test_second_pass_all_cache_hits(self, tmp_path, store):
        image = tmp_path / "m.jpg"
        image.write_bytes(b"mock image bytes")
        session = self._session(store)
        generate_multimodal_assets(session, "m1", image)
        calls_after_first = session.provider.calls
        generate_multimodal_assets(session, "m1", image)
        assert session.provider.calls == calls_after_first == 3

    def test_unreadable_image(self, tmp_path, store):
        session = self._session(store)
        with pytest.raises(InputError):
            generate_multimodal_assets(session, "m1", tmp_path / "missing.jpg")


class TestLlmEnhance:
    def test_empty_sentinel_returns_base_unchanged(self, echo_session):
        sentinel_record = generate_entity_context(echo_session, "p1", [])
        result = llm_enhance(echo_session, "base text", sentinel_record, mode="textual")
        assert result == "base text"
        assert echo_session.provider.calls == 0

    def test_echo_contains_base_and_context(self, echo_session):
        post = Post(id="p1", text="the original post", binary_label="negative")
        context = generate_fulltext_context(echo_session, post)
        enhanced = llm_enhance(echo_session, post.text, context, mode="textual")
        assert post.text in enhanced
        assert context.text in enhanced

    def test_cached_determinism(self, echo_session):
        post = Post(id="p1", text="the original post", binary_label="negative")
        context = generate_fulltext_context(echo_session, post)
        first = llm_enhance(echo_session, post.text, context, mode="textual")
        calls = echo_session.provider.calls
        second = llm_enhance(echo_session, post.text, context, mode="textual")
        assert first == second
        assert echo_session.provider.calls == calls

    def test_multimodal_enhance_resolves_three_slots(self, tmp_path, store):
        image = tmp_path / "m.jpg"
        image.write_bytes(b"img")
        provider = ScriptedProvider(
            {
                "ocr": "OCRTEXT",
                "caption": "CAPTIONTEXT",
                "meme_context": "CONTEXTTEXT",
                "enhance_meme": lambda req: f"reply to: {req.text}",
            }
        )
        session = GenerationSession(provider=provider, store=store)
        ocr, caption, context = generate_multimodal_assets(session, "m1", image)
        enhanced = llm_enhance(
            session, ocr.text, context, mode="multimodal", image_description=caption.text
        )
        assert "OCRTEXT" in enhanced
        assert "CAPTIONTEXT" in enhanced
        assert "CONTEXTTEXT" in enhanced
