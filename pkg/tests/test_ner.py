from __future__ import annotations

import pytest

from contexthsd.ner import EntityMention, LexiconNer, extract_entities, merge_fragments


@pytest.fixture()
def lexicon():
    return LexiconNer({"trump": "PER", "usa": "LOC", "new york": "LOC"})


def test_no_entities(lexicon):
    assert extract_entities("hello world", lexicon) == []


def test_paper_example_surfaces(lexicon):
    mentions = extract_entities("trump sought visas into usa", lexicon)
    assert [(m.surface, m.tag) for m in mentions] == [("trump", "PER"), ("usa", "LOC")]


def test_mentions_ordered_by_span_start(lexicon):
    mentions = extract_entities("usa welcomed trump yesterday", lexicon)
    assert [m.surface for m in mentions] == ["usa", "trump"]
    assert mentions[0].start < mentions[1].start


def test_case_insensitive_with_exact_slice(lexicon):
    text = "Trump visited USA"
    mentions = extract_entities(text, lexicon)
    assert [m.surface for m in mentions] == ["Trump", "USA"]
    for mention in mentions:
        assert text[mention.start : mention.end] == mention.surface


def test_whole_word_match_only(lexicon):
    assert extract_entities("usage statistics for trumpet players", lexicon) == []


def test_multiword_surface(lexicon):
    mentions = extract_entities("she moved to new york in march", lexicon)
    assert [m.surface for m in mentions] == ["new york"]


def test_empty_text_rejected(lexicon):
    with pytest.raises(ValueError):
        extract_entities("", lexicon)


class TestMergeFragments:
    def test_zero_gap_same_tag_merged(self):
        text = "trumpism grows"
        fragments = [
            EntityMention("trump", "PER", 0, 5, confidence=0.9),
            EntityMention("ism", "PER", 5, 8, confidence=0.7),
        ]
        merged = merge_fragments(text, fragments)
        assert len(merged) == 1
        assert merged[0].surface == "trumpism"
        assert merged[0].confidence == 0.7

    def test_different_tags_not_merged(self):
        text = "abcd"
        fragments = [
            EntityMention("ab", "PER", 0, 2),
            EntityMention("cd", "LOC", 2, 4),
        ]
        assert len(merge_fragments(text, fragments)) == 2

    def test_gap_keeps_mentions_separate(self):
        text = "trump obama"
        fragments = [
            EntityMention("trump", "PER", 0, 5),
            EntityMention("obama", "PER", 6, 11),
        ]
        assert len(merge_fragments(text, fragments)) == 2

    def test_no_overlapping_spans_in_output(self):
        text = "aaabbb"
        fragments = [
            EntityMention("aaa", "PER", 0, 3),
            EntityMention("aab", "PER", 1, 4),  # overlaps the first
            EntityMention("bbb", "PER", 3, 6),
        ]
        merged = merge_fragments(text, fragments)
        for first, second in zip(merged, merged[1:]):
            assert first.end <= second.start
