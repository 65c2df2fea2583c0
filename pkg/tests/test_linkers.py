from __future__ import annotations

import numpy as np
import pytest

from contexthsd.errors import SchemaError
from contexthsd.linkers import (
    ConceptTable,
    FixtureLinker,
    conceptnet_vector,
    first_sentences,
    link_and_summarize,
    match_concepts,
    normalize_tokens,
    rel_augment,
)


class TestFirstSentences:
    def test_truncates_to_two(self):
        text = "One here. Two here! Three here? Four."
        assert first_sentences(text, 2) == "One here. Two here!"

    def test_shorter_text_unchanged(self):
        assert first_sentences("Only one sentence.") == "Only one sentence."
        assert first_sentences("No terminator at all") == "No terminator at all"

    def test_abbrev_period_requires_whitespace(self):
        # A period inside a token (e.g. a decimal) is not a boundary.
        text = "Rates rose 3.5 percent last year. Markets reacted. Calm returned."
        assert first_sentences(text, 2) == "Rates rose 3.5 percent last year. Markets reacted."

    def test_empty(self):
        assert first_sentences("") == ""


class TestLinker:
    @pytest.fixture()
    def linker(self, smoke_dir):
        return FixtureLinker.from_file(smoke_dir / "linker_fixture.json")

    def test_no_links_for_plain_text(self, linker):
        assert link_and_summarize("hello world", linker) == []

    def test_fixture_link_two_sentences(self, linker):
        links = link_and_summarize("the wall fell in berlin decades ago", linker)
        assert len(links) == 1
        link = links[0]
        assert link.article_title == "Berlin"
        assert link.summary == "Berlin is the capital of Germany. It has about 3.7 million inhabitants."

    def test_links_ordered_by_first_occurrence(self, linker):
        links = link_and_summarize("usa and berlin and usa again", linker)
        assert [l.article_title for l in links] == ["United States", "Berlin"]

    def test_miss_is_empty_not_error(self):
        linker = FixtureLinker({})
        assert link_and_summarize("anything at all", linker) == []


class TestRelAugment:
    def test_identity_on_empty_links(self):
        assert rel_augment("a post", []) == "a post"

    def test_construction_rule(self, smoke_dir):
        linker = FixtureLinker.from_file(smoke_dir / "linker_fixture.json")
        links = link_and_summarize("usa meets berlin", linker)
        s1, s2 = links[0].summary, links[1].summary
        assert rel_augment("usa meets berlin", links) == "usa meets berlin" + " " + s1 + " " + s2

    def test_double_augment_with_empty_is_stable(self):
        once = rel_augment("text", [])
        assert rel_augment(once, []) == once


def _toy_table() -> ConceptTable:
    return ConceptTable(
        {
            "visa": np.array([1.0, 0.0, 0.0]),
            "worker": np.array([0.0, 2.0, 0.0]),
            "guest_worker": np.array([0.0, 0.0, 3.0]),
            "foreign_guest_worker": np.array([1.0, 1.0, 1.0]),
        },
        dim=3,
    )


class TestConceptMatching:
    def test_single_concept_unit_normalized(self):
        vec = conceptnet_vector("a visa arrived", _toy_table())
        assert np.allclose(vec, [1.0, 0.0, 0.0])
        assert abs(np.linalg.norm(vec) - 1.0) < 1e-9

    def test_two_concepts_mean_then_normalize(self):
        # Hand-computed: mean([1,0,0], [0,2,0]) = [0.5,1,0]; norm = sqrt(1.25).
        vec = conceptnet_vector("the visa worker case", _toy_table())
        expected = np.array([0.5, 1.0, 0.0]) / np.sqrt(1.25)
        assert np.allclose(vec, expected)

    def test_no_match_zero_vector(self):
        vec = conceptnet_vector("nothing known here", _toy_table())
        assert vec.shape == (3,)
        assert np.all(vec == 0.0)

    def test_longest_ngram_wins(self):
        table = _toy_table()
        tokens = normalize_tokens("the foreign guest worker visa")
        matches = match_concepts(tokens, table)
        keys = [k for _, _, k in matches]
        assert "foreign_guest_worker" in keys  # trigram beats its sub-grams
        assert "guest_worker" not in keys
        assert "worker" not in keys
        assert "visa" in keys

    def test_non_overlapping_token_consumption(self):
        table = _toy_table()
        tokens = normalize_tokens("guest worker guest worker")
        matches = match_concepts(tokens, table)
        consumed: set[int] = set()
        for start, end, _ in matches:
            span = set(range(start, end))
            assert not span & consumed
            consumed |= span

    def test_norm_invariant_random_texts(self):
        table = _toy_table()
        rng = np.random.default_rng(7)
        vocab = ["visa", "worker", "guest", "foreign", "plain", "words"]
        for _ in range(100):
            text = " ".join(rng.choice(vocab, size=rng.integers(1, 10)))
            norm = float(np.linalg.norm(conceptnet_vector(text, table)))
            assert norm == 0.0 or abs(norm - 1.0) < 1e-6


class TestConceptTableIO:
    def test_load_smoke_table(self, smoke_dir):
        table = ConceptTable.from_file(smoke_dir / "concept_table.txt")
        assert table.dim == 300
        assert "visa" in table
        assert table.get("visa").shape == (300,)

    def test_malformed_row_is_load_error(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("token 0.1 0.2\n")  # wrong arity for dim=300
        with pytest.raises(SchemaError):
            ConceptTable.from_file(path)

    def test_bad_float_is_load_error(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("token " + " ".join(["x"] * 300) + "\n")
        with pytest.raises(SchemaError):
            ConceptTable.from_file(path)

    def test_wrong_dim_at_construction(self):
        with pytest.raises(SchemaError):
            ConceptTable({"a": np.zeros(5)}, dim=3)
