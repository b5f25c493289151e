"""Signature index, link, frequency, and search tests."""

from __future__ import annotations

import pytest

from tuskmark.analysis import (
    build_signature_index,
    cross_seizure_links,
    find_xo_sequences,
    format_link_table,
    format_occurrence_matrix,
    frequency_stats,
    lambda_variant_links,
    normalize_key,
    search_descriptions,
)
from tuskmark.catalog import Catalog, ImageRecord, LogicalClock, Marking, marking_id_for
from tuskmark.fixtures import build_frequency_catalog, build_signature_matrix_catalog
from tuskmark.geometry import BoundingBox


def bare_marking(**kwargs) -> Marking:
    bbox = kwargs.pop("bbox", BoundingBox(0, 0, 10, 10))
    return Marking(marking_id="m", image_id="i", bbox=bbox, **kwargs)


class TestNormalizeKey:
    def test_text_uppercased_and_stripped(self):
        m = bare_marking(kind="textual", text=" bb ", stage="pre_seizure")
        assert normalize_key(m) == "BB"

    def test_interior_whitespace_removed(self):
        m = bare_marking(kind="textual", text="B B", stage="pre_seizure")
        assert normalize_key(m) == "BB"

    def test_post_seizure_excluded(self):
        m = bare_marking(kind="textual", text="BB", stage="post_seizure")
        assert normalize_key(m) is None

    def test_illegible_excluded(self):
        m = bare_marking(kind="textual", text="BB", legibility="illegible")
        assert normalize_key(m) is None

    def test_symbol_lowercased(self):
        m = bare_marking(kind="symbolic", symbol_name="Circled  Z")
        assert normalize_key(m) == "circled z"

    def test_confusables_off_by_default(self):
        m = bare_marking(kind="textual", text="B8")
        assert normalize_key(m) == "B8"
        assert normalize_key(m, fold_confusables=True) == "BB"

    def test_idempotent(self):
        m = bare_marking(kind="textual", text=" b 8b ")
        once = normalize_key(m, fold_confusables=True)
        again = normalize_key(
            bare_marking(kind="textual", text=once, stage=m.stage), fold_confusables=True
        )
        assert once == again

    def test_no_content_returns_none(self):
        assert normalize_key(bare_marking()) is None
        assert normalize_key(bare_marking(kind="none")) is None


@pytest.fixture(scope="module")
def matrix_catalog(tmp_path_factory):
    return build_signature_matrix_catalog(tmp_path_factory.mktemp("matrix") / "catalog")


class TestSignatureIndex:
    def test_bb_occurrence_map(self, matrix_catalog):
        index = build_signature_index(matrix_catalog)
        bb = next(g for g in index if g.key == "BB")
        assert bb.occurrences == {2: 3, 5: 64, 8: 24}
        assert bb.category == "initial_pair"
        assert bb.recurring

    def test_twenty_signature_rows(self, matrix_catalog):
        index = build_signature_index(matrix_catalog)
        recurring = [g for g in index if g.recurring and g.key not in ("XOXO", "XXX", "XOX")]
        assert len(recurring) == 20

    def test_unique_keys_not_recurring(self, tmp_path):
        catalog = Catalog(tmp_path / "cat", clock=LogicalClock())
        catalog.add_images([ImageRecord("i", 1, "i.png", 100, 100)])
        boxes = [BoundingBox(x, 0, x + 5, 5) for x in (0, 10, 20)]
        catalog.upsert_markings(
            [
                Marking(
                    marking_id=marking_id_for("i", b),
                    image_id="i",
                    bbox=b,
                    kind="textual",
                    text=t,
                    stage="pre_seizure",
                )
                for b, t in zip(boxes, ("AA", "AB", "AC"))
            ]
        )
        index = build_signature_index(catalog)
        assert all(not g.recurring for g in index)

    def test_mixed_case_single_group(self, tmp_path):
        catalog = Catalog(tmp_path / "cat", clock=LogicalClock())
        catalog.add_images([ImageRecord("i", 1, "i.png", 100, 100)])
        boxes = [BoundingBox(x, 0, x + 5, 5) for x in (0, 10)]
        catalog.upsert_markings(
            [
                Marking(
                    marking_id=marking_id_for("i", b),
                    image_id="i",
                    bbox=b,
                    kind="textual",
                    text=t,
                )
                for b, t in zip(boxes, ("bb", "BB"))
            ]
        )
        index = build_signature_index(catalog)
        assert len(index) == 1 and index[0].key == "BB" and index[0].total == 2

    def test_completeness_invariant(self, matrix_catalog):
        index = build_signature_index(matrix_catalog)
        total_in_groups = sum(g.total for g in index)
        keyed = [
            m for m in matrix_catalog.markings.values() if normalize_key(m) is not None
        ]
        assert total_in_groups == len(keyed)

    def test_category_inference(self, matrix_catalog):
        index = build_signature_index(matrix_catalog)
        by_key = {g.key: g.category for g in index}
        assert by_key["BB"] == "initial_pair"
        assert by_key["KAMA"] == "longer_text"
        assert by_key["circled z"] == "symbol"


class TestCrossSeizureLinks:
    def test_published_link_rows(self, matrix_catalog):
        index = build_signature_index(matrix_catalog)
        links = cross_seizure_links(index)
        by_set = {link.seizure_set: link for link in links}
        expected = {
            (2, 8): 7,
            (5, 8): 8,
            (3, 8): 1,
            (7, 8): 1,
            (2, 5, 8): 1,
            (2, 7, 8): 1,
        }
        signature_sets = {
            s: link for s, link in by_set.items() if s in expected
        }
        for seizure_set, count in expected.items():
            assert len(signature_sets[seizure_set].shared_signatures) == count, seizure_set
        assert by_set[(2, 5, 8)].shared_signatures == ["BB"]

    def test_exact_set_partition(self, matrix_catalog):
        index = build_signature_index(matrix_catalog)
        links = cross_seizure_links(index)
        by_set = {link.seizure_set: link for link in links}
        assert "BB" in by_set[(2, 5, 8)].shared_signatures
        assert "BB" not in by_set[(2, 8)].shared_signatures
        assert "BB" not in by_set[(5, 8)].shared_signatures
        seen = [k for link in links for k in link.shared_signatures]
        assert len(seen) == len(set(seen))  # each signature in exactly one report

    def test_no_multi_seizure_signature(self, tmp_path):
        catalog = Catalog(tmp_path / "cat", clock=LogicalClock())
        catalog.add_images([ImageRecord("i", 1, "i.png", 100, 100)])
        b = BoundingBox(0, 0, 5, 5)
        catalog.upsert_markings(
            [
                Marking(
                    marking_id=marking_id_for("i", b),
                    image_id="i",
                    bbox=b,
                    kind="textual",
                    text="ZZ",
                )
            ]
        )
        assert cross_seizure_links(build_signature_index(catalog)) == []

    def test_soundness(self, matrix_catalog):
        index = build_signature_index(matrix_catalog)
        by_key = {g.key: g for g in index}
        for link in cross_seizure_links(index):
            for key in link.shared_signatures:
                for seizure in link.seizure_set:
                    assert by_key[key].occurrences.get(seizure, 0) > 0


@pytest.fixture(scope="module")
def frequency_catalog(tmp_path_factory):
    return build_frequency_catalog(tmp_path_factory.mktemp("freq") / "catalog")


class TestFrequencyStats:
    def test_published_aggregates(self, frequency_catalog):
        index = build_signature_index(frequency_catalog)
        stats = frequency_stats(index, category="initial_pair", threshold=10)
        assert stats.unique_keys == 133
        assert stats.total_occurrences == 1196
        assert stats.high_frequency_keys == 16
        assert stats.high_frequency_occurrences == 909
        assert stats.high_frequency_key_share == pytest.approx(0.12, abs=0.001)
        assert stats.high_frequency_occurrence_share == pytest.approx(0.76, abs=0.001)
        assert stats.top[0][1] == 267 and stats.top[1][1] == 169

    def test_share_sum_to_one(self, frequency_catalog):
        index = build_signature_index(frequency_catalog)
        stats = frequency_stats(index, threshold=10)
        remainder = (
            stats.total_occurrences - stats.high_frequency_occurrences
        ) / stats.total_occurrences
        assert stats.high_frequency_occurrence_share + remainder == pytest.approx(1.0, abs=1e-9)

    def test_all_singletons_empty_high_set(self, tmp_path):
        catalog = Catalog(tmp_path / "cat", clock=LogicalClock())
        catalog.add_images([ImageRecord("i", 1, "i.png", 100, 100)])
        markings = []
        for i, text in enumerate(("AA", "AB", "AC")):
            b = BoundingBox(i * 10, 0, i * 10 + 5, 5)
            markings.append(
                Marking(
                    marking_id=marking_id_for("i", b),
                    image_id="i",
                    bbox=b,
                    kind="textual",
                    text=text,
                )
            )
        catalog.upsert_markings(markings)
        stats = frequency_stats(build_signature_index(catalog))
        assert stats.high_frequency_keys == 0
        assert stats.high_frequency_occurrences == 0


class TestXoSequences:
    def test_xo_flags(self, matrix_catalog):
        matches = find_xo_sequences(matrix_catalog)
        sequences = {m.sequence for m in matches}
        assert "XOXO" in sequences
        xoxo = [m for m in matches if m.sequence == "XOXO"]
        assert all(m.xo_sequence and not m.pure_x for m in xoxo)
        assert any(m.lambda_terminated for m in xoxo)

    def test_pure_x(self, matrix_catalog):
        matches = find_xo_sequences(matrix_catalog)
        xxx = next(m for m in matches if m.sequence == "XXX")
        assert xxx.pure_x and not xxx.xo_sequence

    def test_lambda_links_seizures_2_and_3(self, matrix_catalog):
        matches = find_xo_sequences(matrix_catalog)
        links = lambda_variant_links(matrix_catalog, matches)
        assert len(links) == 1
        assert links[0].seizure_set == (2, 3)
        assert links[0].evidence_kind == "xo_variant"

    def test_partial_flag_on_edge_crop(self, tmp_path):
        catalog = Catalog(tmp_path / "cat", clock=LogicalClock())
        catalog.add_images([ImageRecord("i", 1, "i.png", 100, 100)])
        edge_box = BoundingBox(0, 10, 30, 40)  # touches x_min = 0
        catalog.upsert_markings(
            [
                Marking(
                    marking_id=marking_id_for("i", edge_box),
                    image_id="i",
                    bbox=edge_box,
                    kind="textual",
                    text="OX",
                    stage="pre_seizure",
                )
            ]
        )
        matches = find_xo_sequences(catalog)
        assert len(matches) == 1
        assert matches[0].partial and matches[0].xo_sequence

    def test_lambda_glyph_in_text(self, tmp_path):
        catalog = Catalog(tmp_path / "cat", clock=LogicalClock())
        catalog.add_images([ImageRecord("i", 1, "i.png", 100, 100)])
        b = BoundingBox(10, 10, 30, 30)
        catalog.upsert_markings(
            [
                Marking(
                    marking_id=marking_id_for("i", b),
                    image_id="i",
                    bbox=b,
                    kind="textual",
                    text="xoxλ",
                )
            ]
        )
        matches = find_xo_sequences(catalog)
        assert matches and matches[0].lambda_terminated


class TestSearchDescriptions:
    def search_catalog(self, tmp_path):
        catalog = Catalog(tmp_path / "cat", clock=LogicalClock())
        catalog.add_images([ImageRecord("i", 1, "i.png", 500, 500)])
        rows = [
            ("BB", "bold block letters"),
            ("BB", "thin cursive strokes"),
            ("VV", "block letters with serifs"),
            ("DD", "faint"),
            ("KT", None),
        ]
        markings = []
        for n, (text, description) in enumerate(rows):
            b = BoundingBox(n * 20, 0, n * 20 + 10, 10)
            markings.append(
                Marking(
                    marking_id=marking_id_for("i", b),
                    image_id="i",
                    bbox=b,
                    kind="textual",
                    text=text,
                    description=description,
                )
            )
        catalog.upsert_markings(markings)
        return catalog

    def test_query_bb(self, tmp_path):
        catalog = self.search_catalog(tmp_path)
        hits = search_descriptions(catalog, "BB")
        assert len(hits) == 2
        assert all(h.marking.text == "BB" for h in hits)

    def test_no_hits(self, tmp_path):
        catalog = self.search_catalog(tmp_path)
        assert search_descriptions(catalog, "zebra") == []

    def test_multi_token_conjunctive_and_ranked(self, tmp_path):
        catalog = self.search_catalog(tmp_path)
        hits = search_descriptions(catalog, "block letters")
        assert len(hits) == 2
        assert {h.marking.text for h in hits} == {"BB", "VV"}
        scores = [h.score for h in hits]
        assert scores == sorted(scores, reverse=True)

    def test_matrix_fixture_bb_instance_count(self, matrix_catalog):
        # 3 + 64 + 24 across seizures 2, 5, 8.
        hits = search_descriptions(matrix_catalog, "BB")
        assert len(hits) == 91


class TestFormatting:
    def test_link_table_layout(self, matrix_catalog):
        index = build_signature_index(matrix_catalog)
        links = cross_seizure_links(index)
        table = format_link_table(links)
        assert "2+8" in table and "7 shared signature markings" in table
        assert "2+5+8" in table and "1 shared signature marking" in table

    def test_occurrence_matrix_contains_rows(self, matrix_catalog):
        index = build_signature_index(matrix_catalog)
        text = format_occurrence_matrix(index, seizures=matrix_catalog.seizures())
        assert "BB" in text and "circled z" in text
