import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from instances import count_sources, selection_case
from sceneknow.kb import (EntityRecord, FormatError, IntegrityError, KnowledgeBase, MentionPriorTable,
                          build_prior_table, load_kb, normalize_mention, save_kb, select_candidates)


def toy_kb(E=3):
    kb = KnowledgeBase([EntityRecord("fruit", "Apple (fruit)", np.array([1.0, 0.0, 0.0])[:E]),
                        EntityRecord("company", "Apple Inc.", np.array([0.0, 1.0, 0.0])[:E])])
    return kb, build_prior_table([{"apple": {"fruit": 3, "company": 1}}])


# -- build_prior_table --------------------------------------------------------------

def test_single_source_normalization():
    _, table = toy_kb()
    assert table.get("apple") == [("fruit", 0.75), ("company", 0.25)]


def test_two_sources_average_symmetrically():
    table = build_prior_table([{"apple": {"fruit": 1.0}}, {"apple": {"company": 1.0}}])
    assert table.get("apple") == [("company", 0.5), ("fruit", 0.5)]


def test_all_zero_source_is_ignored_for_that_mention():
    table = build_prior_table([{"apple": {"fruit": 0}}, {"apple": {"company": 2}}])
    assert table.get("apple") == [("company", 1.0)]


def test_all_zero_everywhere_is_absent():
    table = build_prior_table([{"pear": {"x": 0}}])
    assert "pear" not in table and select_candidates(table, KnowledgeBase(), "pear", 3).candidates == []


def test_negative_count_rejected():
    with pytest.raises(ValueError, match="negative"):
        build_prior_table([{"apple": {"fruit": -1}}])


def test_no_sources_rejected():
    with pytest.raises(ValueError):
        build_prior_table([])


@pytest.mark.parametrize("seed", range(5))
def test_prior_table_matches_brute_force(seed):
    sources = count_sources(np.random.default_rng(seed))
    table = build_prior_table(sources)
    expected = oracles.prior_table(sources)
    assert sorted(table.mentions()) == sorted(expected)
    for mention, pairs in table.items():
        assert {e for e, _ in pairs} == set(expected[mention])
        for e, p in pairs:
            assert abs(p - expected[mention][e]) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1000.0))
def test_prior_table_invariants(seed, factor):
    rng = np.random.default_rng(seed)
    sources = count_sources(rng, n_mentions=10, n_entities=8)
    table = build_prior_table(sources)
    for _, pairs in table.items():
        priors = [p for _, p in pairs]
        assert all(0 < p <= 1 for p in priors)
        assert sum(priors) <= 1 + 1e-9
        assert pairs == sorted(pairs, key=lambda ep: (-ep[1], ep[0]))
    scaled = [dict(sources[0].items())] + sources[1:]
    scaled[0] = {m: {e: c * factor for e, c in counts.items()} for m, counts in sources[0].items()}
    rescaled = build_prior_table(scaled)
    for mention, pairs in table.items():
        other = dict(rescaled.get(mention))
        for e, p in pairs:
            assert abs(other[e] - p) < 1e-12


def test_mention_normalization():
    assert normalize_mention("  New \t YORK ") == "new york"
    table = MentionPriorTable({"New York": [("nyc", 1.0)]})
    assert table.get("new   york") == [("nyc", 1.0)]


# -- select_candidates --------------------------------------------------------------

def test_top_one_is_argmax():
    kb, table = toy_kb()
    cs = select_candidates(table, kb, "apple", 1)
    assert [(e, p) for e, p, _ in cs.candidates] == [("fruit", 0.75)]


def test_fewer_entities_than_C():
    kb = KnowledgeBase([EntityRecord("x", "x", np.ones(2))])
    cs = select_candidates(MentionPriorTable({"m": [("x", 1.0)]}), kb, "m", 8)
    assert len(cs) == 1 and np.array_equal(cs.candidates[0][2], np.ones(2))


def test_missing_entity_is_integrity_error():
    with pytest.raises(IntegrityError, match="ghost"):
        select_candidates(MentionPriorTable({"m": [("ghost", 1.0)]}), KnowledgeBase(), "m", 2)


def test_C_must_be_positive():
    kb, table = toy_kb()
    with pytest.raises(ValueError):
        select_candidates(table, kb, "apple", 0)


@pytest.mark.parametrize("seed", range(10))
def test_selection_matches_sort_then_truncate(seed):
    kb, table, pairs = selection_case(np.random.default_rng(seed))
    for C in (1, 3, 8, 100):
        got = [(e, p) for e, p, _ in select_candidates(table, kb, "m", C).candidates]
        assert got == oracles.top_candidates(pairs, C)


# -- KnowledgeBase / file IO --------------------------------------------------------

def test_duplicate_entity_rejected():
    kb = KnowledgeBase([EntityRecord("a", "", np.zeros(2))])
    with pytest.raises(IntegrityError):
        kb.add(EntityRecord("a", "", np.zeros(2)))


def test_dimension_mismatch_rejected():
    kb = KnowledgeBase([EntityRecord("a", "", np.zeros(2))])
    with pytest.raises(ValueError):
        kb.add(EntityRecord("b", "", np.zeros(3)))


def test_non_finite_embedding_rejected():
    with pytest.raises(ValueError):
        EntityRecord("a", "", np.array([np.nan]))


def test_empty_kb_round_trip(tmp_path):
    save_kb(KnowledgeBase(), MentionPriorTable(), tmp_path / "kb")
    kb, table = load_kb(tmp_path / "kb")
    assert len(kb) == 0 and len(table) == 0


def test_one_entity_round_trip(tmp_path):
    kb, table = toy_kb()
    save_kb(kb, table, tmp_path)
    assert load_kb(tmp_path) == (kb, table)


def test_large_random_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    kb = KnowledgeBase([EntityRecord(f"id\t{i}", f"title {i}\nline", rng.normal(size=7) * 10.0 ** rng.integers(-8, 8),
                                     "desc\\x" if i % 2 else "") for i in range(500)])
    table = build_prior_table(count_sources(rng, n_entities=500))
    table = MentionPriorTable({m: [(f"id\t{e[1:]}", p) for e, p in pairs] for m, pairs in table.items()})
    save_kb(kb, table, tmp_path)
    kb2, table2 = load_kb(tmp_path)
    assert kb2 == kb and table2 == table
    for rec in kb:
        assert np.array_equal(kb2[rec.entity_id].embedding, rec.embedding)
        assert kb2[rec.entity_id].title == rec.title and kb2[rec.entity_id].description == rec.description


def test_saved_files_are_byte_identical(tmp_path):
    kb, table = toy_kb()
    save_kb(kb, table, tmp_path / "a")
    save_kb(kb, table, tmp_path / "b")
    for name in ("entities.tsv", "priors.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_malformed_line_reports_line_number(tmp_path):
    kb, table = toy_kb()
    save_kb(kb, table, tmp_path)
    with open(tmp_path / "entities.tsv", "a") as fh:
        fh.write("broken\ttitle\t3\t1.0\n")
    with pytest.raises(FormatError, match=":3:"):
        load_kb(tmp_path)


def test_duplicate_in_file_is_integrity_error(tmp_path):
    kb, table = toy_kb()
    save_kb(kb, table, tmp_path)
    lines = (tmp_path / "entities.tsv").read_text().splitlines()
    (tmp_path / "entities.tsv").write_text("\n".join(lines + lines[:1]) + "\n")
    with pytest.raises(IntegrityError):
        load_kb(tmp_path)


def test_missing_directory():
    with pytest.raises(OSError):
        load_kb(os.path.join("no", "such", "kb"))
