import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneknow.kb import EntityRecord, KnowledgeBase, MentionPriorTable
from sceneknow.text import (UNK, TextInstance, Vocab, assemble_sentence, build_vocab, link_spans, prepare_text,
                            tokenize)

VOCAB = build_vocab(["soda", "len", "new", "york", "qqq"], ["##in", "##ade"])


def knowledge():
    kb = KnowledgeBase([EntityRecord(e, e, np.ones(2)) for e in ("soda_drink", "nyc", "lenin")])
    table = MentionPriorTable({"soda": [("soda_drink", 1.0)], "new york": [("nyc", 1.0)],
                               "leninade": [("lenin", 1.0)]})
    return kb, table


def test_assemble_sorts_by_spot_order():
    out = assemble_sentence([TextInstance("b", 2), TextInstance("a", 1)])
    assert [i.text for i in out] == ["a", "b"]


def test_assemble_single_instance_shuffled():
    inst = [TextInstance("only", 0)]
    assert assemble_sentence(inst, shuffle=True, seed=3) == inst


def test_assemble_empty():
    assert assemble_sentence([], shuffle=True, seed=0) == []


def test_assemble_shuffle_is_seeded():
    inst = [TextInstance(c, i) for i, c in enumerate("abcde")]
    a = assemble_sentence(inst, True, 7)
    assert a == assemble_sentence(inst, True, 7)
    assert sorted(a, key=lambda i: i.spot_order) == inst


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.text("abc", min_size=1, max_size=3), st.integers(0, 9)), max_size=8),
       st.integers(0, 2 ** 32 - 1))
def test_shuffle_preserves_multiset(items, seed):
    inst = [TextInstance(t, o) for t, o in items]
    out = assemble_sentence(inst, True, seed)
    assert sorted(out, key=repr) == sorted(inst, key=repr)


def test_single_word_token():
    seq = tokenize(VOCAB, [TextInstance("soda")])
    assert seq.token_ids == [VOCAB.index["soda"]] and seq.spans == [(0, 0, 1)]


def test_multi_piece_instance_is_one_span():
    seq = tokenize(VOCAB, [TextInstance("leninade")])
    assert [VOCAB.tokens[t] for t in seq.token_ids] == ["len", "##in", "##ade"]
    assert seq.spans == [(0, 0, 3)]


def test_empty_instance_list():
    seq = tokenize(VOCAB, [])
    assert seq.token_ids == [] and seq.spans == []


def test_unknown_word_maps_to_unk():
    assert VOCAB.wordpiece("zzz") == [UNK]
    assert VOCAB.wordpiece("lenzz") == [UNK]


def test_multi_word_instance_counts_pieces():
    seq = tokenize(VOCAB, [TextInstance("New  York"), TextInstance("soda")])
    assert len(seq) == 3 and seq.spans == [(0, 0, 2), (1, 2, 3)]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["soda", "leninade", "new york", "zzz", "len", "lenin"]), max_size=6))
def test_spans_partition_tokens(texts):
    seq = tokenize(VOCAB, [TextInstance(t, i) for i, t in enumerate(texts)])
    covered = []
    for k, (_, start, end) in enumerate(seq.spans):
        assert start < end
        if k:
            assert start == seq.spans[k - 1][2]
        covered.extend(range(start, end))
    assert covered == list(range(len(seq)))


@settings(max_examples=100, deadline=None)
@given(st.text("lenidaso", min_size=1, max_size=10))
def test_wordpiece_reassembles_word(word):
    pieces = VOCAB.wordpiece(word)
    if pieces != [UNK]:
        assert "".join(p[2:] if p.startswith("##") else p for p in pieces) == word
        assert not pieces[0].startswith("##")


def test_link_known_mention():
    kb, table = knowledge()
    seq, cands = prepare_text([TextInstance("soda")], VOCAB, table, kb, 8)
    assert len(cands) == 1 and cands[0].span == (0, 1)


def test_link_unknown_mention():
    kb, table = knowledge()
    assert prepare_text([TextInstance("qqq")], VOCAB, table, kb, 8)[1] == []


def test_cross_instance_mentions_never_formed():
    kb, table = knowledge()
    seq = tokenize(VOCAB, [TextInstance("new", 0), TextInstance("york", 1)])
    assert link_spans(seq, table, kb, 8) == []
    # the same words as one instance do link
    assert len(link_spans(tokenize(VOCAB, [TextInstance("new york")]), table, kb, 8)) == 1


def test_multi_piece_mention_span_covers_all_pieces():
    kb, table = knowledge()
    _, cands = prepare_text([TextInstance("soda", 0), TextInstance("leninade", 1)], VOCAB, table, kb, 8)
    assert [c.span for c in cands] == [(0, 1), (1, 4)]


def test_vocab_file_round_trip(tmp_path):
    VOCAB.save(tmp_path / "v.txt")
    assert Vocab.load(tmp_path / "v.txt") == VOCAB


def test_vocab_requires_unk():
    with pytest.raises(ValueError):
        Vocab(["a", "b"])
