"""Scene-text instances -> word-piece tokens with one linkable span per instance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kb import CandidateSet, KnowledgeBase, MentionPriorTable, normalize_mention, select_candidates

UNK = "[UNK]"


@dataclass(frozen=True)
class TextInstance:
    text: str
    spot_order: int = 0


@dataclass
class TokenSequence:
    token_ids: list = field(default_factory=list)
    spans: list = field(default_factory=list)  # (instance_index, start, end), end exclusive
    texts: list = field(default_factory=list)  # original text of each instance

    def __len__(self) -> int:
        return len(self.token_ids)


class Vocab:
    """Word-piece vocabulary; continuation pieces carry a ``##`` prefix."""

    def __init__(self, tokens, unk: str = UNK):
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        if unk not in self.index:
            raise ValueError(f"vocabulary lacks the unknown token {unk!r}")
        self.unk = unk
        self.unk_id = self.index[unk]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh])

    def wordpiece(self, word: str, max_chars: int = 100) -> list:
        """Greedy longest-match-first split of one word; unsplittable words become UNK."""
        if len(word) > max_chars:
            return [self.unk]
        pieces, start = [], 0
        while start < len(word):
            end, found = len(word), None
            while start < end:
                piece = word[start:end] if start == 0 else "##" + word[start:end]
                if piece in self.index:
                    found = piece
                    break
                end -= 1
            if found is None:
                return [self.unk]
            pieces.append(found)
            start = end
        return pieces


def assemble_sentence(instances, shuffle: bool = False, seed=None) -> list:
    """Order instances by spotting order, or by a seeded permutation when shuffling."""
    ordered = sorted(instances, key=lambda inst: inst.spot_order)
    if not shuffle or len(ordered) < 2:
        return ordered
    perm = np.random.default_rng(seed).permutation(len(ordered))
    return [ordered[i] for i in perm]


def tokenize(vocab: Vocab, instances) -> TokenSequence:
    seq = TokenSequence()
    for i, inst in enumerate(instances):
        words = normalize_mention(inst.text).split(" ")
        pieces = [p for w in words if w for p in vocab.wordpiece(w)]
        if not pieces:
            continue
        start = len(seq.token_ids)
        seq.token_ids.extend(vocab.index[p] for p in pieces)
        seq.spans.append((i, start, len(seq.token_ids)))
        seq.texts.append(inst.text)
    return seq


def link_spans(seq: TokenSequence, table: MentionPriorTable, kb: KnowledgeBase, C: int) -> list:
    """One CandidateSet per span whose whole-instance text is a known mention.

    Mentions are never assembled across instances, so an entry such as
    "new york" cannot match two separate instances "new" and "york".
    """
    linked = []
    for (_, start, end), text in zip(seq.spans, seq.texts):
        if text in table:
            linked.append(select_candidates(table, kb, text, C, span=(start, end)))
    return linked


def prepare_text(instances, vocab: Vocab, table: MentionPriorTable, kb: KnowledgeBase, C: int,
                 shuffle: bool = False, seed=None) -> tuple:
    """assemble -> tokenize -> link, returning ``(TokenSequence, [CandidateSet])``."""
    seq = tokenize(vocab, assemble_sentence(instances, shuffle, seed))
    return seq, link_spans(seq, table, kb, C)


def build_vocab(words, extra=()) -> Vocab:
    """Vocabulary holding [UNK], each word, and any extra pieces, in first-seen order."""
    return Vocab(dict.fromkeys([UNK, *words, *extra]))


__all__ = [
    "CandidateSet", "TextInstance", "TokenSequence", "UNK", "Vocab", "assemble_sentence",
    "build_vocab", "link_spans", "prepare_text", "tokenize",
]
