"""Entity store, mention->entity priors and top-C candidate selection.

On disk a knowledge base is a directory holding two tab-separated files:

``entities.tsv``
    ``entity_id  title  E  v_1 ... v_E  [description]`` - one entity per line,
    embedding values written with 17 significant digits so they read back
    bit-exactly.
``priors.tsv``
    ``mention  entity_id_1  prior_1  entity_id_2  prior_2 ...`` - one
    normalized mention per line, pairs in descending prior order.

Tabs, newlines and backslashes inside text fields are backslash-escaped.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np


class IntegrityError(ValueError):
    """The knowledge base contradicts itself (duplicate or dangling entity ids)."""


class FormatError(ValueError):
    """A file line could not be parsed."""

    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.lineno = lineno


_WS = re.compile(r"\s+")


def normalize_mention(text: str) -> str:
    """Lowercase, trim, collapse internal whitespace."""
    return _WS.sub(" ", text.strip().lower())


@dataclass
class EntityRecord:
    entity_id: str
    title: str
    embedding: np.ndarray  # [E]
    description: str = ""

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.embedding)):
            raise ValueError(f"entity {self.entity_id!r} has a non-finite embedding")


class KnowledgeBase:
    """Entities keyed by id, in insertion order."""

    def __init__(self, records=()):
        self._records: dict[str, EntityRecord] = {}
        for rec in records:
            self.add(rec)

    def add(self, record: EntityRecord) -> None:
        if record.entity_id in self._records:
            raise IntegrityError(f"duplicate entity_id {record.entity_id!r}")
        if self._records:
            dim = self.dim
            if record.embedding.shape[0] != dim:
                raise IntegrityError(
                    f"entity {record.entity_id!r} has embedding dim {record.embedding.shape[0]}, expected {dim}")
        self._records[record.entity_id] = record

    def __getitem__(self, entity_id: str) -> EntityRecord:
        return self._records[entity_id]

    def __contains__(self, entity_id) -> bool:
        return entity_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records.values())

    @property
    def dim(self) -> int:
        first = next(iter(self._records.values()), None)
        return 0 if first is None else first.embedding.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeBase) or list(self._records) != list(other._records):
            return False
        for a in self:
            b = other[a.entity_id]
            if (a.title, a.description) != (b.title, b.description):
                return False
            if a.embedding.shape != b.embedding.shape or not np.array_equal(a.embedding, b.embedding):
                return False
        return True


class MentionPriorTable:
    """normalized mention -> [(entity_id, prior)], descending prior, ties by id."""

    def __init__(self, entries: dict | None = None):
        self._entries: dict[str, list] = {}
        for mention, pairs in (entries or {}).items():
            self.set(mention, pairs)

    def set(self, mention: str, pairs) -> None:
        pairs = [(str(e), float(p)) for e, p in pairs if p > 0]
        if pairs:
            self._entries[normalize_mention(mention)] = sorted(pairs, key=lambda ep: (-ep[1], ep[0]))

    def get(self, mention: str) -> list:
        return self._entries.get(normalize_mention(mention), [])

    def __contains__(self, mention) -> bool:
        return normalize_mention(mention) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def mentions(self) -> list:
        return list(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, MentionPriorTable) and self._entries == other._entries


@dataclass
class CandidateSet:
    span: tuple  # (start_token, end_token), end exclusive
    mention: str
    candidates: list = field(default_factory=list)  # [(entity_id, prior, embedding[E])]

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def priors(self) -> np.ndarray:
        return np.array([c[1] for c in self.candidates], dtype=np.float64)

    @property
    def embeddings(self) -> np.ndarray:
        if not self.candidates:
            return np.zeros((0, 0))
        return np.stack([c[2] for c in self.candidates])


def build_prior_table(sources) -> MentionPriorTable:
    """Average per-source conditional distributions p(entity | mention).

    Each source is ``{mention: {entity_id: count}}``.  A source contributes to
    a mention only if its counts for that mention are not all zero.
    """
    sources = list(sources)
    if not sources:
        raise ValueError("build_prior_table needs at least one count source")
    totals: dict[str, dict[str, float]] = {}
    contributors: dict[str, int] = {}
    for source in sources:
        merged: dict[str, dict[str, float]] = {}
        for raw, counts in source.items():
            bucket = merged.setdefault(normalize_mention(raw), {})
            for entity_id, count in counts.items():
                if count < 0:
                    raise ValueError(f"negative count for mention {raw!r}, entity {entity_id!r}")
                bucket[entity_id] = bucket.get(entity_id, 0.0) + float(count)
        for mention, counts in merged.items():
            z = sum(counts.values())
            if z <= 0:
                continue
            acc = totals.setdefault(mention, {})
            for entity_id, count in counts.items():
                acc[entity_id] = acc.get(entity_id, 0.0) + count / z
            contributors[mention] = contributors.get(mention, 0) + 1
    table = MentionPriorTable()
    for mention, acc in totals.items():
        n = contributors[mention]
        table.set(mention, [(e, p / n) for e, p in acc.items()])
    return table


def select_candidates(table: MentionPriorTable, kb: KnowledgeBase, mention: str, C: int,
                      span: tuple = (0, 0)) -> CandidateSet:
    """Top-``C`` entities for ``mention`` by prior, with embeddings attached."""
    if C < 1:
        raise ValueError(f"C must be >= 1, got {C}")
    chosen = []
    for entity_id, prior in table.get(mention)[:C]:
        if entity_id not in kb:
            raise IntegrityError(f"prior table references unknown entity {entity_id!r}")
        chosen.append((entity_id, prior, kb[entity_id].embedding))
    return CandidateSet(tuple(span), normalize_mention(mention), chosen)


# -- file IO -------------------------------------------------------------------

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPE = re.compile(r"\\(.)")


def escape(text: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in text)


def unescape(text: str) -> str:
    return _UNESCAPE.sub(lambda m: {"t": "\t", "n": "\n", "r": "\r"}.get(m.group(1), m.group(1)), text)


def fmt(value: float) -> str:
    return format(float(value), ".17g")


def save_kb(kb: KnowledgeBase, table: MentionPriorTable, path) -> None:
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "entities.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        for rec in kb:
            cols = [escape(rec.entity_id), escape(rec.title), str(rec.embedding.shape[0])]
            cols.extend(fmt(v) for v in rec.embedding)
            if rec.description:
                cols.append(escape(rec.description))
            fh.write("\t".join(cols) + "\n")
    with open(os.path.join(path, "priors.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        for mention in sorted(table.mentions()):
            cols = [escape(mention)]
            for entity_id, prior in table.get(mention):
                cols.extend((escape(entity_id), fmt(prior)))
            fh.write("\t".join(cols) + "\n")


def load_kb(path) -> tuple:
    """Read a directory written by :func:`save_kb`; returns ``(kb, table)``."""
    kb = KnowledgeBase()
    ent_path = os.path.join(path, "entities.tsv")
    with open(ent_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            try:
                dim = int(cols[2])
                values = [float(v) for v in cols[3:3 + dim]]
            except (IndexError, ValueError) as exc:
                raise FormatError(ent_path, lineno, f"bad entity record ({exc})") from None
            if len(values) != dim or len(cols) > 4 + dim:
                raise FormatError(ent_path, lineno, f"expected {dim} embedding values")
            desc = unescape(cols[3 + dim]) if len(cols) == 4 + dim else ""
            try:
                kb.add(EntityRecord(unescape(cols[0]), unescape(cols[1]), np.array(values), desc))
            except IntegrityError as exc:
                raise IntegrityError(f"{ent_path}:{lineno}: {exc}") from None
    table = MentionPriorTable()
    prior_path = os.path.join(path, "priors.tsv")
    with open(prior_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) < 3 or len(cols) % 2 == 0:
                raise FormatError(prior_path, lineno, "expected mention followed by (entity, prior) pairs")
            try:
                pairs = [(unescape(cols[i]), float(cols[i + 1])) for i in range(1, len(cols), 2)]
            except ValueError as exc:
                raise FormatError(prior_path, lineno, str(exc)) from None
            table.set(unescape(cols[0]), pairs)
    return kb, table
