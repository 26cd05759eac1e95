"""Synthetic tasks whose label signal lives in entity knowledge, not in tokens.

Construction
------------
Mentions are two word pieces glued together, ``prefix + ##suffix``.  The
(prefix, suffix) grid is carved into disjoint perfect matchings ("rounds");
every mention of a round belongs to the same class.  Because a round uses
each prefix and each suffix exactly once, streaming rounds into samples
keeps every word piece equally frequent in every class - the literal tokens
say nothing about the label.  Train and eval draw from different rounds, so
evaluation mentions are never seen during training.

Each mention links to K homonym entities.  The top-prior entity sits in its
class's embedding cluster; the others sit in clusters of different classes.
Visual features are ``alpha * class_center + (1 - alpha) * noise``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Sample
from .kb import EntityRecord, KnowledgeBase, MentionPriorTable
from .model import Knowledge, ModelConfig, init_model
from .text import TextInstance, Vocab, build_vocab
from .train import OptimConfig, accuracy, evaluate_map, train

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SynthSpec:
    M: int = 4
    vocab_size: int = 16  # word pieces per position (prefixes = suffixes = vocab_size)
    K: int = 2
    E: int = 16
    D: int = 32
    train_per_class: int = 50
    eval_per_class: int = 25
    texts_per_sample: int = 3
    distractors_per_sample: int = 0
    alpha: float = 0.0
    sigma: float = 0.0
    visual_noise: float = 1.0
    train_rounds: int = 3
    eval_rounds: int = 1
    top_prior: float = 0.6
    equal_priors: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"K must be >= 2 for homonymy, got {self.K}")
        if self.K > self.M:
            raise ValueError(f"K={self.K} homonyms need at least K classes, got M={self.M}")
        if not 0.0 <= self.alpha <= 1.0 or self.sigma < 0 or self.visual_noise < 0:
            raise ValueError("alpha must lie in [0, 1]; sigma and visual_noise must be >= 0")
        need = self.min_vocab_size()
        if self.vocab_size < need:
            raise ValueError(f"vocab_size {self.vocab_size} is too small for balanced mentions: "
                             f"need at least M * (train_rounds + eval_rounds) = {need}")

    def min_vocab_size(self) -> int:
        return self.M * (self.train_rounds + self.eval_rounds)


@dataclass
class SynthData:
    train: list
    eval: list
    kb: KnowledgeBase
    table: MentionPriorTable
    vocab: Vocab
    mention_class: dict = field(default_factory=dict)  # mention -> class
    entity_class: dict = field(default_factory=dict)  # entity_id -> cluster class
    centers: np.ndarray | None = None  # [M x E] entity cluster centers
    visual_centers: np.ndarray | None = None  # [M x D]

    @property
    def knowledge(self) -> Knowledge:
        return Knowledge(self.vocab, self.kb, self.table)


def _syllable_pieces(n: int, rng: np.random.Generator) -> list:
    """``n`` distinct four-letter pieces (two consonant-vowel syllables)."""
    pool = [a + b + c + d for a in _CONSONANTS for b in _VOWELS for c in _CONSONANTS for d in _VOWELS]
    picks = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in picks]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _matchings(P: int, count: int, rng: np.random.Generator) -> list:
    """``count`` pairwise-disjoint random perfect matchings of a P x P grid."""
    used = np.zeros((P, P), dtype=bool)
    out = []
    for _ in range(count):
        cost = rng.uniform(size=(P, P)) + used * (P + 1.0)
        rows, cols = linear_sum_assignment(cost)
        # the free cells form a regular bipartite graph, so a perfect matching avoiding `used` exists
        assert not used[rows, cols].any()
        used[rows, cols] = True
        out.append(cols.copy())
    return out


def _stream(rounds: list, length: int, prefix_order: np.ndarray) -> list:
    """Concatenate rounds (cycling) into ``length`` (prefix, suffix) pairs."""
    pairs = []
    r = 0
    while len(pairs) < length:
        sigma = rounds[r % len(rounds)]
        pairs.extend((int(i), int(sigma[i])) for i in prefix_order)
        r += 1
    return pairs[:length]


def generate(spec: SynthSpec) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    P, M = spec.vocab_size, spec.M
    prefixes = _syllable_pieces(2 * P, rng)
    prefixes, suffixes = prefixes[:P], prefixes[P:]
    vocab = build_vocab(prefixes, ["##" + s for s in suffixes])

    per_class = spec.train_rounds + spec.eval_rounds
    matchings = _matchings(P, M * per_class, rng)
    rounds = {(c, split): [] for c in range(M) for split in ("train", "eval")}
    for c in range(M):
        for k in range(per_class):
            split = "train" if k < spec.train_rounds else "eval"
            rounds[c, split].append(matchings[c * per_class + k])

    centers = _unit(rng.normal(size=(M, spec.E)))
    visual_centers = _unit(rng.normal(size=(M, spec.D)))

    kb, table = KnowledgeBase(), MentionPriorTable()
    mention_class, entity_class = {}, {}
    distractor_prior = (1.0 - spec.top_prior) / spec.K
    for c in range(M):
        for split in ("train", "eval"):
            for sigma in rounds[c, split]:
                for i in range(P):
                    mention = prefixes[i] + suffixes[sigma[i]]
                    others = rng.choice([m for m in range(M) if m != c], size=spec.K - 1, replace=False)
                    pairs = []
                    for k, cls in enumerate([c, *others]):
                        eid = f"{mention}#{k}"
                        emb = centers[cls] + spec.sigma * rng.normal(size=spec.E) / math.sqrt(spec.E)
                        kb.add(EntityRecord(eid, f"{mention} ({k})", emb, f"cluster {cls}"))
                        entity_class[eid] = int(cls)
                        if spec.equal_priors:
                            prior = 1.0 / spec.K
                        else:
                            prior = spec.top_prior if k == 0 else distractor_prior
                        pairs.append((eid, prior))
                    table.set(mention, pairs)
                    mention_class[mention] = c

    def make_split(split: str, n_per_class: int) -> list:
        T, Dn = spec.texts_per_sample, spec.distractors_per_sample
        prefix_order = rng.permutation(P)
        samples = []
        for c in range(M):
            rel = _stream(rounds[c, split], n_per_class * T, prefix_order)
            rel = [rel[i] for i in rng.permutation(len(rel))]
            # distractors walk the other classes' rounds one whole round at a time
            dis = []
            if Dn:
                others = [rounds[(c + s) % M, split] for s in range(1, M)]
                blocks = [others[k % len(others)][k // len(others) % len(others[0])]
                          for k in range(len(others) * len(others[0]))]
                dis = _stream(blocks, n_per_class * Dn, prefix_order)
                dis = [dis[i] for i in rng.permutation(len(dis))]
            for n in range(n_per_class):
                pairs = rel[n * T:(n + 1) * T] + dis[n * Dn:(n + 1) * Dn]
                order = rng.permutation(len(pairs))
                texts = [TextInstance(prefixes[i] + suffixes[j], int(order[k])) for k, (i, j) in enumerate(pairs)]
                noise = rng.normal(size=spec.D) * spec.visual_noise / math.sqrt(spec.D)
                visual = spec.alpha * visual_centers[c] + (1.0 - spec.alpha) * noise
                samples.append(Sample(visual.reshape(1, -1), texts, c, "feature"))
        return [samples[i] for i in rng.permutation(len(samples))]

    train_set = make_split("train", spec.train_per_class)
    eval_set = make_split("eval", spec.eval_per_class)
    return SynthData(train_set, eval_set, kb, table, vocab, mention_class, entity_class, centers, visual_centers)


# -- diagnostics --------------------------------------------------------------------

def token_label_counts(samples, vocab: Vocab, M: int) -> np.ndarray:
    """[vocab_size x M] word-piece occurrence counts per class."""
    from .text import tokenize

    counts = np.zeros((len(vocab), M), dtype=np.int64)
    for s in samples:
        for tok in tokenize(vocab, s.texts).token_ids:
            counts[tok, s.label] += 1
    return counts


def mutual_information(counts: np.ndarray) -> float:
    """Empirical mutual information (nats) of a joint count table."""
    total = counts.sum()
    if total == 0:
        return 0.0
    joint = counts / total
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))


def nearest_center_accuracy(data: SynthData, samples) -> float:
    """Oracle reading only knowledge: vote by the nearest cluster center of each top-prior entity."""
    hits = 0
    for s in samples:
        votes = np.zeros(len(data.centers))
        for inst in s.texts:
            ranked = data.table.get(inst.text)
            if ranked:
                emb = data.kb[ranked[0][0]].embedding
                votes[np.argmin(np.linalg.norm(data.centers - emb, axis=1))] += 1
        hits += int(np.argmax(votes) == s.label)
    return hits / len(samples) if samples else float("nan")


# -- literal baseline ---------------------------------------------------------------

@dataclass
class BaselineResult:
    model: object
    map: float
    per_class_ap: list
    accuracy: float
    metrics: list


def literal_baseline(train_set, eval_set, vocab: Vocab, D: int, optim: OptimConfig, M: int | None = None,
                     seed: int = 0, max_seq_len: int = 64) -> BaselineResult:
    """Same pipeline with a static token-embedding table in place of the knowledge encoder."""
    M = M if M is not None else 1 + max(s.label for s in list(train_set) + list(eval_set))
    config = ModelConfig(M=M, D=D, vocab_size=len(vocab), max_seq_len=max_seq_len, text_mode="literal",
                         use_vkac=True, use_precomputed=True)
    knowledge = Knowledge(vocab, KnowledgeBase(), MentionPriorTable())
    model = init_model(config, seed)
    result = train(model, knowledge, train_set, optim, seed)
    aps, mean_ap = evaluate_map(model, knowledge, eval_set)
    return BaselineResult(model, mean_ap, aps, accuracy(model, knowledge, eval_set), result.metrics)
