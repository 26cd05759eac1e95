"""Toy text encoder with the knowledge attention / recontextualization step.

The encoder is a stack of self-attention blocks.  After ``insertion_layer``
blocks, linked spans pick up weighted entity embeddings and every token is
recontextualized against them before the remaining blocks run.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LinearMap, TransformerBlockParams, param, transformer_block
from .tensor import DimensionError, Tensor


@dataclass
class EncoderConfig:
    num_layers: int = 4
    insertion_layer: int = 3
    D: int = 64
    heads: int = 1
    vocab_size: int = 64
    max_seq_len: int = 64
    E: int = 300
    threshold: float = 0.03
    beta: float = 0.0

    def __post_init__(self):
        if not 1 <= self.insertion_layer <= self.num_layers:
            raise ValueError(f"insertion_layer must lie in [1, {self.num_layers}], got {self.insertion_layer}")
        if self.D % self.heads:
            raise ValueError(f"D={self.D} is not divisible by heads={self.heads}")


@dataclass
class KarcParams:
    proj: LinearMap  # H_i -> H_i^p
    span_block: TransformerBlockParams  # pooled spans -> S^e
    entity_proj: LinearMap  # E -> D
    recontext_block: TransformerBlockParams  # (H_i^p, S'^e, S'^e) -> H_i'^p
    fuse: LinearMap  # g
    threshold: float = 0.03
    beta: float = 0.0

    @classmethod
    def init(cls, rng: np.random.Generator, D: int, E: int, heads: int = 1,
             threshold: float = 0.03, beta: float = 0.0) -> "KarcParams":
        return cls(
            proj=LinearMap.init(rng, D, D),
            span_block=TransformerBlockParams.init(rng, D, heads),
            entity_proj=LinearMap.init(rng, E, D),
            recontext_block=TransformerBlockParams.init(rng, D, heads),
            fuse=LinearMap.init(rng, D, D),
            threshold=threshold,
            beta=beta,
        )


@dataclass
class EncoderParams:
    token_embedding: Tensor  # [vocab_size, D]
    position_embedding: Tensor  # [max_seq_len, D]
    layers: list  # TransformerBlockParams per layer
    karc: KarcParams | None

    @classmethod
    def init(cls, rng: np.random.Generator, config: EncoderConfig, with_karc: bool = True) -> "EncoderParams":
        return cls(
            token_embedding=param(rng.uniform(-1.0, 1.0, (config.vocab_size, config.D))),
            position_embedding=param(rng.uniform(-1.0, 1.0, (config.max_seq_len, config.D))),
            layers=[TransformerBlockParams.init(rng, config.D, config.heads) for _ in range(config.num_layers)],
            karc=KarcParams.init(rng, config.D, config.E, config.heads, config.threshold, config.beta)
            if with_karc else None,
        )


def span_pooling(spans, n_tokens: int) -> np.ndarray:
    """[n_spans x n_tokens] matrix averaging the word pieces of each span."""
    pool = np.zeros((len(spans), n_tokens))
    for s, (start, end) in enumerate(spans):
        if not 0 <= start < end <= n_tokens:
            raise ValueError(f"span ({start}, {end}) is out of range for {n_tokens} tokens")
        pool[s, start:end] = 1.0 / (end - start)
    return pool


def candidate_layout(candidate_sets, E: int) -> tuple:
    """Flatten candidates: (embeddings [total x E], index [n_spans x Cmax], priors [n_spans x Cmax]).

    Padding slots carry index -1.
    """
    cmax = max((len(cs) for cs in candidate_sets), default=0)
    index = np.full((len(candidate_sets), cmax), -1, dtype=np.int64)
    priors = np.zeros((len(candidate_sets), cmax))
    embs = []
    for s, cs in enumerate(candidate_sets):
        for c, (_, prior, emb) in enumerate(cs.candidates):
            if emb.shape[0] != E:
                raise DimensionError(f"candidate embedding has dim {emb.shape[0]}, expected {E}")
            index[s, c] = len(embs)
            priors[s, c] = prior
            embs.append(emb)
    embeddings = np.stack(embs) if embs else np.zeros((0, E))
    return embeddings, index, priors


def karc_forward(params: KarcParams, H: Tensor, candidate_sets, trace: dict | None = None) -> Tensor:
    """Inject linked entity knowledge into token features ``H`` [N x D].

    With no candidate sets the input comes back unchanged.  ``trace``, when
    given, receives the intermediate tensors by name.
    """
    if not candidate_sets:
        return H
    n = H.shape[0]
    pool = span_pooling([cs.span for cs in candidate_sets], n)
    Hp = params.proj(H)
    spans = T.matmul(Tensor(pool), Hp)
    Se = transformer_block(params.span_block, spans, spans, spans)

    embeddings, index, priors = candidate_layout(candidate_sets, params.entity_proj.in_dim)
    ent = params.entity_proj(Tensor(embeddings))  # [total x D]
    scores = Tensor(priors)
    if params.beta:
        affinity = T.pick(T.matmul(spans, T.transpose(ent)), index)
        scores = T.add(scores, T.scale(affinity, params.beta))
    keep = (index >= 0) & (scores.data >= params.threshold)
    weights = T.softmax_rows(scores, keep)
    F = T.matmul(T.spread(weights, index, embeddings.shape[0]), ent)

    Se2 = T.add(Se, F)
    Hp2 = transformer_block(params.recontext_block, Hp, Se2, Se2)
    out = T.add(params.fuse(Hp2), H)
    if trace is not None:
        trace.update(Hp=Hp, spans=spans, Se=Se, weights=weights, F=F, Se2=Se2, Hp2=Hp2, out=out)
    return out


def embed_tokens(config: EncoderConfig, params: EncoderParams, token_ids) -> Tensor:
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ValueError(f"token id out of range for vocab_size {config.vocab_size}")
    if ids.size > config.max_seq_len:
        raise ValueError(f"sequence of {ids.size} tokens exceeds max_seq_len {config.max_seq_len}")
    return T.add(T.rows(params.token_embedding, ids), T.rows(params.position_embedding, np.arange(ids.size)))


def encode(config: EncoderConfig, params: EncoderParams, seq, candidate_sets=()) -> Tensor:
    """Knowledge-enhanced per-token features [N x D] for a token sequence."""
    x = embed_tokens(config, params, seq.token_ids)
    if x.shape[0] == 0:
        return Tensor(np.zeros((0, config.D)))
    for depth, layer in enumerate(params.layers, 1):
        x = transformer_block(layer, x, x, x)
        if depth == config.insertion_layer and params.karc is not None:
            x = karc_forward(params.karc, x, candidate_sets)
    return x
