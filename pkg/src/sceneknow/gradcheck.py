"""Finite-difference verification of every analytic gradient, module by module."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import Sample
from .kb import CandidateSet
from .karc import EncoderConfig, EncoderParams, encode, karc_forward
from .model import Knowledge, ModelConfig, init_model, prepare, sample_loss
from .nn import TransformerBlockParams, named_parameters, transformer_block
from .tensor import Tensor
from .text import TextInstance, TokenSequence, build_vocab
from .vision import VisionConfig, VisionParams, encode_image
from .vkac import ClassifierParams, VkacParams, classify, logits, loss, vkac

DENOM_FLOOR = 1e-4


def relative_error(analytic, numeric) -> float:
    """||a - n|| / max(||a||, ||n||, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), DENOM_FLOOR)
    return float(np.linalg.norm(a - n) / scale)


def check_parameters(objective, params, h: float = 1e-5) -> dict:
    """Relative error per named parameter for a no-argument scalar ``objective``."""
    for _, p in params:
        p.grad = None
    T.backward(objective())
    errors = {}
    for name, p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = T.finite_diff_grad(lambda _: objective(), p, h)
        errors[name] = relative_error(analytic, numeric)
    return errors


def _probe(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _random_candidates(rng, spans, E: int, C: int = 3) -> list:
    sets = []
    for s, span in enumerate(spans):
        n = int(rng.integers(1, C + 1))
        priors = np.sort(rng.uniform(0.05, 0.9, size=n))[::-1]
        sets.append(CandidateSet(span, f"m{s}", [(f"e{s}_{c}", float(priors[c]), rng.uniform(-1, 1, E))
                                                 for c in range(n)]))
    return sets


def check_numeric_core(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    block = TransformerBlockParams.init(rng, 8, 2)
    q = Tensor(rng.uniform(-1, 1, (3, 8)), requires_grad=True)
    kv = Tensor(rng.uniform(-1, 1, (4, 8)), requires_grad=True)
    probe = _probe(rng, (3, 8))

    def objective():
        return T.sum(T.mul(transformer_block(block, q, kv, kv), probe))

    return check_parameters(objective, named_parameters(block, "block") + [("query", q), ("keyvalue", kv)])


def check_encoder_karc(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(num_layers=2, insertion_layer=1, D=4, heads=1, vocab_size=12, max_seq_len=8, E=6,
                        threshold=0.03, beta=0.5)
    params = EncoderParams.init(rng, cfg)
    seq = TokenSequence(list(rng.integers(0, 12, size=6)), [(0, 0, 2), (1, 2, 3), (2, 3, 6)], ["a", "b", "c"])
    cands = _random_candidates(rng, [(0, 2), (3, 6)], cfg.E)
    probe = _probe(rng, (6, cfg.D))

    def objective():
        return T.sum(T.mul(encode(cfg, params, seq, cands), probe))

    errors = check_parameters(objective, named_parameters(params, "encoder"))
    # the KARC step on its own, including the input features
    H = Tensor(rng.uniform(-1, 1, (6, cfg.D)), requires_grad=True)
    errors.update({f"karc_input.{k}": v for k, v in check_parameters(
        lambda: T.sum(T.mul(karc_forward(params.karc, H, cands), probe)), [("H", H)]).items()})
    return errors


def check_vision(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    cfg = VisionConfig(input_size=8, patch_size=4, layers=1, D=8, heads=2)
    params = VisionParams.init(rng, cfg)
    img = rng.uniform(-1, 1, (8, 8, 3))
    probe = _probe(rng, (1, 8))

    def objective():
        return T.sum(T.mul(encode_image(cfg, params, img), probe))

    return check_parameters(objective, named_parameters(params, "vision"))


def check_vkac_classifier(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    D, M = 6, 4
    vp, cp = VkacParams.init(rng, D), ClassifierParams.init(rng, D, M)
    f_v = Tensor(rng.uniform(-1, 1, (1, D)), requires_grad=True)
    H = Tensor(rng.uniform(-1, 1, (5, D)), requires_grad=True)
    y = int(rng.integers(0, M))

    def objective():
        return loss(classify(cp, f_v, vkac(vp, f_v, H)), y)

    params = named_parameters(vp, "vkac") + named_parameters(cp, "classifier") + [("f_v", f_v), ("H", H)]
    errors = check_parameters(objective, params)
    z = Tensor(rng.uniform(-2, 2, (1, M)), requires_grad=True)
    errors.update(check_parameters(lambda: loss(T.softmax_rows(z), y), [("logits", z)]))
    return errors


def check_full_stack(seed: int) -> dict:
    """Loss of the complete model (images, KARC, VKAC, classifier) w.r.t. every parameter."""
    rng = np.random.default_rng(seed)
    vocab = build_vocab(["soda", "len", "cola"], ["##in", "##ade"])
    from .kb import EntityRecord, KnowledgeBase, MentionPriorTable

    E = 5
    kb = KnowledgeBase([EntityRecord(f"e{i}", f"e{i}", rng.uniform(-1, 1, E)) for i in range(4)])
    table = MentionPriorTable({"soda": [("e0", 0.7), ("e1", 0.2)], "leninade": [("e2", 0.9)],
                               "cola": [("e3", 0.5), ("e1", 0.4)]})
    cfg = ModelConfig(M=3, D=4, E=E, num_layers=2, insertion_layer=1, heads=1, vocab_size=len(vocab),
                      max_seq_len=8, C=2, input_size=8, patch_size=4, vision_layers=1, use_precomputed=False)
    model = init_model(cfg, seed)
    sample = Sample(rng.uniform(0, 1, (10, 12, 3)),
                    [TextInstance("leninade", 0), TextInstance("soda", 1), TextInstance("cola", 2)], 1, "image")
    prep = prepare(sample, cfg, Knowledge(vocab, kb, table))
    return check_parameters(lambda: sample_loss(model, prep), model.parameters())


SUITES = {
    "numeric-core": check_numeric_core,
    "encoder-karc": check_encoder_karc,
    "vision-encoder": check_vision,
    "vkac-classifier": check_vkac_classifier,
    "full-stack": check_full_stack,
}


def run_gradcheck(seeds=(0, 1, 2)) -> dict:
    """Maximum relative error per module over ``seeds``."""
    worst = {}
    for module, fn in SUITES.items():
        worst[module] = max(max(fn(seed).values()) for seed in seeds)
    return worst
