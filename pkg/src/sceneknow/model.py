"""The full classifier: visual branch, text/knowledge branch, pooling and head.

``ModelConfig.text_mode`` selects the text branch:

``knowledge``  encoder stack with the knowledge step inserted (the full model)
``encoder``    the same encoder stack without knowledge
``literal``    a static token-embedding table, no encoder, no knowledge
``none``       no text branch at all

``use_vkac`` switches between visual-query attention pooling and a plain
mean over token features.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .kb import FormatError, KnowledgeBase, MentionPriorTable, fmt
from .karc import EncoderConfig, EncoderParams, encode
from .nn import LinearMap, named_parameters, param
from .tensor import DimensionError, Tensor
from .text import Vocab, prepare_text
from .vision import VisionConfig, VisionParams, encode_image, preprocess_eval, preprocess_train
from .vkac import ClassifierParams, VkacParams, classify, loss, vkac

TEXT_MODES = ("knowledge", "encoder", "literal", "none")


@dataclass
class ModelConfig:
    M: int = 4
    D: int = 64
    E: int = 300
    num_layers: int = 4
    insertion_layer: int = 3
    heads: int = 1
    vocab_size: int = 64
    max_seq_len: int = 64
    C: int = 8
    threshold: float = 0.03
    beta: float = 0.0
    input_size: int = 224
    patch_size: int = 32
    vision_layers: int = 2
    use_precomputed: bool = True
    text_mode: str = "knowledge"
    use_vkac: bool = True
    scaled_loss: bool = True

    def __post_init__(self):
        if self.text_mode not in TEXT_MODES:
            raise ValueError(f"text_mode must be one of {TEXT_MODES}, got {self.text_mode!r}")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.num_layers, self.insertion_layer, self.D, self.heads, self.vocab_size,
                             self.max_seq_len, self.E, self.threshold, self.beta)

    def vision_config(self) -> VisionConfig:
        return VisionConfig(self.input_size, self.patch_size, self.vision_layers, self.D, self.heads,
                            self.use_precomputed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class Model:
    config: ModelConfig
    text: EncoderParams | None = None
    token_table: Tensor | None = None  # literal mode only
    vision: VisionParams | None = None
    vkac: VkacParams | None = None
    classifier: ClassifierParams | None = None
    heads: dict = field(default_factory=dict)  # auxiliary single-branch heads for two-stage training

    def parameters(self) -> list:
        return named_parameters(self)


@dataclass
class Knowledge:
    """Everything the text branch needs besides parameters."""

    vocab: Vocab
    kb: KnowledgeBase
    table: MentionPriorTable


def init_model(config: ModelConfig, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    model = Model(config)
    if config.text_mode in ("knowledge", "encoder"):
        model.text = EncoderParams.init(rng, config.encoder_config(), with_karc=config.text_mode == "knowledge")
    elif config.text_mode == "literal":
        model.token_table = param(rng.uniform(-1.0, 1.0, (config.vocab_size, config.D)))
    if not config.use_precomputed:
        model.vision = VisionParams.init(rng, config.vision_config())
    if config.use_vkac and config.text_mode != "none":
        model.vkac = VkacParams.init(rng, config.D)
    model.classifier = ClassifierParams.init(rng, config.D, config.M)
    return model


def add_branch_heads(model: Model, seed: int = 0) -> None:
    """Attach text-only and vision-only linear heads used by separate training."""
    rng = np.random.default_rng(seed + 7919)
    model.heads = {"text": LinearMap.init(rng, model.config.D, model.config.M),
                   "vision": LinearMap.init(rng, model.config.D, model.config.M)}


# -- per-sample forward -------------------------------------------------------------

@dataclass
class Prepared:
    visual: np.ndarray
    seq: object
    candidate_sets: list
    label: int


def prepare(sample, config: ModelConfig, knowledge: Knowledge | None, train: bool = False, seed=None,
            index: int | None = None) -> Prepared:
    """Apply preprocessing / augmentation and the text pipeline to one sample."""
    where = f"sample {index}: " if index is not None else ""
    visual = sample.load_visual()
    if config.use_precomputed:
        if sample.visual_mode != "feature" or visual.size != config.D:
            raise DimensionError(f"{where}expected a precomputed feature of {config.D} values, "
                                 f"got {sample.visual_mode} of shape {visual.shape}")
        visual = visual.reshape(1, config.D)
    else:
        if sample.visual_mode != "image":
            raise DimensionError(f"{where}model expects images but sample carries a {sample.visual_mode}")
        visual = preprocess_train(visual, seed, config.input_size) if train else preprocess_eval(
            visual, config.input_size)
    if not 0 <= sample.label < config.M:
        raise ValueError(f"{where}label {sample.label} outside [0, {config.M})")
    seq, cands = None, []
    if config.text_mode != "none":
        seq, cands = prepare_text(sample.texts, knowledge.vocab, knowledge.table, knowledge.kb, config.C,
                                  shuffle=train, seed=seed)
        if len(seq) > config.max_seq_len:
            raise ValueError(f"{where}{len(seq)} tokens exceed max_seq_len {config.max_seq_len}")
        if cands and cands[0].candidates and cands[0].candidates[0][2].shape[0] != config.E:
            raise DimensionError(f"{where}entity embeddings have dim "
                                 f"{cands[0].candidates[0][2].shape[0]}, model expects E={config.E}")
    return Prepared(visual, seq, cands, int(sample.label))


def visual_feature(model: Model, prep: Prepared) -> Tensor:
    return encode_image(model.config.vision_config(), model.vision, prep.visual)


def text_features(model: Model, prep: Prepared) -> Tensor:
    """Per-token features H [N x D] (N may be 0)."""
    cfg = model.config
    if cfg.text_mode == "literal":
        ids = np.asarray(prep.seq.token_ids, dtype=np.int64)
        if ids.size == 0:
            return Tensor(np.zeros((0, cfg.D)))
        return T.rows(model.token_table, ids)
    return encode(cfg.encoder_config(), model.text, prep.seq, prep.candidate_sets)


def mean_rows(H: Tensor) -> Tensor:
    if H.shape[0] == 0:
        return Tensor(np.zeros((1, H.shape[1])))
    return T.matmul(Tensor(np.full((1, H.shape[0]), 1.0 / H.shape[0])), H)


def pooled_text(model: Model, f_v: Tensor, H: Tensor) -> Tensor:
    if model.config.use_vkac:
        return vkac(model.vkac, f_v, H)
    return mean_rows(H)


def forward(model: Model, prep: Prepared) -> Tensor:
    """Class probabilities [1 x M] for one prepared sample."""
    f_v = visual_feature(model, prep)
    if model.config.text_mode == "none":
        h = Tensor(np.zeros((1, model.config.D)))
    else:
        h = pooled_text(model, f_v, text_features(model, prep))
    return classify(model.classifier, f_v, h)


def sample_loss(model: Model, prep: Prepared) -> Tensor:
    return loss(forward(model, prep), prep.label, model.config.scaled_loss)


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    """Header line with JSON config, then ``name  shape  v_1 ... v_n`` per parameter."""
    header = {"model": model.config.to_dict(), "heads": sorted(model.heads)}
    if extra:
        header.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#config\t" + json.dumps(header, sort_keys=True) + "\n")
        for name, p in model.parameters():
            shape = ",".join(str(n) for n in p.shape)
            fh.write("\t".join([name, shape] + [fmt(v) for v in p.data.reshape(-1)]) + "\n")


def load_checkpoint(path) -> tuple:
    """Returns ``(model, header)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].startswith("#config\t"):
        raise FormatError(path, 1, "missing #config header")
    header = json.loads(lines[0].split("\t", 1)[1])
    model = init_model(ModelConfig.from_dict(header["model"]))
    if header.get("heads"):
        add_branch_heads(model)
    params = dict(model.parameters())
    seen = set()
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        cols = line.split("\t")
        name = cols[0]
        if name not in params:
            raise FormatError(path, lineno, f"unknown parameter {name!r}")
        shape = tuple(int(n) for n in cols[1].split(",") if n)
        if shape != params[name].shape:
            raise FormatError(path, lineno, f"{name}: shape {shape} does not match {params[name].shape}")
        try:
            values = np.array([float(v) for v in cols[2:]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(path, lineno, str(exc)) from None
        if values.size != params[name].size:
            raise FormatError(path, lineno, f"{name}: expected {params[name].size} values, got {values.size}")
        params[name].data[...] = values.reshape(shape)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise FormatError(path, len(lines), f"checkpoint lacks parameters {sorted(missing)[:5]}")
    return model, header
