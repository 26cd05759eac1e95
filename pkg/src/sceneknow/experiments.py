"""Desk-scale experiment recipes shared by the acceptance suite and the demos.

The model variants mirror the ablation arms: ``no_karc`` is the encoder
with mean pooling, ``karc_only`` adds knowledge but keeps mean pooling,
``full`` adds knowledge and visual-query pooling.  ``literal`` swaps the
encoder for a static token-embedding table.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .model import ModelConfig, init_model
from .synth import SynthData, SynthSpec, generate
from .train import OptimConfig, accuracy, evaluate_map, train, train_separate

VARIANTS = {
    "no_karc": dict(text_mode="encoder", use_vkac=False),
    "karc_only": dict(text_mode="knowledge", use_vkac=False),
    "full": dict(text_mode="knowledge", use_vkac=True),
    "literal": dict(text_mode="literal", use_vkac=True),
}

# warmup scales with dataset size; 1 + 2 + 4 + 8 + 16 = 31 epochs ends on a restart boundary
TOY_OPTIM = OptimConfig(learning_rate=2e-3, warmup_iters=None, epochs=15)
ABLATION_OPTIM = dataclasses.replace(TOY_OPTIM, epochs=31)

KNOWLEDGE_TASK = SynthSpec(alpha=0.0)
ABLATION_TASK = SynthSpec(alpha=0.3, texts_per_sample=2, distractors_per_sample=2)


def toy_model_config(data: SynthData, spec: SynthSpec, variant: str = "full") -> ModelConfig:
    return ModelConfig(M=spec.M, D=spec.D, E=spec.E, num_layers=2, insertion_layer=1, vocab_size=len(data.vocab),
                       max_seq_len=32, C=8, **VARIANTS[variant])


@dataclass
class RunResult:
    variant: str
    seed: int
    map: float
    accuracy: float
    final_loss: float


def run_variant(spec: SynthSpec, variant: str, seed: int, optim: OptimConfig = TOY_OPTIM,
                separate: bool = False, data: SynthData | None = None) -> RunResult:
    """Generate the task for ``seed`` (unless given), train one variant, score it on the eval split."""
    spec = dataclasses.replace(spec, seed=seed)
    data = data if data is not None else generate(spec)
    model = init_model(toy_model_config(data, spec, variant), seed)
    fit = train_separate if separate else train
    result = fit(model, data.knowledge, data.train, optim, seed)
    _, mean_ap = evaluate_map(model, data.knowledge, data.eval)
    return RunResult(variant + ("+separate" if separate else ""), seed, mean_ap,
                     accuracy(model, data.knowledge, data.eval), result.metrics[-1]["train_loss"])
