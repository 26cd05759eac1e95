"""Optimisation (AdamW + warmup + cosine warm restarts), training loops and mAP."""
from __future__ import annotations

import dataclasses
import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import (Knowledge, Model, add_branch_heads, forward, mean_rows, prepare,
                    sample_loss, save_checkpoint, text_features, visual_feature)
from .nn import named_parameters
from .vkac import loss as class_loss


@dataclass
class OptimConfig:
    learning_rate: float = 3e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_iters: int | None = 500  # None -> scaled from the paper's 500 by dataset size
    restart_period: int | None = None  # T0 in steps; None -> one epoch
    restart_mult: int = 2
    epochs: int = 10
    batch_size: int = 8
    paper_steps_per_epoch: int = 1000

    def __post_init__(self):
        for name in ("learning_rate", "beta1", "beta2", "eps", "epochs", "batch_size", "restart_mult"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.warmup_iters is not None and self.warmup_iters < 1:
            raise ValueError("warmup_iters must be >= 1")

    def resolved(self, steps_per_epoch: int) -> "OptimConfig":
        """Fill in warmup / restart period from the number of steps per epoch."""
        warmup = self.warmup_iters
        if warmup is None:
            warmup = max(10, round(500 * steps_per_epoch / self.paper_steps_per_epoch))
        period = self.restart_period if self.restart_period is not None else max(1, steps_per_epoch)
        return dataclasses.replace(self, warmup_iters=warmup, restart_period=period)


@dataclass
class TrainState:
    step: int = 0
    lr: float = 0.0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def lr_at(step: int, config: OptimConfig) -> float:
    """Linear warmup to the base rate, then cosine annealing with warm restarts."""
    base, warmup = config.learning_rate, config.warmup_iters
    if step < warmup:
        return base * step / warmup
    t, period = step - warmup, config.restart_period
    while t >= period:
        t -= period
        period *= config.restart_mult
    return base * 0.5 * (1.0 + math.cos(math.pi * t / period))


def adamw_step(state: TrainState, params, grads, config: OptimConfig) -> None:
    """One decoupled-weight-decay Adam update, in place, at learning rate ``state.lr``.

    ``params`` is a list of (name, Tensor); ``grads`` the matching arrays
    (None means zero gradient).
    """
    for (name, p), g in zip(params, grads):
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r} at step {state.step}")
    state.step += 1
    b1, b2, lr = config.beta1, config.beta2, state.lr
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for (name, p), g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay:
            p.data *= 1.0 - lr * config.weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


# -- evaluation ---------------------------------------------------------------------

def average_precision(scores, relevant) -> float:
    """Mean of precision@k over the ranks k of relevant items.

    Ranking is by descending score, ties broken by ascending index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=bool)
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = relevant[order]
    if not hits.any():
        return float("nan")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def map_from_scores(scores: np.ndarray, labels) -> tuple:
    """(per-class AP list, mAP); classes without positives get NaN and are skipped."""
    labels = np.asarray(labels)
    aps = []
    for m in range(scores.shape[1]):
        if not np.any(labels == m):
            warnings.warn(f"class {m} has no positive samples; excluded from mAP", stacklevel=2)
            aps.append(float("nan"))
            continue
        aps.append(average_precision(scores[:, m], labels == m))
    valid = [a for a in aps if not math.isnan(a)]
    return aps, (float(np.mean(valid)) if valid else float("nan"))


def predict(model: Model, knowledge: Knowledge | None, dataset) -> np.ndarray:
    """[n_samples x M] class probabilities in evaluation mode."""
    out = np.zeros((len(dataset), model.config.M))
    with T.no_grad():
        for i, sample in enumerate(dataset):
            out[i] = forward(model, prepare(sample, model.config, knowledge, index=i)).data[0]
    return out


def evaluate_map(model: Model, knowledge: Knowledge | None, dataset) -> tuple:
    scores = predict(model, knowledge, dataset)
    return map_from_scores(scores, [s.label for s in dataset])


def accuracy(model: Model, knowledge: Knowledge | None, dataset) -> float:
    scores = predict(model, knowledge, dataset)
    return float(np.mean(np.argmax(scores, axis=1) == np.array([s.label for s in dataset])))


# -- training -----------------------------------------------------------------------

@dataclass
class TrainResult:
    model: Model
    metrics: list
    state: TrainState


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for lo in range(0, n, size):
        yield order[lo:lo + size]


def run_epochs(model: Model, knowledge: Knowledge | None, params, loss_fn, dataset, optim: OptimConfig, seed: int,
               evaluate=None, log_path=None, checkpoint_path=None, state: TrainState | None = None,
               stage: str | None = None) -> tuple:
    """Generic loop: ``loss_fn(prepared) -> scalar Tensor`` minimised over ``params``.

    Model parameters not listed in ``params`` are held constant.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    trainable = {id(p) for _, p in params}
    frozen = [p for _, p in named_parameters(model) if id(p) not in trainable]
    for p in frozen:
        p.requires_grad = False
    try:
        return _run_epochs(model, knowledge, params, loss_fn, dataset, optim, seed, evaluate, log_path,
                           checkpoint_path, state, stage)
    finally:
        for p in frozen:
            p.requires_grad = True


def _run_epochs(model, knowledge, params, loss_fn, dataset, optim, seed, evaluate, log_path,
                checkpoint_path, state, stage):
    rng = np.random.default_rng(seed)
    steps_per_epoch = math.ceil(len(dataset) / optim.batch_size)
    cfg = optim.resolved(steps_per_epoch)
    state = state or TrainState()
    metrics = []
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for batch in _batches(len(dataset), cfg.batch_size, rng):
            for _, p in params:
                p.grad = None
            seeds = rng.integers(0, 2 ** 31, size=len(batch))
            total = None
            for i, s in zip(batch, seeds):
                prep = prepare(dataset[i], model.config, knowledge, train=True, seed=int(s), index=int(i))
                term = loss_fn(prep)
                total = term if total is None else T.add(total, term)
            batch_loss = T.scale(total, 1.0 / len(batch))
            T.backward(batch_loss)
            state.lr = lr_at(state.step, cfg)
            adamw_step(state, params, [p.grad for _, p in params], cfg)
            losses.append(batch_loss.item())
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if stage:
            record["stage"] = stage
        if evaluate is not None:
            aps, mean_ap = evaluate()
            record.update(eval_map=mean_ap, per_class_ap=aps)
        metrics.append(record)
        if log_path:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if checkpoint_path:
            save_checkpoint(model, checkpoint_path)
    return metrics, state


def _prepare_outputs(out_dir):
    if not out_dir:
        return None, None
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "metrics.jsonl")
    open(log_path, "w").close()
    return log_path, os.path.join(out_dir, "checkpoint.tsv")


def train(model: Model, knowledge: Knowledge | None, dataset, optim: OptimConfig, seed: int = 0,
          eval_set=None, out_dir=None) -> TrainResult:
    """Jointly optimise every parameter of ``model`` end to end."""
    log_path, ckpt = _prepare_outputs(out_dir)
    evaluate = (lambda: evaluate_map(model, knowledge, eval_set)) if eval_set else None
    params = named_parameters(model)
    objective = lambda prep: sample_loss(model, prep)  # noqa: E731
    metrics, state = run_epochs(model, knowledge, params, objective, dataset, optim, seed, evaluate,
                                log_path, ckpt)
    return TrainResult(model, metrics, state)


def train_separate(model: Model, knowledge: Knowledge | None, dataset, optim: OptimConfig, seed: int = 0,
                   eval_set=None, out_dir=None) -> TrainResult:
    """Two-stage regime: branches trained alone on the labels, then frozen.

    Stage 1 fits the text branch (mean-pooled features -> linear head) and,
    when images are encoded, the vision branch (f_v -> linear head).  Stage 2
    freezes both and fits only the attention pooling and the classifier.
    """
    log_path, ckpt = _prepare_outputs(out_dir)
    cfg = model.config
    if not model.heads:
        add_branch_heads(model, seed)
    metrics = []
    if model.text is not None or model.token_table is not None:
        def text_loss(prep):
            logits = model.heads["text"](mean_rows(text_features(model, prep)))
            return class_loss(T.softmax_rows(logits), prep.label, cfg.scaled_loss)

        params = named_parameters(model.text if model.text is not None else model.token_table, "text")
        params += named_parameters(model.heads["text"], "heads.text")
        m, _ = run_epochs(model, knowledge, params, text_loss, dataset, optim, seed,
                          log_path=log_path, stage="text")
        metrics += m
    if model.vision is not None:
        def vision_loss(prep):
            logits = model.heads["vision"](visual_feature(model, prep))
            return class_loss(T.softmax_rows(logits), prep.label, cfg.scaled_loss)

        params = named_parameters(model.vision, "vision") + named_parameters(model.heads["vision"], "heads.vision")
        m, _ = run_epochs(model, knowledge, params, vision_loss, dataset, optim, seed + 1,
                          log_path=log_path, stage="vision")
        metrics += m
    evaluate = (lambda: evaluate_map(model, knowledge, eval_set)) if eval_set else None
    params = named_parameters(model.classifier, "classifier")
    if model.vkac is not None:
        params += named_parameters(model.vkac, "vkac")
    objective = lambda prep: sample_loss(model, prep)  # noqa: E731
    m, state = run_epochs(model, knowledge, params, objective, dataset, optim, seed + 2, evaluate, log_path, ckpt,
                          stage="fusion")
    return TrainResult(model, metrics + m, state)
