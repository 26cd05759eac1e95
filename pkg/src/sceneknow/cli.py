"""``sceneknow`` command line: synth, train, eval, link, gradcheck.

Results go to stdout, diagnostics to stderr.  Exit status is 0 on success,
1 on a runtime failure and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import config as cfgmod
from .gradcheck import SUITES, run_gradcheck
from .kb import load_kb, save_kb, select_candidates
from .data import load_dataset, save_dataset
from .model import Knowledge, init_model, load_checkpoint
from .synth import SynthSpec, generate
from .text import Vocab
from .train import evaluate_map, train, train_separate

GRADCHECK_TOLERANCE = 1e-4


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sceneknow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="write a synthetic dataset, KB, vocabulary and starter config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="take SynthSpec defaults from this config's 'synth' section")
    for f in dataclasses.fields(SynthSpec):
        kind = _bool if f.type in (bool, "bool") else (float if f.type in (float, "float") else int)
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. optim.epochs=5 (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("--out-dir", help="shorthand for --set out_dir=PATH")

    p = sub.add_parser("eval", help="print per-class AP and mAP of a checkpoint on a dataset")
    p.add_argument("--config", help="run config supplying data paths and the checkpoint location")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--checkpoint", help="defaults to <out_dir>/checkpoint.tsv from the config")
    p.add_argument("--data", help="dataset file; defaults to the config's data.eval")
    p.add_argument("--kb", help="KB directory; defaults to the config's data.kb")
    p.add_argument("--vocab", help="vocabulary file; defaults to the config's data.vocab")

    p = sub.add_parser("link", help="read mentions from stdin, print top-C candidates with priors")
    p.add_argument("--kb", required=True, help="KB directory (entities.tsv + priors.tsv)")
    p.add_argument("-C", type=int, default=8, help="candidates per mention (default 8)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every module's gradients")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    return parser


def _knowledge(model_cfg, kb_path, vocab_path):
    if model_cfg.text_mode == "none":
        return None
    if vocab_path is None:
        raise ValueError(f"text_mode {model_cfg.text_mode!r} needs a vocabulary file (data.vocab)")
    vocab = Vocab.load(vocab_path)
    if len(vocab) > model_cfg.vocab_size:
        raise ValueError(f"vocabulary has {len(vocab)} tokens but model.vocab_size is {model_cfg.vocab_size}")
    if model_cfg.text_mode == "knowledge":
        if kb_path is None:
            raise ValueError("text_mode 'knowledge' needs a KB directory (data.kb)")
        kb, table = load_kb(kb_path)
    else:
        from .kb import KnowledgeBase, MentionPriorTable

        kb, table = KnowledgeBase(), MentionPriorTable()
    return Knowledge(vocab, kb, table)


def cmd_synth(args) -> int:
    base = cfgmod.load_config(args.config) if args.config else cfgmod.default_config()
    values = dict(base["synth"])
    values.update({f.name: getattr(args, f.name) for f in dataclasses.fields(SynthSpec)
                   if getattr(args, f.name) is not None})
    spec = SynthSpec(**values)
    data = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(data.train, os.path.join(args.out, "train.tsv"))
    save_dataset(data.eval, os.path.join(args.out, "eval.tsv"))
    save_kb(data.kb, data.table, os.path.join(args.out, "kb"))
    data.vocab.save(os.path.join(args.out, "vocab.txt"))

    # a starter config sized for the generated task
    cfg = cfgmod.default_config()
    cfg["synth"] = dataclasses.asdict(spec)
    cfg["data"] = {k: os.path.join(args.out, name) for k, name in
                   (("train", "train.tsv"), ("eval", "eval.tsv"), ("kb", "kb"), ("vocab", "vocab.txt"))}
    cfg["out_dir"] = os.path.join(args.out, "run")
    cfg["model"].update(M=spec.M, D=spec.D, E=spec.E, vocab_size=len(data.vocab), num_layers=2,
                        insertion_layer=1, max_seq_len=32)
    cfg["optim"].update(learning_rate=2e-3, warmup_iters=None, epochs=15)
    cfg["seed"] = spec.seed
    cfgmod.save_config(cfg, os.path.join(args.out, "config.json"))
    print(f"wrote {len(data.train)} train / {len(data.eval)} eval samples, {len(data.kb)} entities "
          f"to {args.out}")
    return 0


def cmd_train(args) -> int:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out_dir is not None:
        overrides.append(f"out_dir={json.dumps(os.path.abspath(args.out_dir))}")
    cfg = cfgmod.load_config(args.config, overrides)
    if cfg["data"]["train"] is None:
        raise ValueError("config has no data.train")
    model_cfg, optim = cfgmod.model_config(cfg), cfgmod.optim_config(cfg)
    knowledge = _knowledge(model_cfg, cfg["data"]["kb"], cfg["data"]["vocab"])
    train_set = load_dataset(cfg["data"]["train"])
    eval_set = load_dataset(cfg["data"]["eval"]) if cfg["data"]["eval"] else None
    model = init_model(model_cfg, cfg["seed"])
    fit = train_separate if cfg["regime"] == "separate" else train
    result = fit(model, knowledge, train_set, optim, cfg["seed"], eval_set=eval_set, out_dir=cfg["out_dir"])
    cfgmod.save_config(cfg, os.path.join(cfg["out_dir"], "config.json"))
    last = result.metrics[-1]
    line = f"epochs {last['epoch']}\ttrain_loss {last['train_loss']:.6f}"
    if "eval_map" in last:
        line += f"\teval_map {last['eval_map']!r}"
    print(line)
    return 0


def cmd_eval(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set) if args.config else None
    data = cfg["data"] if cfg else {}
    checkpoint = args.checkpoint or (os.path.join(cfg["out_dir"], "checkpoint.tsv") if cfg else None)
    dataset = args.data or data.get("eval")
    if checkpoint is None or dataset is None:
        raise ValueError("eval needs a checkpoint and a dataset (pass --config or --checkpoint/--data)")
    model, _ = load_checkpoint(checkpoint)
    knowledge = _knowledge(model.config, args.kb or data.get("kb"), args.vocab or data.get("vocab"))
    aps, mean_ap = evaluate_map(model, knowledge, load_dataset(dataset))
    for m, ap in enumerate(aps):
        print(f"class {m}\tAP {ap!r}")
    print(f"mAP\t{mean_ap!r}")
    return 0


def cmd_link(args) -> int:
    if args.C < 1:
        raise ValueError(f"-C must be >= 1, got {args.C}")
    kb, table = load_kb(args.kb)
    for line in sys.stdin:
        mention = line.strip()
        if not mention:
            continue
        cands = select_candidates(table, kb, mention, args.C)
        if not cands.candidates:
            print(f"no candidates for {mention!r}", file=sys.stderr)
        for rank, (entity_id, prior, _) in enumerate(cands.candidates, 1):
            print(f"{cands.mention}\t{rank}\t{entity_id}\t{prior!r}")
    return 0


def cmd_gradcheck(args) -> int:
    worst = run_gradcheck(tuple(args.seeds))
    for module in SUITES:
        print(f"{module}\t{worst[module]:.3e}")
    bad = [m for m, e in worst.items() if not e < GRADCHECK_TOLERANCE]
    if bad:
        print(f"gradient check failed (relative error >= {GRADCHECK_TOLERANCE:g}): {', '.join(bad)}",
              file=sys.stderr)
        return 1
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "link": cmd_link,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"sceneknow {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
