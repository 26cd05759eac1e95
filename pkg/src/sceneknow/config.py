"""Run configuration: one JSON key/value tree holding every tunable default.

Layout::

    {
      "seed": 0,
      "regime": "joint",            # or "separate" (frozen branches, two stages)
      "out_dir": "run",
      "data": {"train": ..., "eval": ..., "kb": ..., "vocab": ...},
      "model": {... ModelConfig fields ...},
      "optim": {... OptimConfig fields ...},
      "synth": {... SynthSpec fields ...}
    }

Relative paths are resolved against the directory holding the file.
Overrides use dotted keys, ``optim.epochs=5``; the value is parsed as JSON
when it parses and kept as a string otherwise.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import os

from .model import ModelConfig
from .synth import SynthSpec
from .train import OptimConfig

REGIMES = ("joint", "separate")
PATH_KEYS = ("train", "eval", "kb", "vocab")


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    return {
        "seed": 0,
        "regime": "joint",
        "out_dir": "run",
        "data": {k: None for k in PATH_KEYS},
        "model": dataclasses.asdict(ModelConfig()),
        "optim": dataclasses.asdict(OptimConfig()),
        "synth": dataclasses.asdict(SynthSpec()),
    }


def _merge(base: dict, update: dict, where: str) -> None:
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be a mapping")
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    cfg = default_config()
    base_dir = os.getcwd()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                tree = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, tree, "")
        base_dir = os.path.dirname(os.path.abspath(path))
    for item in overrides:
        apply_override(cfg, item)
    for key in PATH_KEYS:
        if cfg["data"][key] is not None:
            cfg["data"][key] = os.path.join(base_dir, cfg["data"][key])
    if cfg["out_dir"] is not None:
        cfg["out_dir"] = os.path.join(base_dir, cfg["out_dir"])
    if cfg["regime"] not in REGIMES:
        raise ConfigError(f"regime must be one of {REGIMES}, got {cfg['regime']!r}")
    return cfg


def apply_override(cfg: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = {}
    parts = key.split(".")
    cursor = node
    for part in parts[:-1]:
        cursor = cursor.setdefault(part, {})
    cursor[parts[-1]] = value
    _merge(cfg, node, "")


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(**cfg["model"])


def optim_config(cfg: dict) -> OptimConfig:
    return OptimConfig(**cfg["optim"])


def synth_spec(cfg: dict) -> SynthSpec:
    return SynthSpec(**cfg["synth"])


def save_config(cfg: dict, path) -> None:
    """Write ``cfg`` with data paths and out_dir made relative to the file's directory."""
    base = os.path.dirname(os.path.abspath(path))
    out = copy.deepcopy(cfg)
    for key in PATH_KEYS:
        if out["data"][key] is not None:
            out["data"][key] = os.path.relpath(os.path.abspath(out["data"][key]), base)
    if out["out_dir"] is not None:
        out["out_dir"] = os.path.relpath(os.path.abspath(out["out_dir"]), base)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
