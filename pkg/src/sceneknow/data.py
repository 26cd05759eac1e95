"""Samples and the line-delimited dataset file.

Each line is tab-separated::

    label  mode  payload  text_1  order_1  text_2  order_2 ...

``mode`` is ``feature`` (payload = space-separated feature values, 17
significant digits) or ``image`` (payload = PPM path, relative to the
dataset file unless absolute).  Text fields are backslash-escaped.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .kb import FormatError, escape, fmt, unescape
from .text import TextInstance
from .vision import read_ppm

VISUAL_MODES = ("feature", "image")


@dataclass
class Sample:
    visual: object  # np.ndarray feature/image, or str path for images on disk
    texts: list = field(default_factory=list)
    label: int = 0
    visual_mode: str = "feature"

    def load_visual(self) -> np.ndarray:
        if isinstance(self.visual, str):
            return read_ppm(self.visual)
        return np.asarray(self.visual, dtype=np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        if (self.label, self.visual_mode, self.texts) != (other.label, other.visual_mode, other.texts):
            return False
        if isinstance(self.visual, str) or isinstance(other.visual, str):
            return self.visual == other.visual
        a, b = np.asarray(self.visual), np.asarray(other.visual)
        return a.shape == b.shape and np.array_equal(a, b)


def save_dataset(samples, path) -> None:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            if s.visual_mode == "feature":
                payload = " ".join(fmt(v) for v in np.asarray(s.visual, dtype=np.float64).reshape(-1))
            elif isinstance(s.visual, str):
                payload = escape(os.path.relpath(s.visual, base) if os.path.isabs(s.visual) else s.visual)
            else:
                raise ValueError("image samples must reference a PPM path to be saved")
            cols = [str(int(s.label)), s.visual_mode, payload]
            for inst in s.texts:
                cols.extend((escape(inst.text), str(int(inst.spot_order))))
            fh.write("\t".join(cols) + "\n")


def load_dataset(path) -> list:
    base = os.path.dirname(os.path.abspath(path))
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) < 3 or len(cols) % 2 == 0:
                raise FormatError(path, lineno, "expected label, mode, payload and (text, order) pairs")
            label, mode, payload = cols[:3]
            if mode not in VISUAL_MODES:
                raise FormatError(path, lineno, f"unknown visual mode {mode!r}")
            try:
                label = int(label)
                texts = [TextInstance(unescape(cols[i]), int(cols[i + 1])) for i in range(3, len(cols), 2)]
                if mode == "feature":
                    visual = np.array([float(v) for v in payload.split(" ")] if payload else [])
                else:
                    rel = unescape(payload)
                    visual = rel if os.path.isabs(rel) else os.path.join(base, rel)
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
            samples.append(Sample(visual, texts, label, mode))
    return samples
