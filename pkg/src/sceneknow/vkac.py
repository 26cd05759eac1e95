"""Visual-knowledge attention, the concat classifier and its loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import LinearMap
from .tensor import DimensionError, Tensor

PROB_FLOOR = 1e-12


@dataclass
class VkacParams:
    theta: LinearMap  # query projection of f_v
    phi: LinearMap  # key projection of H
    psi: LinearMap  # value projection of H
    kappa: LinearMap  # residual branch

    @classmethod
    def init(cls, rng: np.random.Generator, D: int) -> "VkacParams":
        return cls(*(LinearMap.init(rng, D, D) for _ in range(4)))

    @property
    def dim(self) -> int:
        return self.theta.in_dim


@dataclass
class ClassifierParams:
    fc: LinearMap  # [2D -> M]

    @classmethod
    def init(cls, rng: np.random.Generator, D: int, M: int) -> "ClassifierParams":
        return cls(LinearMap.init(rng, 2 * D, M))

    @property
    def num_classes(self) -> int:
        return self.fc.out_dim


def vkac(params: VkacParams, f_v: Tensor, H: Tensor, trace: dict | None = None) -> Tensor:
    """Pool knowledge features H [N x D] with f_v [1 x D] as the query -> [1 x D].

    With no knowledge features (N = 0) the result is the zero vector.
    """
    d = params.dim
    if f_v.shape != (1, d):
        raise DimensionError(f"f_v must be [1 x {d}], got {f_v.shape}")
    if H.data.ndim != 2 or H.shape[1] != d:
        raise DimensionError(f"H must be [N x {d}], got {H.shape}")
    if H.shape[0] == 0:
        return Tensor(np.zeros((1, d)))
    sim = T.matmul(params.theta(f_v), T.transpose(params.phi(H)))
    W = T.softmax_rows(T.scale(sim, 1.0 / math.sqrt(d)))
    H_att = T.matmul(W, params.psi(H))
    H_out = T.add(params.kappa(H_att), H_att)
    if trace is not None:
        trace.update(W=W, H_att=H_att, H_out=H_out)
    return H_out


def logits(params: ClassifierParams, f_v: Tensor, h_out: Tensor) -> Tensor:
    if f_v.shape[1] + h_out.shape[1] != params.fc.in_dim or f_v.shape[0] != h_out.shape[0]:
        raise DimensionError(f"cannot classify f_v {f_v.shape} with h_out {h_out.shape}; "
                             f"classifier expects {params.fc.in_dim} inputs")
    return params.fc(T.concat([f_v, h_out], axis=1))


def classify(params: ClassifierParams, f_v: Tensor, h_out: Tensor) -> Tensor:
    """Class probabilities [1 x M] from the concatenated features."""
    return T.softmax_rows(logits(params, f_v, h_out))


def loss(p: Tensor, y: int, scaled: bool = True) -> Tensor:
    """-(1/M) log p_y; ``scaled=False`` drops the 1/M for plain cross-entropy."""
    m = p.shape[1]
    if not 0 <= y < m:
        raise ValueError(f"label {y} outside [0, {m})")
    p_y = T.clamp_min(T.rows(T.transpose(p), [y]), PROB_FLOOR)
    return T.scale(T.reshape(T.log(p_y), ()), -(1.0 / m if scaled else 1.0))
