"""Parameter containers and the attention block shared by every branch."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


def param(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def uniform_init(rng: np.random.Generator, in_dim: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(in_dim)
    return param(rng.uniform(-bound, bound, size=shape))


@dataclass
class LinearMap:
    weight: Tensor  # [in_dim, out_dim]
    bias: Tensor  # [out_dim]

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, out_dim: int) -> "LinearMap":
        return cls(uniform_init(rng, in_dim, (in_dim, out_dim)), uniform_init(rng, in_dim, (out_dim,)))

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int) -> "LinearMap":
        return cls(param(np.zeros((in_dim, out_dim))), param(np.zeros(out_dim)))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"linear map expects last dim {self.in_dim}, got shape {x.shape}")
        return T.add(T.matmul(x, self.weight), self.bias)


@dataclass
class LayerNormParams:
    gain: Tensor
    offset: Tensor

    @classmethod
    def init(cls, dim: int) -> "LayerNormParams":
        return cls(param(np.ones(dim)), param(np.zeros(dim)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.offset)


@dataclass
class TransformerBlockParams:
    """Post-norm attention block: LN(q + MHA(q, k, v)) then LN(x + FFN(x))."""

    query: list  # one LinearMap D -> D/heads per head
    key: list
    value: list
    output: LinearMap
    ff_in: LinearMap
    ff_out: LinearMap
    norm_attn: LayerNormParams
    norm_ff: LayerNormParams

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, heads: int = 1, ff_mult: int = 4):
        if dim % heads:
            raise DimensionError(f"model dim {dim} is not divisible by {heads} heads")
        hd = dim // heads
        return cls(
            query=[LinearMap.init(rng, dim, hd) for _ in range(heads)],
            key=[LinearMap.init(rng, dim, hd) for _ in range(heads)],
            value=[LinearMap.init(rng, dim, hd) for _ in range(heads)],
            output=LinearMap.init(rng, dim, dim),
            ff_in=LinearMap.init(rng, dim, ff_mult * dim),
            ff_out=LinearMap.init(rng, ff_mult * dim, dim),
            norm_attn=LayerNormParams.init(dim),
            norm_ff=LayerNormParams.init(dim),
        )

    @property
    def dim(self) -> int:
        return self.output.out_dim

    @property
    def heads(self) -> int:
        return len(self.query)


def transformer_block(params: TransformerBlockParams, q: Tensor, k: Tensor, v: Tensor,
                      attention: list | None = None) -> Tensor:
    """Multi-head scaled dot-product attention of ``q`` over ``(k, v)`` plus feed-forward.

    If ``attention`` is a list, each head's [a x b] weight matrix is appended to it.
    """
    d = params.dim
    for name, t in (("query", q), ("key", k), ("value", v)):
        if t.data.ndim != 2 or t.shape[1] != d:
            raise DimensionError(f"{name} must be [n x {d}], got shape {t.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"key and value lengths differ: {k.shape} vs {v.shape}")
    heads = []
    for wq, wk, wv in zip(params.query, params.key, params.value):
        qh, kh, vh = wq(q), wk(k), wv(v)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(qh.shape[1]))
        w = T.softmax_rows(scores)
        if attention is not None:
            attention.append(w.data)
        heads.append(T.matmul(w, vh))
    mixed = heads[0] if len(heads) == 1 else T.concat(heads, axis=1)
    x = params.norm_attn(T.add(q, params.output(mixed)))
    hidden = T.gelu(params.ff_in(x))
    return params.norm_ff(T.add(x, params.ff_out(hidden)))


def named_parameters(obj, prefix: str = "") -> list:
    """(dotted name, Tensor) for every trainable tensor reachable from ``obj``."""
    found = []
    if isinstance(obj, Tensor):
        if obj.requires_grad:
            found.append((prefix, obj))
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            found.extend(named_parameters(getattr(obj, f.name), _join(prefix, f.name)))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            found.extend(named_parameters(item, _join(prefix, str(i))))
    elif isinstance(obj, dict):
        for key in obj:
            found.extend(named_parameters(obj[key], _join(prefix, str(key))))
    return found


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def zero_grads(obj) -> None:
    for _, p in named_parameters(obj):
        p.grad = None


__all__ = [
    "LayerNormParams", "LinearMap", "TransformerBlockParams", "named_parameters",
    "param", "transformer_block", "uniform_init", "zero_grads",
]
