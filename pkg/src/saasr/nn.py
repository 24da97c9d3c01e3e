"""Transformer building blocks on top of the tensor engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (Tensor, gelu, getitem, matmul, reshape, softmax,
                     sqrt, tmean, transpose)


@dataclass
class Parameter:
    """A named trainable tensor; names are unique within a model."""
    name: str
    tensor: Tensor


@dataclass
class AttentionConfig:
    model_dim: int
    num_heads: int
    ff_dim: int

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by "
                f"num_heads {self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


class Module:
    """Container whose Tensor attributes (and sub-modules) are trainable."""

    def named_parameters(self, prefix: str = "") -> list[Parameter]:
        params = []
        for name, value in vars(self).items():
            path = f"{prefix}.{name}" if prefix else name
            if isinstance(value, Tensor):
                if value.requires_grad:
                    params.append(Parameter(path, value))
            elif isinstance(value, Module):
                params.extend(value.named_parameters(path))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.extend(item.named_parameters(f"{path}.{i}"))
        return params

    def parameters(self) -> list[Parameter]:
        params = self.named_parameters()
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in module tree")
        return params

    def zero_grad(self):
        for p in self.parameters():
            p.tensor.zero_grad()


def init_weight(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True):
        self.w = init_weight(rng, in_dim, (in_dim, out_dim))
        self.b = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.w)
        return out + self.b if self.b is not None else out


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        self.table = init_weight(rng, dim, (num_embeddings, dim))

    def __call__(self, ids) -> Tensor:
        return getitem(self.table, np.asarray(ids, dtype=np.intp))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gain.data.shape != x.data.shape[-1:] or bias.data.shape != x.data.shape[-1:]:
        raise ShapeError(
            f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match last dim of {x.data.shape}")
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gain + bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with distinct key/value sources allowed."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.model_dim
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor,
                 mask: np.ndarray | None = None) -> Tensor:
        d, h = self.cfg.model_dim, self.cfg.num_heads
        if q.data.shape[-1] != d or k.data.shape[-1] != d or v.data.shape[-1] != d:
            raise ShapeError(
                f"attention inputs must have model_dim {d}: "
                f"q {q.data.shape}, k {k.data.shape}, v {v.data.shape}")
        if k.data.shape[0] != v.data.shape[0]:
            raise ShapeError(
                f"key/value lengths differ: {k.data.shape} vs {v.data.shape}")
        lq, lk = q.data.shape[0], k.data.shape[0]
        hd = self.cfg.head_dim

        def split(x, length):
            return transpose(reshape(x, (length, h, hd)), (1, 0, 2))

        qh = split(self.wq(q), lq)            # h x lq x hd
        kh = split(self.wk(k), lk)
        vh = split(self.wv(v), lk)
        scores = matmul(qh, transpose(kh, (0, 2, 1))) * (1.0 / np.sqrt(hd))
        if mask is not None:
            scores = scores + Tensor(mask)    # broadcast over heads
        att = softmax(scores, axis=-1)
        ctx = matmul(att, vh)                 # h x lq x hd
        merged = reshape(transpose(ctx, (1, 0, 2)), (lq, d))
        return self.wo(merged)


class FeedForward(Module):
    """linear -> GELU -> linear."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.lin1 = Linear(cfg.model_dim, cfg.ff_dim, rng)
        self.lin2 = Linear(cfg.ff_dim, cfg.model_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.lin1.w.data.shape[0]:
            raise ShapeError(
                f"feed_forward expects last dim {self.lin1.w.data.shape[0]}, "
                f"got {x.data.shape}")
        return self.lin2(gelu(self.lin1(x)))


class EncoderLayer(Module):
    """Post-norm self-attention block."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.mha = MultiHeadAttention(cfg, rng)
        self.ff = FeedForward(cfg, rng)
        self.ln1 = LayerNorm(cfg.model_dim)
        self.ln2 = LayerNorm(cfg.model_dim)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.ln1(x + self.mha(x, x, x))
        return self.ln2(x + self.ff(x))


class DecoderLayer(Module):
    """Post-norm cross-attention block, optionally with self-attention."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator,
                 self_attention: bool = True):
        self.has_self_attention = self_attention
        if self_attention:
            self.self_mha = MultiHeadAttention(cfg, rng)
            self.ln_self = LayerNorm(cfg.model_dim)
        self.cross_mha = MultiHeadAttention(cfg, rng)
        self.ff = FeedForward(cfg, rng)
        self.ln1 = LayerNorm(cfg.model_dim)
        self.ln2 = LayerNorm(cfg.model_dim)

    def __call__(self, x: Tensor, mem: Tensor,
                 self_mask: np.ndarray | None = None,
                 skip_self_attention: bool = False) -> Tensor:
        if self.has_self_attention and not skip_self_attention:
            x = self.ln_self(x + self.self_mha(x, x, x, mask=self_mask))
        x = self.ln1(x + self.cross_mha(x, mem, mem))
        return self.ln2(x + self.ff(x))


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal position table (length x dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def causal_mask(length: int) -> np.ndarray:
    """Additive mask blocking attention to future positions."""
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = -1e9
    return mask
