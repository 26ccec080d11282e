"""Multi-head self-attention and the post-norm transformer encoder layer."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Minimal parameter container; children are discovered from attributes."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _uniform(rng: np.random.Generator, shape, fan: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, init_dim: int | None = None):
        # weights ~ U(-1/sqrt(D), 1/sqrt(D)); D is the model width unless given
        self.weight = _uniform(rng, (d_in, d_out), init_dim or d_in)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)


@dataclass
class EncoderOutput:
    hidden: Tensor  # (batch, T, D)
    attn: Tensor  # (batch, H, T, T), post-softmax


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.query = Linear(d_model, d_model, rng)
        self.key = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return ad.swapaxes(ad.reshape(x, (b, t, self.n_heads, self.d_head)), 1, 2)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> EncoderOutput:
        """``mask`` is additive with entries in {0, -inf}, shape (T, T) or (batch, T, T)."""
        if x.ndim != 3:
            raise ad.DimensionError(f"expected (batch, T, D) input, got {x.shape}")
        b, t, d = x.shape
        q = self._split(self.query(x))
        k = self._split(self.key(x))
        v = self._split(self.value(x))
        logits = ad.scale(ad.matmul(q, ad.swapaxes(k, 2, 3)), 1.0 / math.sqrt(self.d_head))
        if mask is not None:
            mask = np.asarray(mask, dtype=float)
            mask = mask[:, None] if mask.ndim == 3 else mask
        attn = ad.masked_softmax(logits, mask)
        ctx = ad.reshape(ad.swapaxes(ad.matmul(attn, v), 1, 2), (b, t, d))
        return EncoderOutput(self.out(ctx), attn)


class EncoderLayer(Module):
    """Post-norm encoder layer: ``y = LN(x + MHA(x)); out = LN(y + FFN(y))``."""

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator,
        ffn_mult: int = 4,
        dropout: float = 0.0,
    ):
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ff1 = Linear(d_model, ffn_mult * d_model, rng, init_dim=d_model)
        self.ff2 = Linear(ffn_mult * d_model, d_model, rng, init_dim=d_model)
        self.norm2 = LayerNorm(d_model)
        self.dropout = dropout
        self.training = False
        self._drop_rng = np.random.default_rng(int(rng.integers(2**32)))

    def _drop(self, x: Tensor) -> Tensor:
        if not self.training or self.dropout <= 0:
            return x
        keep = self._drop_rng.random(x.shape) >= self.dropout
        return ad.mul(x, keep / (1.0 - self.dropout))

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> EncoderOutput:
        mha = self.attn(x, mask)
        y = self.norm1(ad.add(x, self._drop(mha.hidden)))
        ff = self.ff2(ad.relu(self.ff1(y)))
        out = self.norm2(ad.add(y, self._drop(ff)))
        return EncoderOutput(out, mha.attn)


def sinusoidal_positions(t: int, d: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    pe = np.zeros((t, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : d // 2]
    return pe
