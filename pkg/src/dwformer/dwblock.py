"""The dynamic-window block: local windowed attention, window tokens, global attention."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderLayer, Module
from .importance import update_importance, window_ic
from .windows import WEAK, WindowPartition, build_mask, dynamic_window_split, membership


@dataclass
class BlockState:
    """Features and per-sample importance entering a block."""

    x: Tensor  # (batch, T, D)
    impt: np.ndarray  # (batch, T), global scope, zero on padding
    valid_lens: np.ndarray
    partitions: list[WindowPartition] = field(default_factory=list)


@dataclass
class LocalOutput:
    x: Tensor  # x_a2, (batch, T, D)
    window_weights: Tensor  # (batch, W, T) per-window importance laid out by window
    attn: Tensor

    @property
    def impt(self) -> np.ndarray:
        """Per-window importance concatenated along time, (batch, T)."""
        return self.window_weights.data.sum(axis=1)


@dataclass
class WindowBatch:
    """Batched layout of per-sample partitions."""

    partitions: list[WindowPartition]
    t: int
    mask: np.ndarray = field(init=False)  # (batch, T, T)
    member: np.ndarray = field(init=False)  # (batch, W, T)
    window_valid: np.ndarray = field(init=False)  # (batch, W)
    weak: np.ndarray = field(init=False)  # (batch, T)

    def __post_init__(self):
        b = len(self.partitions)
        w = max(len(p) for p in self.partitions)
        self.mask = np.stack([build_mask(p, self.t) for p in self.partitions])
        self.member = np.stack([membership(p, self.t, w) for p in self.partitions])
        self.window_valid = np.zeros((b, w))
        self.weak = np.zeros((b, self.t), dtype=bool)
        for i, p in enumerate(self.partitions):
            self.window_valid[i, : len(p)] = 1.0
            for s in p:
                if s.strength == WEAK:
                    self.weak[i, s.begin : s.end + 1] = True

    @property
    def n_windows(self) -> int:
        return self.member.shape[1]

    def window_mask(self) -> np.ndarray:
        """(batch, W, W) mask over window tokens; padded windows see only themselves."""
        v = self.window_valid.astype(bool)
        b, w = v.shape
        allowed = (v[:, :, None] & v[:, None, :]) | np.eye(w, dtype=bool)[None]
        return np.where(allowed, 0.0, -np.inf)


class DWBlock(Module):
    def __init__(
        self,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator,
        ffn_mult: int = 4,
        weak_weight: float = 0.85,
        dropout: float = 0.0,
    ):
        if not 0 < weak_weight <= 1:
            raise ValueError(f"weak-window weight must lie in (0, 1], got {weak_weight}")
        self.local = EncoderLayer(d_model, n_heads, rng, ffn_mult, dropout)
        self.globl = EncoderLayer(d_model, n_heads, rng, ffn_mult, dropout)
        self.weak_weight = weak_weight

    def split(self, impt: np.ndarray, valid_lens) -> list[WindowPartition]:
        return [dynamic_window_split(row, int(n)) for row, n in zip(impt, valid_lens)]

    def dlwt(self, x: Tensor, windows: WindowBatch) -> LocalOutput:
        """Intra-window encoder, weak-window down-weighting, per-window importance."""
        enc = self.local(x, windows.mask)
        out = enc.hidden
        if self.weak_weight != 1.0 and windows.weak.any():
            factor = np.where(windows.weak, self.weak_weight, 1.0)[:, :, None]
            out = ad.mul(out, factor)
        weights = window_ic(enc.attn, windows.member, windows.window_valid)
        return LocalOutput(out, weights, enc.attn)

    @staticmethod
    def window_weighted_sum(local: LocalOutput) -> Tensor:
        """One token per window: importance-weighted sum of the window's features."""
        return ad.matmul(local.window_weights, local.x)

    def dgwt(self, wt: Tensor, windows: WindowBatch) -> tuple[Tensor, np.ndarray]:
        """Encoder over window tokens; returns features and (batch, W) window importance."""
        enc = self.globl(wt, windows.window_mask())
        a = enc.attn.data.mean(axis=1)  # (batch, W, W)
        impt = np.zeros(windows.window_valid.shape)
        for i, p in enumerate(windows.partitions):
            k = len(p)
            received = a[i, :k, :k].sum(axis=0)
            e = np.exp(received - received.max())
            impt[i, :k] = e / e.sum()
        return enc.hidden, impt

    def __call__(self, state: BlockState, partitions: list[WindowPartition] | None = None):
        """Run one block.  ``partitions`` overrides the median split (baselines, tests)."""
        t = state.x.shape[1]
        parts = partitions if partitions is not None else self.split(state.impt, state.valid_lens)
        windows = WindowBatch(parts, t)
        local = self.dlwt(state.x, windows)
        wt = self.window_weighted_sum(local)
        glob, win_impt = self.dgwt(wt, windows)
        upsampled = ad.matmul(ad.swapaxes(Tensor(windows.member), 1, 2), glob)  # x_a3
        x_next = ad.add(local.x, upsampled)
        impt_local = local.impt
        impt_next = np.zeros_like(impt_local)
        for i, p in enumerate(parts):
            impt_next[i] = update_importance(impt_local[i], win_impt[i, : len(p)], p).values
        trace = BlockTrace(parts, impt_local, win_impt, impt_next)
        return BlockState(x_next, impt_next, state.valid_lens, parts), trace


@dataclass
class BlockTrace:
    partitions: list[WindowPartition]
    local_impt: np.ndarray
    window_impt: np.ndarray
    impt: np.ndarray
