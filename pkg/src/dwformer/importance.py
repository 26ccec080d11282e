"""Token importance from attention weights, and its window-level transforms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .windows import PartitionError, WindowPartition

GLOBAL = "global"
PER_WINDOW = "per-window"
OVER_WINDOWS = "over-windows"


@dataclass
class ImportanceScores:
    values: np.ndarray
    scope: str = GLOBAL
    valid_len: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.valid_len is None:
            self.valid_len = len(self.values)

    def __len__(self):
        return len(self.values)

    def check(self, partition: WindowPartition | None = None, atol: float = 1e-9):
        v = self.values
        if (v < 0).any():
            raise ValueError("importance scores must be nonnegative")
        if (v[self.valid_len :] != 0).any():
            raise ValueError("padding positions must score 0")
        if self.scope == PER_WINDOW:
            if partition is None:
                raise ValueError("per-window scores need a partition to check against")
            sums = [v[s.begin : s.end + 1].sum() for s in partition]
            if not np.allclose(sums, 1.0, rtol=0, atol=atol):
                raise ValueError(f"window sums {sums} are not 1")
        elif abs(v[: self.valid_len].sum() - 1.0) > atol:
            raise ValueError(f"scores sum to {v.sum()}, not 1")


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def attention_received(attn: np.ndarray) -> np.ndarray:
    """Head-averaged attention summed over query rows: one value per key column."""
    return np.asarray(attn, dtype=float).mean(axis=0).sum(axis=0)


def ic(attn: np.ndarray, span: tuple[int, int] | None = None) -> ImportanceScores:
    """Importance of the tokens in ``span`` (inclusive bounds) from H x T x T attention."""
    attn = np.asarray(attn, dtype=float)
    if attn.ndim != 3 or attn.shape[1] != attn.shape[2]:
        raise ad.DimensionError(f"expected H x T x T attention, got {attn.shape}")
    b, e = (0, attn.shape[-1] - 1) if span is None else span
    if e < b or b < 0 or e >= attn.shape[-1]:
        raise PartitionError(f"span ({b}, {e}) is empty or outside T={attn.shape[-1]}")
    sub = attn[:, b : e + 1, b : e + 1]
    return ImportanceScores(_softmax(attention_received(sub)), GLOBAL if span is None else PER_WINDOW)


def global_importance(attn: np.ndarray, valid_len: int) -> np.ndarray:
    """Length-T importance over valid tokens; padding scores 0."""
    t = attn.shape[-1]
    out = np.zeros(t)
    out[:valid_len] = ic(attn[:, :valid_len, :valid_len]).values
    return out


def concat_window_importance(
    per_window: list[ImportanceScores | np.ndarray], partition: WindowPartition
) -> ImportanceScores:
    partition.validate()
    if len(per_window) != len(partition):
        raise PartitionError(f"{len(per_window)} score vectors for {len(partition)} windows")
    out = np.zeros(partition.valid_len)
    for s, scores in zip(partition, per_window):
        vals = scores.values if isinstance(scores, ImportanceScores) else np.asarray(scores)
        if len(vals) != len(s):
            raise PartitionError(f"window {s} has {len(s)} tokens but {len(vals)} scores")
        out[s.begin : s.end + 1] = vals
    return ImportanceScores(out, PER_WINDOW)


def upsample(win_scores, partition: WindowPartition, t: int | None = None) -> np.ndarray:
    """Copy each window's score to all of its token positions."""
    vals = win_scores.values if isinstance(win_scores, ImportanceScores) else np.asarray(win_scores)
    if len(vals) != len(partition):
        raise PartitionError(f"{len(vals)} window scores for {len(partition)} windows")
    out = np.zeros(partition.valid_len if t is None else t)
    out[: partition.valid_len] = np.repeat(vals, partition.lengths)
    return out


def update_importance(
    impt_a2: np.ndarray, impt_a3: np.ndarray, partition: WindowPartition
) -> ImportanceScores:
    """Softmax over valid tokens of local importance times upsampled window importance."""
    impt_a2 = np.asarray(impt_a2, dtype=float)
    n = partition.valid_len
    if len(impt_a2) < n:
        raise ValueError(f"local importance has {len(impt_a2)} entries, partition covers {n}")
    out = np.zeros(len(impt_a2))
    out[:n] = _softmax(impt_a2[:n] * upsample(impt_a3, partition))
    return ImportanceScores(out, GLOBAL, n)


def window_ic(attn: Tensor, member: np.ndarray, window_valid: np.ndarray) -> Tensor:
    """Differentiable per-window importance for a batch.

    ``attn`` is (batch, H, T, T) attention restricted to windows, ``member``
    the (batch, W, T) 0/1 membership and ``window_valid`` (batch, W) flags
    real windows.  Returns (batch, W, T) where row k holds the softmax of
    received attention over window k and zeros elsewhere.  Summing over the
    window axis gives the chronologically concatenated importance.
    """
    received = ad.sum_over_axis(ad.mean_over_axis(attn, 1), 1)  # (batch, T)
    b, t = received.shape
    mask = np.where(member > 0, 0.0, -np.inf)
    mask[~window_valid.astype(bool)] = 0.0  # padded windows: harmless row, zeroed below
    logits = ad.reshape(received, (b, 1, t))
    probs = ad.masked_softmax(logits, mask)
    return ad.mul(probs, window_valid[:, :, None].astype(float))
