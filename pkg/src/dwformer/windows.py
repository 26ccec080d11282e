"""Window partitions: median-threshold splitting and block-diagonal masks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

STRONG = "strong"
WEAK = "weak"


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Span:
    begin: int
    end: int  # inclusive
    strength: str = STRONG

    def __len__(self):
        return self.end - self.begin + 1


@dataclass(frozen=True)
class WindowPartition:
    spans: tuple[Span, ...]

    def __post_init__(self):
        object.__setattr__(self, "spans", tuple(self.spans))

    @classmethod
    def from_tuples(cls, spans: Sequence[tuple]) -> "WindowPartition":
        return cls(tuple(Span(*s) for s in spans))

    @classmethod
    def fixed(cls, valid_len: int, window: int) -> "WindowPartition":
        """Equal-length windows (the last one may be shorter), all strong."""
        if window < 1:
            raise PartitionError(f"window length must be >= 1, got {window}")
        return cls(
            tuple(Span(b, min(b + window, valid_len) - 1) for b in range(0, valid_len, window))
        )

    @classmethod
    def single(cls, valid_len: int) -> "WindowPartition":
        return cls((Span(0, valid_len - 1, STRONG),))

    def __len__(self):
        return len(self.spans)

    def __iter__(self) -> Iterator[Span]:
        return iter(self.spans)

    @property
    def valid_len(self) -> int:
        return self.spans[-1].end + 1 if self.spans else 0

    @property
    def n_strong(self) -> int:
        return sum(s.strength == STRONG for s in self.spans)

    @property
    def n_weak(self) -> int:
        return sum(s.strength == WEAK for s in self.spans)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(s) for s in self.spans])

    def labels(self) -> np.ndarray:
        """Window index of every valid token."""
        return np.repeat(np.arange(len(self.spans)), self.lengths)

    def validate(self, valid_len: int | None = None, maximal: bool = False):
        if not self.spans:
            raise PartitionError("partition has no spans")
        if self.spans[0].begin != 0:
            raise PartitionError(f"first span starts at {self.spans[0].begin}, not 0")
        for s in self.spans:
            if s.end < s.begin:
                raise PartitionError(f"empty span {s}")
            if s.strength not in (STRONG, WEAK):
                raise PartitionError(f"unknown strength {s.strength!r}")
        for prev, nxt in zip(self.spans, self.spans[1:]):
            if nxt.begin != prev.end + 1:
                raise PartitionError(f"spans {prev} and {nxt} leave a gap or overlap")
            if maximal and nxt.strength == prev.strength:
                raise PartitionError(f"adjacent spans {prev} and {nxt} share a strength")
        if valid_len is not None and self.valid_len != valid_len:
            raise PartitionError(f"spans cover {self.valid_len} tokens, expected {valid_len}")


def dynamic_window_split(impt: np.ndarray, valid_len: int | None = None) -> WindowPartition:
    """Group tokens into maximal runs above / not above the median score.

    Scores strictly greater than the median are strong; ties go weak.  If no
    token is strictly above the median (all scores equal) the whole sequence
    becomes one strong window.
    """
    impt = np.asarray(impt, dtype=float)
    n = impt.shape[0] if valid_len is None else valid_len
    if n < 1:
        raise PartitionError("cannot split an empty sequence")
    scores = impt[:n]
    strong = scores > np.median(scores)
    if not strong.any():
        return WindowPartition.single(n)
    cuts = np.flatnonzero(strong[1:] != strong[:-1]) + 1
    begins = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts - 1, [n - 1]])
    return WindowPartition(
        tuple(
            Span(int(b), int(e), STRONG if strong[b] else WEAK) for b, e in zip(begins, ends)
        )
    )


def build_mask(partition: WindowPartition, t: int) -> np.ndarray:
    """Additive T x T mask: 0 within a span, -inf across spans.

    Positions past the partition (padding) may only attend to themselves.
    """
    partition.validate()
    n = partition.valid_len
    if n > t:
        raise PartitionError(f"partition covers {n} tokens but T={t}")
    ids = np.concatenate([partition.labels(), len(partition) + np.arange(t - n)])
    return np.where(ids[:, None] == ids[None, :], 0.0, -np.inf)


def membership(partition: WindowPartition, t: int, n_windows: int | None = None) -> np.ndarray:
    """0/1 matrix (windows x T): row k marks the tokens of span k."""
    w = len(partition) if n_windows is None else n_windows
    m = np.zeros((w, t))
    for k, s in enumerate(partition):
        m[k, s.begin : s.end + 1] = 1.0
    return m
