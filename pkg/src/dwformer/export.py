"""CSV export of per-block importance scores and window partitions."""
from __future__ import annotations

import csv
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .data import SampleRecord, to_batch
from .model import DWFormer

IMPORTANCE_HEADER = ("sample_id", "block_index", "token_index", "score")
PARTITION_HEADER = ("sample_id", "block_index", "span_begin", "span_end", "strength")


def trace_rows(model: DWFormer, records: Sequence[SampleRecord], batch_size: int = 64):
    """Yield (importance_rows, partition_rows) per sample.

    Block indices run from 1 to N and refer to the importance produced by
    that block; the seed from the front layer is not exported.
    """
    model.eval()
    with ad.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            x, lens, _ = to_batch(chunk)
            _, trace = model(x, lens)
            for i, n in enumerate(lens):
                sid = start + i
                imp, parts = [], []
                for blk, (scores, plist) in enumerate(zip(trace.importance[1:], trace.partitions), 1):
                    imp.extend((sid, blk, t, float(scores[i, t])) for t in range(n))
                    parts.extend((sid, blk, s.begin, s.end, s.strength) for s in plist[i])
                yield imp, parts


def write_traces(model: DWFormer, records: Sequence[SampleRecord], importance_fh, partition_fh) -> int:
    iw = csv.writer(importance_fh, lineterminator="\n")
    pw = csv.writer(partition_fh, lineterminator="\n")
    iw.writerow(IMPORTANCE_HEADER)
    pw.writerow(PARTITION_HEADER)
    count = 0
    for imp, parts in trace_rows(model, records):
        iw.writerows((a, b, c, repr(d)) for a, b, c, d in imp)
        pw.writerows(parts)
        count += len(imp)
    return count


def read_importance_csv(fh) -> dict[tuple[int, int], np.ndarray]:
    """Group exported scores by (sample_id, block_index), ordered by token."""
    groups: dict[tuple[int, int], list[tuple[int, float]]] = {}
    reader = csv.DictReader(fh)
    for row in reader:
        key = (int(row["sample_id"]), int(row["block_index"]))
        groups.setdefault(key, []).append((int(row["token_index"]), float(row["score"])))
    return {k: np.array([s for _, s in sorted(v)]) for k, v in groups.items()}


def localization_ratios(
    model: DWFormer, records: Iterable[SampleRecord], block: int = -1
) -> np.ndarray:
    """Mean importance inside the planted event over the mean outside it, per sample."""
    records = [r for r in records if r.event_span is not None]
    ratios = []
    for (imp, _), rec in zip(trace_rows(model, records), records):
        n_blocks = max(row[1] for row in imp)
        target = n_blocks if block == -1 else block
        scores = np.array([row[3] for row in imp if row[1] == target])
        b, e = rec.event_span
        inside = np.zeros(len(scores), dtype=bool)
        inside[b : e + 1] = True
        ratios.append(scores[inside].mean() / scores[~inside].mean())
    return np.array(ratios)
