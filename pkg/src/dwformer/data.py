"""Synthetic planted-event sequences and the binary feature-file format."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

FEAT_MAGIC = "DWFEAT"
FEAT_VERSION = 1
NO_SPAN = 0xFFFFFFFF
_RECORD = struct.Struct("<HIII")


class ConfigError(ValueError):
    pass


class FeatureFileError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    t_min: int = 40
    t_max: int = 64
    d_model: int = 64
    event_min: int = 4
    event_max: int = 20
    noise: float = 0.1
    pattern_scale: float = 3.0
    per_class: int = 200
    seed: int = 0
    pattern_seed: int = 1234

    def validate(self):
        if self.num_classes < 1 or self.per_class < 1:
            raise ConfigError("num_classes and per_class must be positive")
        if not 1 <= self.t_min <= self.t_max:
            raise ConfigError(f"bad T range [{self.t_min}, {self.t_max}]")
        if not 1 <= self.event_min <= self.event_max <= self.t_min:
            raise ConfigError(
                f"event length range [{self.event_min}, {self.event_max}] "
                f"must lie within [1, t_min={self.t_min}]"
            )
        if self.num_classes > self.d_model:
            raise ConfigError(
                f"{self.num_classes} orthogonal patterns need d_model >= num_classes, got {self.d_model}"
            )
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")


@dataclass
class SampleRecord:
    features: np.ndarray  # (valid_len, D)
    label: int
    event_span: tuple[int, int] | None = None  # inclusive

    @property
    def valid_len(self) -> int:
        return self.features.shape[0]


def class_patterns(spec: SyntheticSpec) -> np.ndarray:
    """Orthonormal direction per class, scaled by ``pattern_scale``."""
    rng = np.random.default_rng(spec.pattern_seed)
    q, _ = np.linalg.qr(rng.normal(size=(spec.d_model, spec.d_model)))
    return spec.pattern_scale * q.T[: spec.num_classes]


def generate(spec: SyntheticSpec) -> list[SampleRecord]:
    """Gaussian background with one class pattern planted over a random span.

    Values are rounded to float32 so they survive the on-disk format exactly.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    patterns = class_patterns(spec)
    labels = np.repeat(np.arange(spec.num_classes), spec.per_class)
    rng.shuffle(labels)
    out = []
    for c in labels:
        t = int(rng.integers(spec.t_min, spec.t_max + 1))
        length = int(rng.integers(spec.event_min, min(spec.event_max, t) + 1))
        begin = int(rng.integers(0, t - length + 1))
        x = spec.noise * rng.standard_normal((t, spec.d_model))
        x[begin : begin + length] += patterns[c]
        out.append(SampleRecord(x.astype(np.float32).astype(np.float64), int(c), (begin, begin + length - 1)))
    return out


def split(records: Sequence[SampleRecord], test_fraction: float = 0.2, seed: int = 0):
    """Stratified train/test split."""
    rng = np.random.default_rng(seed)
    labels = np.array([r.label for r in records])
    test_idx = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        test_idx.extend(idx[: int(round(test_fraction * len(idx)))])
    test = set(int(i) for i in test_idx)
    train = [r for i, r in enumerate(records) if i not in test]
    return train, [records[i] for i in sorted(test)]


def to_batch(records: Sequence[SampleRecord]):
    """Zero-pad to the longest record: (features, valid_lens, labels)."""
    t = max(r.valid_len for r in records)
    d = records[0].features.shape[1]
    x = np.zeros((len(records), t, d))
    for i, r in enumerate(records):
        x[i, : r.valid_len] = r.features
    lens = np.array([r.valid_len for r in records])
    return x, lens, np.array([r.label for r in records])


# ------------------------------------------------------------------ file format

def dumps_features(records: Sequence[SampleRecord], num_classes: int) -> bytes:
    if not records:
        raise ValueError("refusing to write an empty feature file")
    d = records[0].features.shape[1]
    t_max = max(r.valid_len for r in records)
    head = f"{FEAT_MAGIC} {FEAT_VERSION} {len(records)} {t_max} {d} {num_classes}\n".encode()
    parts = [head]
    for r in records:
        b, e = r.event_span if r.event_span is not None else (NO_SPAN, NO_SPAN)
        parts.append(_RECORD.pack(r.label, r.valid_len, b, e))
        parts.append(np.ascontiguousarray(r.features, dtype="<f4").tobytes())
    return b"".join(parts)


def save_features(path, records: Sequence[SampleRecord], num_classes: int):
    Path(path).write_bytes(dumps_features(records, num_classes))


def loads_features(blob: bytes) -> tuple[list[SampleRecord], dict]:
    if not blob:
        raise FeatureFileError("empty feature file", 0)
    nl = blob.find(b"\n")
    if nl < 0:
        raise FeatureFileError("header line is not terminated", len(blob))
    fields = blob[:nl].decode("ascii", "replace").split()
    if len(fields) != 6 or fields[0] != FEAT_MAGIC:
        raise FeatureFileError(f"malformed header {blob[:nl][:60]!r}", 0)
    try:
        version, count, t_max, d, num_classes = (int(f) for f in fields[1:])
    except ValueError:
        raise FeatureFileError("non-integer header field", 0) from None
    if version != FEAT_VERSION:
        raise FeatureFileError(f"unsupported version {version}", 0)
    header = dict(count=count, t_max=t_max, d_model=d, num_classes=num_classes)
    try:
        records = _parse_records(blob, nl + 1, count, t_max, d, num_classes)
    except FeatureFileError as exc:
        actual = _payload_width(blob, nl + 1, count, t_max)
        if actual is not None and actual != d:
            raise FeatureFileError(
                f"header declares D={d} but the payload is laid out with D={actual}", exc.offset
            ) from exc
        raise
    return records, header


def _payload_width(blob: bytes, off: int, count: int, t_max: int) -> int | None:
    """Smallest width under which the sample blocks tile the file exactly."""
    for d in range(1, 4097):
        pos = off
        for _ in range(count):
            if pos + _RECORD.size > len(blob):
                break
            n = _RECORD.unpack_from(blob, pos)[1]
            if not 1 <= n <= t_max:
                break
            pos += _RECORD.size + n * d * 4
        else:
            if pos == len(blob):
                return d
    return None


def _parse_records(blob, off, count, t_max, d, num_classes) -> list[SampleRecord]:
    records = []
    for i in range(count):
        if off + _RECORD.size > len(blob):
            raise FeatureFileError(f"truncated record header for sample {i}", off)
        label, n, b, e = _RECORD.unpack_from(blob, off)
        if label >= num_classes:
            raise FeatureFileError(f"sample {i}: label {label} outside [0, {num_classes})", off)
        if not 1 <= n <= t_max:
            raise FeatureFileError(f"sample {i}: valid_len {n} outside [1, {t_max}]", off + 2)
        off += _RECORD.size
        size = n * d * 4
        if off + size > len(blob):
            raise FeatureFileError(
                f"sample {i}: payload needs {n}x{d} floats (D={d} from header) "
                f"but only {(len(blob) - off) // 4} remain",
                off,
            )
        feats = np.frombuffer(blob, "<f4", n * d, off).reshape(n, d).astype(np.float64)
        off += size
        span = None if b == NO_SPAN else (int(b), int(e))
        if span is not None and not 0 <= span[0] <= span[1] < n:
            raise FeatureFileError(f"sample {i}: event span {span} outside [0, {n})", off - size - 8)
        records.append(SampleRecord(feats, int(label), span))
    if off != len(blob):
        raise FeatureFileError(
            f"{len(blob) - off} trailing bytes after {count} samples", off
        )
    return records


def load_features(path) -> list[SampleRecord]:
    return loads_features(Path(path).read_bytes())[0]


def read_manifest(path) -> list[tuple[Path, str]]:
    """Plain-text manifest: one ``<feature file> <split>`` pair per line."""
    base = Path(path).parent
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"{path}:{lineno}: expected '<path> <split>', got {line!r}")
        p = Path(parts[0])
        entries.append((p if p.is_absolute() else base / p, parts[1]))
    return entries


def load_manifest(path) -> dict[str, list[SampleRecord]]:
    out: dict[str, list[SampleRecord]] = {}
    for file, name in read_manifest(path):
        out.setdefault(name, []).extend(load_features(file))
    return out
