"""Full network (front encoder, stacked blocks, pooling, classifier) and checkpoints."""
from __future__ import annotations

import io
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dwblock import BlockState, DWBlock
from .encoder import EncoderLayer, Linear, Module, sinusoidal_positions
from .importance import global_importance
from .windows import WindowPartition, build_mask

VARIANTS = ("dwformer", "vanilla", "fixed-window")
CKPT_MAGIC = b"DWFORMER-CKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 8
    n_blocks: int = 2
    ffn_mult: int = 4
    weak_weight: float = 0.85
    num_classes: int = 4
    dropout: float = 0.0
    positional: bool = False
    variant: str = "dwformer"
    fixed_window: int = 8
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.d_model < 2 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.n_blocks < 1:
            raise ValueError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if not 0 < self.weak_weight <= 1:
            raise ValueError(f"weak_weight must lie in (0, 1], got {self.weak_weight}")
        if self.num_classes < 1 or self.ffn_mult < 1 or self.fixed_window < 1:
            raise ValueError("num_classes, ffn_mult and fixed_window must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass
class ModelTrace:
    """Importance seed plus one importance vector and partition list per block."""

    importance: list[np.ndarray] = field(default_factory=list)  # each (batch, T)
    partitions: list[list[WindowPartition]] = field(default_factory=list)
    valid_lens: np.ndarray | None = None


def pool_weights(valid_lens, t: int) -> np.ndarray:
    lens = np.asarray(valid_lens)
    w = (np.arange(t)[None, :] < lens[:, None]) / lens[:, None]
    return w[:, None, :]  # (batch, 1, T)


def padding_masks(valid_lens, t: int) -> np.ndarray:
    return np.stack([build_mask(WindowPartition.single(int(n)), t) for n in valid_lens])


class DWFormer(Module):
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, h, r = config.d_model, config.n_heads, config.ffn_mult
        self.front = EncoderLayer(d, h, rng, r, config.dropout)
        if config.variant == "dwformer":
            self.blocks = [
                DWBlock(d, h, rng, r, config.weak_weight, config.dropout)
                for _ in range(config.n_blocks)
            ]
        else:
            self.blocks = [EncoderLayer(d, h, rng, r, config.dropout) for _ in range(config.n_blocks)]
        self.hidden = Linear(d, max(d // 2, 1), rng, init_dim=d)
        self.head = Linear(max(d // 2, 1), config.num_classes, rng, init_dim=d)

    def train(self, mode: bool = True):
        for layer in self._encoders():
            layer.training = mode
        return self

    def eval(self):
        return self.train(False)

    def _encoders(self):
        yield self.front
        for blk in self.blocks:
            if isinstance(blk, DWBlock):
                yield blk.local
                yield blk.globl
            else:
                yield blk

    def _check_input(self, x0, valid_lens):
        x0 = np.asarray(x0.data if isinstance(x0, Tensor) else x0, dtype=float)
        if x0.ndim != 3 or x0.shape[2] != self.config.d_model:
            raise ad.DimensionError(
                f"expected (batch, T, {self.config.d_model}) features, got {x0.shape}"
            )
        b, t, _ = x0.shape
        lens = np.full(b, t) if valid_lens is None else np.asarray(valid_lens, dtype=int)
        if lens.shape != (b,) or (lens < 1).any() or (lens > t).any():
            raise ad.DimensionError(f"valid_lens {lens} inconsistent with batch={b}, T={t}")
        if self.config.positional:
            x0 = x0 + sinusoidal_positions(t, self.config.d_model)[None]
        return x0, lens

    def encode(self, x0, valid_lens=None) -> tuple[Tensor, ModelTrace]:
        """Features after the last block, before pooling."""
        x0, lens = self._check_input(x0, valid_lens)
        b, t, _ = x0.shape
        pad_mask = padding_masks(lens, t)
        front = self.front(Tensor(x0), pad_mask)
        attn = front.attn.data
        seed = np.stack([global_importance(attn[i], lens[i]) for i in range(b)])
        trace = ModelTrace([seed], [], lens)
        x = front.hidden
        if self.config.variant == "dwformer":
            state = BlockState(x, seed, lens)
            for blk in self.blocks:
                state, bt = blk(state)
                trace.importance.append(bt.impt)
                trace.partitions.append(bt.partitions)
            return state.x, trace
        for blk in self.blocks:
            if self.config.variant == "vanilla":
                parts = [WindowPartition.single(int(n)) for n in lens]
                mask = pad_mask
            else:
                parts = [WindowPartition.fixed(int(n), self.config.fixed_window) for n in lens]
                mask = np.stack([build_mask(p, t) for p in parts])
            out = blk(x, mask)
            x = out.hidden
            a = out.attn.data
            trace.importance.append(np.stack([global_importance(a[i], lens[i]) for i in range(b)]))
            trace.partitions.append(parts)
        return x, trace

    def forward(self, x0, valid_lens=None) -> tuple[Tensor, ModelTrace]:
        x, trace = self.encode(x0, valid_lens)
        b, t, d = x.shape
        pooled = ad.reshape(ad.matmul(Tensor(pool_weights(trace.valid_lens, t)), x), (b, d))
        logits = self.head(ad.relu(self.hidden(pooled)))
        return logits, trace

    __call__ = forward

    @staticmethod
    def loss(logits: Tensor, labels) -> Tensor:
        return ad.cross_entropy(logits, labels)

    # ------------------------------------------------------------ checkpoints

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise CheckpointError(
                f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=float)
            if arr.shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model {p.shape}")
            p.data = arr.copy()

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(dump_checkpoint(self.config, self.state_dict()))

    @classmethod
    def load(cls, path) -> "DWFormer":
        with open(path, "rb") as fh:
            config, state = parse_checkpoint(fh.read())
        model = cls(config)
        model.load_state_dict(state)
        return model


def config_to_text(config: ModelConfig) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(config).items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def config_from_text(text: str) -> ModelConfig:
    types = {f.name: f.type for f in fields(ModelConfig)}
    kw = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, val = line.partition("=")
        if not sep or key not in types:
            raise CheckpointError(f"bad config line in checkpoint header: {line!r}")
        kind = types[key]
        if kind == "bool":
            kw[key] = val == "true"
        elif kind == "int":
            kw[key] = int(val)
        elif kind == "float":
            kw[key] = float(val)
        else:
            kw[key] = val
    return ModelConfig(**kw)


def dump_checkpoint(config: ModelConfig, state: dict[str, np.ndarray]) -> bytes:
    """Layout: magic line, config text terminated by a blank line, then
    ``count`` followed by (name, shape, float64 little-endian payload) records."""
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC + b" %d\n" % CKPT_VERSION)
    buf.write(config_to_text(config).encode() + b"\n")
    buf.write(struct.pack("<I", len(state)))
    for name, arr in state.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def parse_checkpoint(blob: bytes) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    head, sep, rest = blob.partition(b"\n")
    parts = head.split()
    if not sep or len(parts) != 2 or parts[0] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if int(parts[1]) != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {parts[1].decode()}")
    text, sep, body = rest.partition(b"\n\n")
    if not sep:
        raise CheckpointError("checkpoint header is not terminated")
    try:
        config = config_from_text(text.decode())
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid config in checkpoint: {exc}") from exc
    state = {}
    off = 0
    try:
        (count,) = struct.unpack_from("<I", body, off)
        off += 4
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, off)
            name = body[off + 2 : off + 2 + n].decode()
            off += 2 + n
            (ndim,) = struct.unpack_from("<B", body, off)
            shape = struct.unpack_from(f"<{ndim}I", body, off + 1)
            off += 1 + 4 * ndim
            size = int(np.prod(shape)) * 8
            if off + size > len(body):
                raise CheckpointError(f"truncated payload for {name}")
            state[name] = np.frombuffer(body, "<f8", int(np.prod(shape)), off).reshape(shape).copy()
            off += size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    return config, state
