"""Flat ``key=value`` run configuration shared by all CLI commands."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .data import ConfigError, SyntheticSpec
from .model import ModelConfig
from .training import TrainConfig

ENV_VAR = "DWFORMER_CONFIG"

HELP = {
    "d_model": "feature / channel width D",
    "n_heads": "attention heads H",
    "n_blocks": "number of dynamic-window blocks N",
    "ffn_mult": "FFN expansion factor",
    "weak_weight": "multiplier for weak-window features, in (0, 1]",
    "num_classes": "number of classes",
    "dropout": "dropout rate inside encoder layers",
    "positional": "add sinusoidal positions to the input (true/false)",
    "variant": "dwformer | vanilla | fixed-window",
    "fixed_window": "window length of the fixed-window baseline",
    "seed": "seed for parameter init and batch shuffling",
    "epochs": "training epochs",
    "batch_size": "mini-batch size",
    "base_lr": "peak learning rate",
    "warmup": "fraction of steps spent in cosine warmup",
    "momentum": "SGD momentum",
    "eval_every": "validation cadence in epochs",
    "threads": "data-parallel gradient threads (1 = single-threaded)",
    "t_min": "shortest synthetic sequence",
    "t_max": "longest synthetic sequence",
    "event_min": "shortest planted event",
    "event_max": "longest planted event",
    "noise": "background noise standard deviation",
    "pattern_scale": "norm of each class pattern",
    "per_class": "synthetic samples per class",
    "data_seed": "seed for the synthetic generator and the train/test split",
    "pattern_seed": "seed fixing the class pattern directions",
    "test_fraction": "held-out fraction for testing",
    "val_fraction": "fraction of the training split used for best-UA selection",
    "data_path": "feature file (generated on the fly when empty)",
    "out_dir": "directory for checkpoints, logs and reports",
}


@dataclass
class RunConfig:
    # model
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
    # training
    epochs: int = 120
    batch_size: int = 32
    base_lr: float = 3e-4
    warmup: float = 0.05
    momentum: float = 0.9
    eval_every: int = 1
    threads: int = 1
    # synthetic data
    t_min: int = 40
    t_max: int = 64
    event_min: int = 4
    event_max: int = 20
    noise: float = 0.1
    pattern_scale: float = 3.0
    per_class: int = 200
    data_seed: int = 0
    pattern_seed: int = 1234
    test_fraction: float = 0.2
    val_fraction: float = 0.0
    # paths
    data_path: str = ""
    out_dir: str = "run"

    def validate(self):
        try:
            self.model_config()
            self.train_config().validate()
            self.synthetic_spec().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for key in ("test_fraction", "val_fraction"):
            if not 0 <= getattr(self, key) < 1:
                raise ConfigError(f"{key} must lie in [0, 1)")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            **{f.name: getattr(self, f.name) for f in fields(ModelConfig)}
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            **{f.name: getattr(self, f.name) for f in fields(TrainConfig)}
        )

    def synthetic_spec(self) -> SyntheticSpec:
        kw = {f.name: getattr(self, f.name) for f in fields(SyntheticSpec) if f.name != "seed"}
        return SyntheticSpec(seed=self.data_seed, **kw)

    def dump(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in asdict(self).items())

    @classmethod
    def parse(cls, text: str = "", overrides: list[str] | tuple = ()) -> "RunConfig":
        values: dict[str, object] = {}
        lines = [(f"line {i}", l) for i, l in enumerate(text.splitlines(), 1)]
        lines += [("override", o) for o in overrides]
        for where, raw in lines:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep:
                raise ConfigError(f"{where}: expected key=value, got {raw!r}")
            values[key] = _coerce(key, val)
        cfg = cls(**values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        text = Path(path).read_text() if path else ""
        return cls.parse(text, overrides)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, val: str):
    kind = _TYPES.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if kind == "bool":
            if val.lower() not in ("true", "false", "1", "0"):
                raise ValueError(val)
            return val.lower() in ("true", "1")
        if kind == "int":
            return int(val)
        if kind == "float":
            return float(val)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {val!r} as {kind}") from None
    return val


def describe_keys() -> str:
    defaults = asdict(RunConfig())
    return "\n".join(f"  {k:<14} {HELP[k]} (default: {_fmt(defaults[k])})" for k in defaults)
