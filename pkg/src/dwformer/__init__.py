"""Dynamic-window transformer for sequence classification, on a small numpy autodiff core."""
from .dwblock import BlockState, DWBlock
from .encoder import EncoderLayer, MultiHeadAttention
from .importance import ImportanceScores, ic, update_importance, upsample
from .model import DWFormer, ModelConfig
from .training import MetricsReport, TrainConfig, evaluate, lr_at, metrics, train
from .windows import WindowPartition, build_mask, dynamic_window_split

__all__ = [
    "BlockState",
    "DWBlock",
    "DWFormer",
    "EncoderLayer",
    "ImportanceScores",
    "MetricsReport",
    "ModelConfig",
    "MultiHeadAttention",
    "TrainConfig",
    "WindowPartition",
    "build_mask",
    "dynamic_window_split",
    "evaluate",
    "ic",
    "lr_at",
    "metrics",
    "train",
    "update_importance",
    "upsample",
]
__version__ = "0.1.0"
