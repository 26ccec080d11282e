"""scikit-learn compatible classifier wrapping the network and training loop."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .data import SampleRecord
from .model import DWFormer, ModelConfig
from .training import TrainConfig, predict_logits, train


def check_sequences(X, d_model: int | None = None) -> list[np.ndarray]:
    """Accept a (n, T, D) array or a list of (T_i, D) arrays; return float64 arrays.

    For a 3-D array every sequence is taken at full length.
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        seqs = list(np.asarray(X, dtype=np.float64))
    else:
        seqs = [np.asarray(x, dtype=np.float64) for x in X]
    if not seqs:
        raise ValueError("X contains no sequences")
    for i, s in enumerate(seqs):
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError(f"sequence {i} must be a nonempty (T, D) array, got shape {s.shape}")
        if not np.isfinite(s).all():
            raise ValueError(f"sequence {i} contains NaN or infinity")
    widths = {s.shape[1] for s in seqs}
    if len(widths) != 1:
        raise ValueError(f"sequences disagree on feature width: {sorted(widths)}")
    if d_model is not None and widths != {d_model}:
        raise ValueError(f"expected feature width {d_model}, got {widths.pop()}")
    return seqs


class DWFormerClassifier(ClassifierMixin, BaseEstimator):
    """Sequence classifier with the dynamic-window transformer as its core.

    ``X`` is a list of ``(T_i, D)`` feature arrays (lengths may differ) or a
    ``(n, T, D)`` array.  Feature width ``D`` is fixed by the first ``fit``.
    """

    def __init__(
        self,
        n_heads=8,
        n_blocks=2,
        ffn_mult=4,
        weak_weight=0.85,
        variant="dwformer",
        fixed_window=8,
        dropout=0.0,
        positional=False,
        epochs=120,
        batch_size=32,
        base_lr=3e-4,
        warmup=0.05,
        momentum=0.9,
        random_state=0,
    ):
        self.n_heads = n_heads
        self.n_blocks = n_blocks
        self.ffn_mult = ffn_mult
        self.weak_weight = weak_weight
        self.variant = variant
        self.fixed_window = fixed_window
        self.dropout = dropout
        self.positional = positional
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.warmup = warmup
        self.momentum = momentum
        self.random_state = random_state

    def fit(self, X, y):
        seqs = check_sequences(X)
        y = np.asarray(y)
        if len(y) != len(seqs):
            raise ValueError(f"X has {len(seqs)} sequences but y has {len(y)} labels")
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        self.n_features_in_ = seqs[0].shape[1]
        config = ModelConfig(
            d_model=self.n_features_in_,
            n_heads=self.n_heads,
            n_blocks=self.n_blocks,
            ffn_mult=self.ffn_mult,
            weak_weight=self.weak_weight,
            num_classes=len(self.classes_),
            dropout=self.dropout,
            positional=self.positional,
            variant=self.variant,
            fixed_window=self.fixed_window,
            seed=self.random_state,
        )
        tcfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            warmup=self.warmup,
            momentum=self.momentum,
            seed=self.random_state,
        )
        records = [SampleRecord(s, int(c)) for s, c in zip(seqs, codes)]
        result = train(DWFormer(config), records, tcfg)
        self.model_ = result.model
        self.loss_curve_ = [s.loss for s in result.steps]
        return self

    def _records(self, X):
        check_is_fitted(self, "model_")
        return [SampleRecord(s, 0) for s in check_sequences(X, self.n_features_in_)]

    def decision_function(self, X) -> np.ndarray:
        records = self._records(X)
        return predict_logits(self.model_, records)

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def importance(self, X, block: int = -1) -> list[np.ndarray]:
        """Per-token importance after ``block`` (default: last), one array per sequence."""
        records = self._records(X)
        out = []
        self.model_.eval()
        with ad.no_grad():
            for rec in records:
                _, trace = self.model_(rec.features[None])
                out.append(trace.importance[block][0])
        return out
