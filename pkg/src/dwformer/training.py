"""SGD training loop, warmup + cosine schedule, and classification metrics."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import SampleRecord, to_batch
from .model import DWFormer

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 32
    base_lr: float = 3e-4
    warmup: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    eval_every: int = 1
    threads: int = 1

    def validate(self):
        if not 0 <= self.warmup < 1:
            raise ValueError(f"warmup fraction must lie in [0, 1), got {self.warmup}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1 or self.threads < 1:
            raise ValueError("epochs, batch_size, eval_every and threads must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine warmup from 0 to ``base_lr``, then cosine decay towards 0."""
    warm = int(round(cfg.warmup * total_steps))
    if step < warm:
        return cfg.base_lr * (1 - math.cos(math.pi * step / warm)) / 2
    span = total_steps - warm
    progress = (step - warm) / span if span > 0 else 0.0
    return cfg.base_lr * (1 + math.cos(math.pi * progress)) / 2


class SGD:
    def __init__(self, params, momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data - lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass
class MetricsReport:
    wa: float
    ua: float
    wf1: float
    confusion: np.ndarray
    absent_classes: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "WA": self.wa,
            "UA": self.ua,
            "WF1": self.wf1,
            "confusion": self.confusion.tolist(),
            "absent_classes": self.absent_classes,
        }


def metrics(y_true, y_pred, num_classes: int | None = None) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("need equally long, nonempty label and prediction vectors")
    c = num_classes or int(max(y_true.max(), y_pred.max())) + 1
    conf = np.zeros((c, c), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    tp = np.diag(conf)
    total = support.sum()
    present = support > 0
    recall = np.divide(tp, support, out=np.zeros(c), where=present)
    precision = np.divide(tp, predicted, out=np.zeros(c), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(c), where=denom > 0)
    return MetricsReport(
        wa=float(tp.sum() / total),
        ua=float(recall[present].mean()),
        wf1=float((support / total * f1).sum()),
        confusion=conf,
        absent_classes=[int(i) for i in np.flatnonzero(~present)],
    )


def predict_logits(model: DWFormer, records: Sequence[SampleRecord], batch_size: int = 64) -> np.ndarray:
    model.eval()
    out = []
    with ad.no_grad():
        for i in range(0, len(records), batch_size):
            x, lens, _ = to_batch(records[i : i + batch_size])
            out.append(model(x, lens)[0].data)
    return np.concatenate(out)


def evaluate(model: DWFormer, records: Sequence[SampleRecord], batch_size: int = 64) -> MetricsReport:
    pred = predict_logits(model, records, batch_size).argmax(axis=1)
    y = np.array([r.label for r in records])
    return metrics(y, pred, model.config.num_classes)


@dataclass
class StepRecord:
    epoch: int
    step: int
    lr: float
    loss: float
    wa: float
    ua: float
    wf1: float

    def line(self) -> str:
        return (
            f"epoch={self.epoch} step={self.step} lr={self.lr!r} loss={self.loss!r} "
            f"WA={self.wa!r} UA={self.ua!r} WF1={self.wf1!r}"
        )


@dataclass
class TrainResult:
    model: DWFormer
    steps: list[StepRecord]
    epochs: list[dict]
    best_epoch: int


def _shard_grads(model: DWFormer, x, lens, y, shards: int):
    """Forward/backward per shard in threads; fixed-order weighted reduction."""
    bounds = np.array_split(np.arange(len(y)), shards)
    bounds = [b for b in bounds if len(b)]
    params = model.parameters()

    def run(idx):
        logits, _ = model(x[idx], lens[idx])
        loss = model.loss(logits, y[idx])
        grads = loss.backward(accumulate=False)
        return loss.item(), logits.data, grads

    with ThreadPoolExecutor(max_workers=len(bounds)) as pool:
        results = list(pool.map(run, bounds))
    total = len(y)
    loss = 0.0
    for idx, (l, _, grads) in zip(bounds, results):
        w = len(idx) / total
        loss += w * l
        for p in params:
            g = grads.get(p)
            if g is not None:
                p.grad = w * g if p.grad is None else p.grad + w * g
    return loss, np.concatenate([r[1] for r in results])


def train(
    model: DWFormer,
    records: Sequence[SampleRecord],
    cfg: TrainConfig,
    val: Sequence[SampleRecord] | None = None,
    log_file=None,
) -> TrainResult:
    """Mini-batch SGD with momentum; keeps the parameters with the best validation UA."""
    cfg.validate()
    if not records:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(model.parameters(), cfg.momentum)
    n = len(records)
    per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * per_epoch
    steps: list[StepRecord] = []
    epochs: list[dict] = []
    best_ua, best_epoch, best_state = -1.0, 0, None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(n)
        for s in range(per_epoch):
            batch = [records[i] for i in order[s * cfg.batch_size : (s + 1) * cfg.batch_size]]
            x, lens, y = to_batch(batch)
            opt.zero_grad()
            if cfg.threads > 1:
                loss_val, logits = _shard_grads(model, x, lens, y, cfg.threads)
            else:
                out, _ = model(x, lens)
                loss = model.loss(out, y)
                loss.backward()
                loss_val, logits = loss.item(), out.data
            if not math.isfinite(loss_val):
                raise DivergenceError(f"non-finite loss {loss_val} at epoch {epoch}, step {step}")
            lr = lr_at(step, total, cfg)
            opt.step(lr)
            m = metrics(y, logits.argmax(axis=1), model.config.num_classes)
            rec = StepRecord(epoch, step, lr, loss_val, m.wa, m.ua, m.wf1)
            steps.append(rec)
            if log_file is not None:
                log_file.write(rec.line() + "\n")
            step += 1
        if val is not None and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            rep = evaluate(model, val)
            epochs.append({"epoch": epoch, **rep.as_dict()})
            log.info("epoch %d  val WA=%.4f UA=%.4f WF1=%.4f", epoch, rep.wa, rep.ua, rep.wf1)
            if rep.ua > best_ua:
                best_ua, best_epoch, best_state = rep.ua, epoch, model.state_dict()
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        best_epoch = cfg.epochs
    model.eval()
    return TrainResult(model, steps, epochs, best_epoch)
