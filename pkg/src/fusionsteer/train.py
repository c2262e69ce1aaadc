"""Huber-loss regression training with Adam."""
from __future__ import annotations

import csv
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SplitArrays, iter_batches
from .models import GATED, FusionModel
from .tensor import ShapeError, compute_context

log = logging.getLogger(__name__)

TRAIN_BATCH = 10
EVAL_BATCH = 5
DEFAULT_LR = 1e-4
DEFAULT_DELTA = 1.0


class TrainingDiverged(RuntimeError):
    pass


def huber_loss(pred: np.ndarray, target: np.ndarray, delta: float = DEFAULT_DELTA):
    """Batch-mean Huber loss of the residual ``target - pred`` and its gradient w.r.t. ``pred``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} and target {target.shape} differ")
    n = pred.shape[0]
    a = target.astype(np.float64) - pred.astype(np.float64)
    quad = np.abs(a) <= delta
    per = np.where(quad, 0.5 * a * a, delta * (np.abs(a) - 0.5 * delta))
    grad = np.where(quad, -a, -delta * np.sign(a)) / n
    return float(per.mean()), grad.astype(pred.dtype)


class Adam:
    def __init__(self, params: "OrderedDict[str, np.ndarray]", lr: float = DEFAULT_LR,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or eps <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1):
            raise ValueError("invalid Adam hyperparameters")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())
        self.v = OrderedDict((k, np.zeros_like(v)) for k, v in params.items())

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place."""
        if set(grads) != set(self.m):
            raise KeyError("gradient names do not match optimizer state")
        for k, g in grads.items():
            if g.shape != self.m[k].shape:
                raise ShapeError(f"{k}: gradient shape {g.shape} != parameter shape {self.m[k].shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"non-finite gradient for {k}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v, p = self.m[k], self.v[k], params[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(state: Adam, params: dict, grads: dict) -> dict:
    state.step(params, grads)
    return params


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    w_rgb_mean: float | None
    w_depth_mean: float | None
    seconds: float


@dataclass
class TrainLog:
    rows: list[EpochRow] = field(default_factory=list)

    def write_csv(self, path) -> None:
        def fmt(v):
            return "" if v is None else repr(float(v))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "w_rgb_mean", "w_depth_mean", "seconds"])
            for r in self.rows:
                w.writerow([r.epoch, fmt(r.train_loss), fmt(r.val_loss), fmt(r.w_rgb_mean),
                            fmt(r.w_depth_mean), f"{r.seconds:.3f}"])


def evaluate_loss(model: FusionModel, data: SplitArrays, delta: float = DEFAULT_DELTA,
                  batch_size: int = EVAL_BATCH) -> float:
    """Sample-weighted mean Huber loss over ``data`` with parameters frozen."""
    total = 0.0
    for rgb, depth, omega in iter_batches(data, batch_size):
        pred = model.predict(rgb, depth)
        total += huber_loss(pred, omega, delta)[0] * len(omega)
    return total / len(data)


def train_step(model: FusionModel, opt: Adam, rgb, depth, omega, delta: float = DEFAULT_DELTA,
               record_gates: bool = False):
    pred, gates, cache = model.forward(rgb, depth, record_gates=record_gates)
    loss, grad = huber_loss(pred, omega, delta)
    if not np.isfinite(loss):
        raise TrainingDiverged(f"non-finite training loss {loss}")
    grads = model.backward(cache, grad)
    opt.step(model.parameters(), grads)
    model.touch()
    return loss, gates


def train(model: FusionModel, train_data: SplitArrays, val_data: SplitArrays | None, epochs: int,
          rng: np.random.Generator, lr: float = DEFAULT_LR, delta: float = DEFAULT_DELTA,
          batch_size: int = TRAIN_BATCH, val_batch_size: int = EVAL_BATCH, opt: Adam | None = None,
          log_sink=None, select: str = "final"):
    """Train ``model`` in place and return ``(model, TrainLog, opt)``.

    ``select="best"`` restores the parameters of the epoch with the lowest
    validation loss at the end; ``"final"`` keeps the last epoch.
    """
    if select not in ("final", "best"):
        raise ValueError("select must be 'final' or 'best'")
    opt = opt or Adam(model.parameters(), lr=lr)
    history = TrainLog()
    gated = model.config.fusion_kind == GATED
    best = (np.inf, None)
    with compute_context():
        for epoch in range(1, epochs + 1):
            t0 = time.perf_counter()
            total, count = 0.0, 0
            w_rgb, w_depth = [], []
            for rgb, depth, omega in iter_batches(train_data, batch_size, rng):
                loss, gates = train_step(model, opt, rgb, depth, omega, delta, record_gates=gated)
                total += loss * len(omega)
                count += len(omega)
                if gates is not None:
                    w_rgb.append(gates.mean_rgb)
                    w_depth.append(gates.mean_depth)
            val_loss = evaluate_loss(model, val_data, delta, val_batch_size) if val_data is not None else float("nan")
            if not np.isfinite(val_loss) and val_data is not None:
                raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
            row = EpochRow(epoch, total / count, val_loss,
                           float(np.mean(w_rgb)) if gated else None,
                           float(np.mean(w_depth)) if gated else None,
                           time.perf_counter() - t0)
            history.rows.append(row)
            if select == "best" and val_loss < best[0]:
                best = (val_loss, OrderedDict((k, v.copy()) for k, v in model.parameters().items()))
            if log_sink is not None:
                log_sink(row)
            log.debug("epoch %d train %.6f val %.6f", epoch, row.train_loss, row.val_loss)
    if select == "best" and best[1] is not None:
        model.load_parameters(best[1])
    return model, history, opt
