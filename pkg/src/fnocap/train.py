"""Squared-error loss and a deterministic Adam training loop."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .burgers import Dataset
from .model import FnoModel, forward, forward_tensors


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


def mse_loss(pred, target) -> float:
    """Sum of squared component errors per sample, averaged over samples.

    Inputs are (m, *grid, d_u); a single unbatched sample counts as m=1.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    m = pred.shape[0] if pred.ndim >= 3 else 1
    return float(np.sum((pred - target) ** 2) / m)


def loss_tensor(pred: T.Tensor, target: np.ndarray) -> T.Tensor:
    diff = pred - T.Tensor(target)
    return T.tsum(T.square(diff)) * (1.0 / target.shape[0])


def dataset_loss(model: FnoModel, data: Dataset, batch: int = 256) -> float:
    if data.m == 0:
        raise ValueError("empty dataset")
    total = 0.0
    for s in range(0, data.m, batch):
        pred = forward(model, data.a[s:s + batch])
        total += float(np.sum((pred - data.u[s:s + batch]) ** 2))
    return total / data.m


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int | None = None  # None: full batch
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Adam:
    """Adam with coupled L2 decay: the gradient gets ``weight_decay * w`` added."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, w in params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * w
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            w -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(model: FnoModel, data: Dataset, cfg: TrainConfig) -> tuple[FnoModel, list[float]]:
    """Train a copy of ``model``; returns it with the per-epoch training losses.

    Each history entry is the mean of the minibatch losses seen during that
    epoch (the exact training loss at the start of the epoch when full-batch).
    """
    if data.m == 0:
        raise ValueError("empty dataset")
    out = model.copy()
    params = out.params
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    bs = data.m if cfg.batch_size is None else min(cfg.batch_size, data.m)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = np.arange(data.m) if bs == data.m else rng.permutation(data.m)
        epoch_loss = 0.0
        for s in range(0, data.m, bs):
            idx = order[s:s + bs]
            w = {k: T.Tensor(v, requires_grad=True) for k, v in params.items()}
            pred = forward_tensors(out.config, w, T.Tensor(data.a[idx]))
            loss = loss_tensor(pred, data.u[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, value)
            loss.backward()
            opt.step(params, {k: t.grad if t.grad is not None else np.zeros_like(t.data)
                              for k, t in w.items()})
            epoch_loss += value * len(idx)
        history.append(epoch_loss / data.m)
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise TrainingDiverged(cfg.epochs, math.nan)
    return out, history
