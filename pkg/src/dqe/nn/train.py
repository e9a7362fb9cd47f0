from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import TrainingDivergedError
from .model import EmulatorNet, backward, forward, mse_loss
from .optim import AdaBelief

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    lr: float = 1.0
    drop_epoch: int = 1500
    drop_factor: float = 10.0
    batch_size: int = 4096
    seed: int = 0
    threads: int = 1  # BLAS threads; 1 keeps reductions in a fixed order

    def lr_at(self, epoch: int) -> float:
        return self.lr if epoch < self.drop_epoch else self.lr / self.drop_factor


@dataclass
class TrainingLog:
    epoch: list[int] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.train_loss[-1] if self.train_loss else math.nan

    def to_csv(self) -> str:
        lines = ["epoch,lr,train_loss,val_loss"]
        for row in zip(self.epoch, self.lr, self.train_loss, self.val_loss):
            lines.append("{},{!r},{!r},{!r}".format(*row))
        return "\n".join(lines) + "\n"


def evaluate_loss(net: EmulatorNet, x: np.ndarray, y_std: np.ndarray, chunk: int = 65536) -> float:
    """Inference-mode MSE on standardized targets."""
    total = 0.0
    for i in range(0, x.shape[0], chunk):
        out, _ = forward(net, x[i:i + chunk], training=False)
        d = out[:, 0].astype(np.float64) - y_std[i:i + chunk]
        total += float(d @ d)
    return total / max(1, x.shape[0])


def train(net: EmulatorNet, x_train: np.ndarray, y_train: np.ndarray,
          x_val: np.ndarray | None = None, y_val: np.ndarray | None = None,
          cfg: TrainConfig = TrainConfig(), progress=None) -> TrainingLog:
    """Minimize MSE of the standardized current over shuffled mini-batches.

    ``net.stats`` must already hold training-split normalization statistics.
    ``progress`` is called as progress(epoch, train_loss, val_loss) when given.
    """
    st = net.stats
    x_train = np.asarray(x_train, dtype=np.float64)
    t_train = (np.asarray(y_train, dtype=np.float64) - st.target_mean) / st.target_std
    has_val = x_val is not None and len(x_val) > 0
    if has_val:
        t_val = (np.asarray(y_val, dtype=np.float64) - st.target_mean) / st.target_std
    rng = np.random.default_rng(cfg.seed)
    opt = AdaBelief()
    n = x_train.shape[0]
    history = TrainingLog()
    with threadpool_limits(limits=cfg.threads):
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = rng.permutation(n)
            total, count = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                if idx.size < 2:
                    continue
                y, cache = forward(net, x_train[idx], training=True)
                loss, dy = mse_loss(y, t_train[idx])
                if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
                    raise TrainingDivergedError(epoch, loss)
                grads = backward(net, cache, dy)
                opt.step(net.params, grads, lr)
                net.touch()
                total += loss * idx.size
                count += idx.size
            train_loss = total / max(count, 1)
            val_loss = evaluate_loss(net, x_val, t_val) if has_val else math.nan
            if not math.isfinite(train_loss) or train_loss > DIVERGENCE_LOSS:
                raise TrainingDivergedError(epoch, train_loss)
            history.epoch.append(epoch)
            history.lr.append(lr)
            history.train_loss.append(train_loss)
            history.val_loss.append(val_loss)
            if progress is not None:
                progress(epoch, train_loss, val_loss)
    return history
