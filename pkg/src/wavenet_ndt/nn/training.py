"""Minibatch training of the post-processing network."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import Divergence, InvalidParameter, ShapeMismatch
from .model import CnnModel
from .optim import adam_step, init_moments, mse_l2_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    l2_lambda: float = 1e-4
    dropout_rate: float = 0.3
    patience: int = 20
    seed: int = 0
    # multiply the learning rate by lr_decay after lr_decay_patience epochs
    # without validation improvement; 1.0 keeps it constant
    lr_decay: float = 1.0
    lr_decay_patience: int = 10

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "max_epochs", "patience", "lr_decay_patience"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"{name} must be positive")
        if self.l2_lambda < 0:
            raise InvalidParameter("l2_lambda must be nonnegative")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidParameter("dropout_rate must lie in [0, 1)")
        if self.seed < 0:
            raise InvalidParameter("seed must be nonnegative")
        if not 0 < self.lr_decay <= 1:
            raise InvalidParameter("lr_decay must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingHistory:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_mse)


def _batches(n: int, batch_size: int, order: np.ndarray):
    starts = list(range(0, n, batch_size))
    # a trailing singleton batch would break batch normalisation; fold it in
    if len(starts) > 1 and n - starts[-1] < 2:
        starts.pop()
    bounds = starts[1:] + [n]
    return [order[s:e] for s, e in zip(starts, bounds)]


def evaluate_mse(model: CnnModel, inputs: np.ndarray, targets: np.ndarray, batch_size=256) -> float:
    model.infer_mode()
    total = 0.0
    for s in range(0, len(inputs), batch_size):
        pred = model.forward(inputs[s : s + batch_size])
        total += float(np.sum((pred - targets[s : s + batch_size]) ** 2))
    return total / inputs.size


def train(
    model: CnnModel,
    train_split: tuple,
    val_split: tuple,
    cfg: TrainConfig,
) -> tuple[CnnModel, TrainingHistory]:
    """Fit ``model`` on (inputs, targets) pairs in physical units.

    Inputs and targets are divided by ``model.scales(inputs)`` before entering
    the network, so losses are reported in normalised units.
    The parameters of the best validation epoch are restored on return.
    """
    arrays = [np.asarray(a, dtype=float) for a in (*train_split, *val_split)]
    for a in arrays:
        if a.ndim != 2 or a.shape[1] != model.length:
            raise ShapeMismatch(f"training arrays must be (n, {model.length}), got {a.shape}")
    x_tr, y_tr, x_va, y_va = arrays
    # targets share their input's divisor so predict can undo it
    s_tr, s_va = model.scales(x_tr), model.scales(x_va)
    x_tr, y_tr, x_va, y_va = x_tr / s_tr, y_tr / s_tr, x_va / s_va, y_va / s_va
    if len(x_tr) < 2 or len(x_va) == 0:
        raise InvalidParameter("need at least 2 training and 1 validation samples")

    shuffle_seq, dropout_seq = np.random.SeedSequence(cfg.seed).spawn(3)[1:]
    shuffle_rng = np.random.default_rng(shuffle_seq)
    model.rng = np.random.default_rng(dropout_seq)

    params = model.named_params()
    weights = model.regularised_weights()
    moments = init_moments(params)
    history = TrainingHistory()
    best_val = np.inf
    best = model.snapshot()
    stale = 0
    step = 0
    lr = cfg.learning_rate

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        model.train_mode()
        order = shuffle_rng.permutation(len(x_tr))
        seen = 0.0
        for idx in _batches(len(x_tr), cfg.batch_size, order):
            pred = model.forward(x_tr[idx])
            loss, grad = mse_l2_loss(pred, y_tr[idx], weights.values(), cfg.l2_lambda)
            if not np.isfinite(loss):
                raise Divergence(f"loss became {loss} at epoch {epoch + 1}")
            model.backward(grad)
            grads = model.named_grads()
            for k, w in weights.items():
                grads[k] = grads[k] + 2.0 * cfg.l2_lambda * w
            step += 1
            adam_step(params, grads, moments, step, lr)
            seen += float(np.sum((pred - y_tr[idx]) ** 2))
        train_mse = seen / x_tr.size
        val_mse = evaluate_mse(model, x_va, y_va)
        if not np.isfinite(val_mse):
            raise Divergence(f"validation loss became {val_mse} at epoch {epoch + 1}")

        history.train_mse.append(train_mse)
        history.val_mse.append(val_mse)
        history.learning_rate.append(lr)
        history.epoch_seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d train %.4g val %.4g", epoch + 1, train_mse, val_mse)

        if val_mse < best_val:
            best_val = val_mse
            best = model.snapshot()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
            if stale % cfg.lr_decay_patience == 0:
                lr *= cfg.lr_decay

    model.restore(best)
    model.infer_mode()
    return model, history
