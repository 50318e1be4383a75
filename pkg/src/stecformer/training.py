"""Interval-weighted loss, Adam, early stopping and the training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambdas: tuple[float, ...]

    def __post_init__(self):
        if not self.lambdas or self.lambdas[-1] != 1.0 or min(self.lambdas) <= 0:
            raise ValueError(f"invalid loss weights {self.lambdas}")

    def __len__(self):
        return len(self.lambdas)

    def __iter__(self):
        return iter(self.lambdas)


def loss_weights(N: int) -> LossWeights:
    """1.0 on the furthest interval, 0.1 less for each interval closer to the input."""
    if not 1 <= N <= 10:
        raise ValueError(f"N must lie in [1, 10], got {N}")
    return LossWeights(tuple(round(1.0 - 0.1 * (N - i), 12) for i in range(1, N + 1)))


def joint_loss(y_list: list[Tensor], targets, weights: LossWeights | tuple) -> Tensor:
    """Sum over intervals of weight times the interval MSE (mean over time and variables)."""
    lambdas = tuple(weights)
    if len(lambdas) != len(y_list):
        raise ValueError(f"{len(y_list)} interval predictions but {len(lambdas)} weights")
    targets = T._as_tensor(targets)
    total = sum(y.shape[-2] for y in y_list)
    if total != targets.shape[-2]:
        raise ValueError(f"intervals cover {total} steps, targets have {targets.shape[-2]}")
    loss = None
    start = 0
    for lam, y in zip(lambdas, y_list):
        stop = start + y.shape[-2]
        err = y - targets[..., start:stop, :]
        term = T.mean(T.square(err)) * lam
        loss = term if loss is None else loss + term
        start = stop
    return loss


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 3
    max_epochs: int = 30
    min_delta: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        import dataclasses
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state: AdamState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.state = AdamState.zeros_like(self.params)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.cfg)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


class EarlyStopping:
    """Stops once ``patience`` consecutive epochs fail to beat the best loss by ``min_delta``."""

    def __init__(self, patience: int = 3, min_delta: float = 1e-7):
        self.patience = patience
        self.min_delta = min_delta
        self.best = float("inf")
        self.best_epoch = None
        self.counter = 0

    def step(self, val_loss: float, epoch: int) -> bool:
        """Record one epoch; returns True when it is a new best."""
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class WindowData:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray


@dataclass
class TrainResult:
    best_state: dict
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


def evaluate_loss(model, x: np.ndarray, y: np.ndarray, weights: LossWeights, batch_size: int = 64) -> float:
    total, count = 0.0, 0
    with T.no_tape():
        for s in range(0, len(x), batch_size):
            xb, yb = x[s:s + batch_size], y[s:s + batch_size]
            ys, _ = model.forward(xb)
            total += joint_loss(ys, yb, weights).item() * len(xb)
            count += len(xb)
    return total / count


def _diagnostic(model, epoch, batch) -> str:
    norms = {name: float(np.linalg.norm(p.data)) for name, p in model.named_parameters()}
    worst = sorted(norms.items(), key=lambda kv: -kv[1])[:5]
    return f"non-finite loss at epoch {epoch}, batch {batch}; largest parameter norms: {worst}"


def train(model, data: WindowData, tcfg: TrainConfig, on_epoch=None) -> TrainResult:
    """Minibatch Adam on the interval-weighted loss with early stopping on validation.

    The model is left holding the best-validation parameters.
    """
    weights = loss_weights(model.cfg.num_stages)
    params = model.parameters()
    opt = Adam(params, tcfg)
    rng = np.random.default_rng(tcfg.seed)
    stopper = EarlyStopping(tcfg.patience, tcfg.min_delta)
    result = TrainResult(best_state=model.state_dict())
    n = len(data.train_x)
    for epoch in range(1, tcfg.max_epochs + 1):
        order = rng.permutation(n)
        running, seen = 0.0, 0
        for b, s in enumerate(range(0, n, tcfg.batch_size)):
            idx = order[s:s + tcfg.batch_size]
            opt.zero_grad()
            try:
                with T.Tape():
                    ys, _ = model.forward(data.train_x[idx])
                    loss = joint_loss(ys, data.train_y[idx], weights)
                T.backward(loss)
            except T.NonFiniteError as e:
                raise TrainingDiverged(_diagnostic(model, epoch, b) + f" ({e})") from e
            opt.step()
            running += loss.item() * len(idx)
            seen += len(idx)
        val = evaluate_loss(model, data.val_x, data.val_y, weights)
        if not np.isfinite(val):
            raise TrainingDiverged(_diagnostic(model, epoch, -1))
        row = {"epoch": epoch, "train_loss": running / seen, "val_loss": val}
        result.history.append(row)
        if stopper.step(val, epoch):
            result.best_state = model.state_dict()
            result.best_epoch = epoch
        log.info("epoch %d train %.6f val %.6f", epoch, row["train_loss"], val)
        if on_epoch is not None:
            on_epoch(row)
        result.stopped_epoch = epoch
        if stopper.should_stop:
            break
    model.load_state_dict(result.best_state)
    return result
