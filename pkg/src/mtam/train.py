"""Mini-batch SGD with the stepwise exponential learning-rate schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ContractError, NumericError
from .model import ModelConfig, ModelParams, examples_to_batch, loss_from_batch
from .seeding import Streams

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    decay: float = 0.995
    decay_every: int = 100
    l2: float = 1e-5
    dropout: float = 0.5
    batch_size: int = 128
    epochs: int | None = None
    max_epochs: int = 30
    plateau_tol: float = 1e-4
    seed: int = 0
    d: int = 128
    max_len: int = 50
    hops: int = 1
    variant: str = "mtam"
    time_divisor: float = 1.0
    optimizer: str = "sgd"
    init: str = "uniform"

    def __post_init__(self):
        for name in ("lr0", "decay", "dropout"):
            v = getattr(self, name)
            if not (0 < v <= 1 or (name == "dropout" and v == 0)):
                raise ContractError(f"{name} must be in (0, 1], got {v}")
        if not 0 <= self.l2 <= 1:
            raise ContractError(f"l2 must be in [0, 1], got {self.l2}")
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")

    def learning_rate(self, iteration: int) -> float:
        return self.lr0 * self.decay ** (iteration // self.decay_every)

    def model_config(self, n_items: int, n_categories: int) -> ModelConfig:
        return ModelConfig(n_items=n_items, n_categories=n_categories, d=self.d, max_len=self.max_len,
                           memory_slots=self.max_len, hops=self.hops, variant=self.variant,
                           dropout=self.dropout, l2=self.l2, time_divisor=self.time_divisor,
                           init=self.init)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: ModelParams
    trace: list = field(default_factory=list)
    epochs_run: int = 0

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iteration\tlr\tloss\n")
            for it, lr, loss in self.trace:
                fh.write(f"{it}\t{lr!r}\t{loss!r}\n")


class _Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, named, lr):
        self.t += 1
        for name, p in named.items():
            if p.grad is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(p.values))
            v = self.v.setdefault(name, np.zeros_like(p.values))
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p.values -= lr * mhat / (np.sqrt(vhat) + self.eps)


def sgd_step(named: dict, lr: float) -> None:
    for p in named.values():
        if p.grad is not None:
            p.values -= lr * p.grad


def grad_norm(named: dict) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in named.values() if p.grad is not None))


def train(params: ModelParams, examples: list, cfg: TrainConfig, callback=None) -> TrainResult:
    """Fit ``params`` in place on ``examples`` and return them with the loss trace.

    With ``cfg.epochs`` unset, training stops once an epoch improves the mean
    loss by less than ``cfg.plateau_tol`` (relative), or after ``cfg.max_epochs``.
    """
    if not examples:
        raise ContractError("no training examples")
    streams = Streams(cfg.seed)
    shuffle_rng = streams["shuffle"]
    dropout_rng = streams["dropout"] if cfg.dropout > 0 else None
    named = params.active_parameters()
    adam = _Adam() if cfg.optimizer == "adam" else None
    result = TrainResult(params)
    n_epochs = cfg.epochs if cfg.epochs is not None else cfg.max_epochs
    it = 0
    prev = None
    last_norm = float("nan")
    for epoch in range(n_epochs):
        order = shuffle_rng.permutation(len(examples))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = examples_to_batch([examples[i] for i in order[lo:lo + cfg.batch_size]], params.config.max_len)
            lr = cfg.learning_rate(it)
            params.zero_grad()
            try:
                with ag.Tape() as tape:
                    loss = loss_from_batch(params, batch, dropout_rng, cfg.l2)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError("loss is not finite")
                ag.backward(tape, loss)
            except NumericError as exc:
                raise NumericError(f"training diverged at iteration {it} (lr={lr:g}, "
                                   f"last grad norm={last_norm:.4g}): {exc}") from None
            last_norm = grad_norm(named)
            if adam is None:
                sgd_step(named, lr)
            else:
                adam.step(named, lr)
            result.trace.append((it, lr, value))
            if callback is not None:
                callback(it, lr, value)
            epoch_loss += value
            n_batches += 1
            it += 1
        result.epochs_run = epoch + 1
        mean = epoch_loss / max(n_batches, 1)
        log.info("epoch %d: mean loss %.5f (lr %.3g)", epoch + 1, mean, cfg.learning_rate(it))
        if cfg.epochs is None and prev is not None and (prev - mean) < cfg.plateau_tol * abs(prev):
            break
        prev = mean
    params.zero_grad()
    return result
