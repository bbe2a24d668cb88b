"""Full-batch transductive training of the branch models."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import (
    DualBranchModel,
    PropagationOperator,
    backward,
    cross_entropy_grad,
    forward,
    fused_cross_entropy_grads,
    late_fuse,
    masked_cross_entropy,
    softmax_rows,
)
from .seeding import stage_rng


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    dropout: float = 0.5
    epochs: int | None = None  # None -> 100 for cheb, 300 for gcn
    k_order: int = 3
    hidden: int = 32
    seed: int = 0
    optimizer: str = "adam"
    use_bias: bool = True
    fuse_in_loss: bool = False
    keep_best: bool = False

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.epochs is not None and self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.k_order < 1:
            raise ValueError("Chebyshev order must be >= 1")
        if self.hidden < 1:
            raise ValueError("hidden size must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    def epochs_for(self, arch: str) -> int:
        if self.epochs is not None:
            return self.epochs
        return 100 if arch == "cheb" else 300


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    branch_val_acc: list[float]
    fused_val_acc: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_jsonl(self) -> str:
        """One JSON object per epoch; floats are written with round-trip precision."""
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainLog":
        return cls([EpochRecord(**json.loads(line)) for line in text.splitlines() if line.strip()])


class SGD:
    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, params, grads, decay_flags) -> None:
        for p, g, decay in zip(params, grads, decay_flags):
            if decay and self.weight_decay:
                g = g + self.weight_decay * p
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, weight_decay: float = 0.0, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params, grads, decay_flags) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, decay, m, v in zip(params, grads, decay_flags, self.m, self.v):
            if decay and self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.lr, cfg.weight_decay)
    return SGD(cfg.lr, cfg.weight_decay)


def _accuracy(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return float("nan")
    return float(np.mean(probs[rows].argmax(axis=1) == labels[rows]))


def train(
    model: DualBranchModel,
    props: list[PropagationOperator],
    xs: list[np.ndarray],
    labels,
    train_mask,
    val_mask,
    cfg: TrainConfig,
    epochs: int | None = None,
) -> tuple[DualBranchModel, TrainLog]:
    """Optimize every branch on the summed masked cross-entropy of the training nodes.

    Labels outside the train and validation masks are replaced by -1 before
    anything else happens, so test labels cannot influence training. The
    model is updated in place and returned with the per-epoch log.
    """
    train_mask = np.asarray(train_mask, dtype=bool)
    val_mask = np.asarray(val_mask, dtype=bool)
    visible = train_mask | val_mask
    labels = np.where(visible, np.asarray(labels, dtype=np.int64), -1)
    has_val = bool(val_mask.any())

    n_epochs = epochs if epochs is not None else cfg.epochs_for(model.branches[0].arch)
    optimizers = [make_optimizer(cfg) for _ in model.branches]
    dropout_rng = stage_rng(cfg.seed, "dropout")
    log = TrainLog()
    best = (-1.0, None)

    for epoch in range(1, n_epochs + 1):
        caches, probs = [], []
        for branch, prop, x in zip(model.branches, props, xs):
            logits, cache = forward(branch, prop, x, dropout_rng)
            caches.append(cache)
            probs.append(softmax_rows(logits))

        branch_losses = [masked_cross_entropy(p, labels, train_mask) for p in probs]
        if cfg.fuse_in_loss:
            train_loss = masked_cross_entropy(late_fuse(*probs), labels, train_mask)
            dlogits = fused_cross_entropy_grads(probs, labels, train_mask)
        else:
            train_loss = float(sum(branch_losses))
            dlogits = [cross_entropy_grad(p, labels, train_mask) for p in probs]
        if not math.isfinite(train_loss):
            raise TrainingDivergedError(epoch, train_loss)

        for branch, cache, dz, opt in zip(model.branches, caches, dlogits, optimizers):
            grads = backward(cache, dz)
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergedError(epoch, float("nan"))
            params = branch.parameters()
            opt.step([p for _, p, _ in params], grads, [w for _, _, w in params])
            branch.touch()

        eval_probs = [softmax_rows(forward(b, p, x)[0]) for b, p, x in zip(model.branches, props, xs)]
        fused = late_fuse(*eval_probs)
        if has_val:
            val_loss = float(sum(masked_cross_entropy(p, labels, val_mask) for p in eval_probs))
        else:
            val_loss = float("nan")
        record = EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            branch_val_acc=[_accuracy(p, labels, val_mask) for p in eval_probs],
            fused_val_acc=_accuracy(fused, labels, val_mask),
        )
        log.records.append(record)
        if cfg.keep_best and has_val and record.fused_val_acc > best[0]:
            best = (record.fused_val_acc, copy.deepcopy(model.branches))

    if cfg.keep_best and best[1] is not None:
        model.branches = best[1]
        for b in model.branches:
            b.touch()
    return model, log

