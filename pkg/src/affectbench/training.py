"""AdamW optimization and the epoch loop with best-validation checkpointing.

Determinism contract: given (seed, data, config) the per-epoch losses and
the resulting checkpoint bytes are identical across runs.  Shuffling and
dropout each consume their own sub-stream derived from the config seed,
so neither perturbs the other.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from affectbench.autodiff import Tape, Tensor, softmax_cross_entropy
from affectbench.errors import NumericsError
from affectbench.model import (
    Checkpoint,
    CheckpointMeta,
    EmotionNet,
    checkpoint_from_model,
)
from affectbench.rng import ROLE_DROPOUT, ROLE_SHUFFLE, Rng

# Fixed evaluation chunk so dataset-mean losses do not depend on caller
# batch sizes (summation order would differ).
_EVAL_BATCH = 256


@dataclass
class TrainConfig:
    max_epochs: int = 1000
    batch_size: int = 64
    shuffle: bool = True
    seed: int = 0
    # When set, validation losses are computed from parameters rounded
    # through float32, matching what a restored checkpoint would score.
    eval_f32: bool = False
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2

    def validate(self) -> None:
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in u64")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2

    @classmethod
    def init(cls, params: dict[str, np.ndarray], lr: float = 1e-3,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
             weight_decay: float = 1e-2) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            weight_decay=weight_decay,
        )

    @classmethod
    def from_config(cls, params: dict[str, np.ndarray],
                    cfg: TrainConfig) -> "AdamWState":
        return cls.init(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                        eps=cfg.eps, weight_decay=cfg.weight_decay)


def adamw_step(state: AdamWState, params: dict[str, np.ndarray],
               grads: dict[str, np.ndarray]) -> None:
    """One in-place AdamW update over every parameter.

    Weight decay is decoupled: it scales the pre-update parameter value
    directly and never enters the moment estimates.  All gradients are
    checked finite before anything mutates, so a bad step leaves params
    and state untouched.
    """
    for name, theta in params.items():
        if name not in grads:
            raise ValueError(f"missing gradient for {name}")
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(
                f"gradient shape {g.shape} != parameter shape {theta.shape} "
                f"for {name}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for {name}; step aborted")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, theta in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        decay = state.lr * state.weight_decay * theta
        theta -= update
        theta -= decay


@dataclass
class TrainReport:
    config: TrainConfig
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    wall_seconds: float = 0.0

    @property
    def epochs_run(self) -> int:
        return len(self.val_losses)

    def to_jsonl(self) -> str:
        """One epoch per line.  Wall-clock time is deliberately omitted
        so reruns of the same seed produce identical bytes."""
        lines = []
        for i, (tl, vl) in enumerate(zip(self.train_losses, self.val_losses)):
            lines.append(json.dumps(
                {"epoch": i, "train_loss": tl, "val_loss": vl,
                 "best": i == self.best_epoch},
                sort_keys=True,
            ))
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())


def as_xy(windows) -> tuple[np.ndarray, np.ndarray]:
    """Coerce a window collection to (X [N,C,L] float64, y [N] int64).

    Accepts a (X, y) pair of arrays or a sequence of objects with
    ``signal`` and ``label`` attributes.
    """
    if isinstance(windows, tuple) and len(windows) == 2:
        x, y = windows
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
    else:
        seq = list(windows)
        if not seq:
            return (np.zeros((0, 0, 0)), np.zeros((0,), dtype=np.int64))
        x = np.stack([np.asarray(w.signal, dtype=np.float64) for w in seq])
        y = np.array([int(w.label) for w in seq], dtype=np.int64)
    if x.ndim != 3 or x.shape[0] != y.shape[0]:
        raise ValueError(f"windows must stack to [N,C,L]; got {x.shape}")
    return x, y


def evaluate(model: EmotionNet, windows) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and argmax predictions over a window set.

    Pure: no dropout, no parameter mutation; calling twice returns
    bitwise-equal results.
    """
    x, y = as_xy(windows)
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot evaluate an empty window set")
    total = 0.0
    preds = np.empty(n, dtype=np.int64)
    for s in range(0, n, _EVAL_BATCH):
        xb = x[s:s + _EVAL_BATCH]
        yb = y[s:s + _EVAL_BATCH]
        logits = model.forward(xb, mode="eval")
        loss = softmax_cross_entropy(Tensor(logits), yb)
        total += loss.item() * xb.shape[0]
        preds[s:s + _EVAL_BATCH] = np.argmax(logits, axis=1)
    mean_loss = total / n
    if not np.isfinite(mean_loss):
        raise NumericsError(f"non-finite evaluation loss {mean_loss}")
    return mean_loss, preds


def train(model: EmotionNet, train_windows, val_windows,
          cfg: Optional[TrainConfig] = None) -> tuple[Checkpoint, TrainReport]:
    """Epoch loop keeping the checkpoint with the lowest validation loss.

    Ties keep the earlier epoch (strict improvement required).  The last
    partial mini-batch is trained on rather than dropped.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    x_train, y_train = as_xy(train_windows)
    x_val, y_val = as_xy(val_windows)
    if x_train.shape[0] == 0:
        raise ValueError("empty training split")
    if x_val.shape[0] == 0:
        raise ValueError("empty validation split")

    shuffle_rng = Rng.derived(cfg.seed, ROLE_SHUFFLE)
    dropout_rng = Rng.derived(cfg.seed, ROLE_DROPOUT)
    state = AdamWState.from_config(model.params, cfg)
    report = TrainReport(config=cfg)
    best_ckpt: Optional[Checkpoint] = None
    n = x_train.shape[0]
    started = time.perf_counter()

    for epoch in range(cfg.max_epochs):
        order = list(range(n))
        if cfg.shuffle:
            shuffle_rng.shuffle(order)
        order = np.asarray(order)
        epoch_total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            xb = x_train[idx]
            yb = y_train[idx]
            tape = Tape()
            logits, ptensors = model.forward_tracked(tape, xb, "train",
                                                     dropout_rng)
            loss = softmax_cross_entropy(logits, yb)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise NumericsError(
                    f"non-finite training loss {loss_val} at epoch {epoch}"
                )
            tape.backward(loss)
            grads = {name: tape.grad(t) for name, t in ptensors.items()}
            adamw_step(state, model.params, grads)
            epoch_total += loss_val * xb.shape[0]
        report.train_losses.append(epoch_total / n)

        val_model = _eval_view(model) if cfg.eval_f32 else model
        val_loss, _ = evaluate(val_model, (x_val, y_val))
        report.val_losses.append(val_loss)
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_ckpt = checkpoint_from_model(
                model,
                CheckpointMeta(model.cfg, cfg.seed, epoch, val_loss),
            )

    report.wall_seconds = time.perf_counter() - started
    assert best_ckpt is not None
    return best_ckpt, report


def _eval_view(model: EmotionNet) -> EmotionNet:
    """Model whose parameters went through float32, as a checkpoint would."""
    return EmotionNet(
        model.cfg,
        {k: v.astype(np.float32).astype(np.float64)
         for k, v in model.params.items()},
    )
