"""Optimizers, warmup schedule and the deterministic training loop."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .checkpoint import ModelCheckpoint
from .data import Dataset, iter_batches
from .nn import MLP, ModelConfig, build_model

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 20
    peak_lr: float = 1e-3
    base_lr: float = 1e-4
    warmup_epochs: float = 5
    weight_decay: float = 0.0
    optimizer: str = "adam"
    shuffle_seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        # a 0-epoch run (checkpoint of the initialization) ignores the warmup length
        if self.warmup_epochs < 0 or (self.epochs > 0 and self.warmup_epochs > self.epochs):
            raise ValueError("need 0 <= warmup_epochs <= epochs")
        if min(self.peak_lr, self.base_lr, self.weight_decay, self.eps) < 0:
            raise ValueError("rates must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be adam or sgd")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    param_hash: str = ""

    def jsonl(self) -> str:
        lines = []
        for e in range(len(self.train_loss)):
            rec = {"epoch": e + 1, "train_loss": self.train_loss[e], "train_acc": self.train_acc[e]}
            if self.val_loss:
                rec["val_loss"], rec["val_acc"] = self.val_loss[e], self.val_acc[e]
            lines.append(json.dumps(rec))
        lines.append(json.dumps({"wall_time": self.wall_time, "param_hash": self.param_hash}))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- schedule / optimizers

def lr_at(step: int, config: TrainConfig, steps_per_epoch: int) -> float:
    """Linear warmup from ``base_lr`` to ``peak_lr``, then constant."""
    warmup = config.warmup_epochs * steps_per_epoch
    if warmup <= 0 or step >= warmup:
        return config.peak_lr
    return config.base_lr + (config.peak_lr - config.base_lr) * (step / warmup)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray | None], state: AdamState,
              lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0,
              masks: list[np.ndarray | None] | None = None) -> None:
    """In-place Adam update with decoupled weight decay; ``masks`` select the updatable entries."""
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameters")
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    masks = masks or [None] * len(params)
    for p, g, m, v, mask in zip(params, grads, state.m, state.v, masks):
        if g is None:
            continue
        if mask is not None:
            g = np.where(mask, g, 0.0)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            step = step + lr * weight_decay * p
        if mask is None:
            p -= step
        else:
            p[mask] -= step[mask]


def sgd_step(params, grads, lr: float, weight_decay: float = 0.0, masks=None) -> None:
    masks = masks or [None] * len(params)
    for p, g, mask in zip(params, grads, masks):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
        step = lr * (g + weight_decay * p)
        if mask is None:
            p -= step
        else:
            p[mask] -= step[mask]


# ---------------------------------------------------------------- loops

def evaluate(model: MLP, ds: Dataset, batch_size: int = 1000) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over the whole dataset (no sampling)."""
    total_loss = 0.0
    correct = 0
    with ag.no_grad():
        for start in range(0, len(ds), batch_size):
            x = ds.inputs[start:start + batch_size]
            y = ds.labels[start:start + batch_size]
            logits = model(x)
            total_loss += ag.softmax_cross_entropy(logits, y).item() * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
    return total_loss / len(ds), correct / len(ds)


def params_hash(params: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name, arr in params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def train(model: MLP, dataset: Dataset, config: TrainConfig, val: Dataset | None = None,
          report_path: str | Path | None = None) -> tuple[ModelCheckpoint, TrainReport]:
    config.validate()
    if dataset.dim != model.config.widths[0] or dataset.num_classes != model.config.widths[-1]:
        raise ValueError("dataset does not match model input/output widths")
    named = model.named_params()
    masks_by_name = model.trainable_masks()
    params = [p for _, p in named]
    masks = [masks_by_name[n] for n, _ in named]
    state = AdamState.zeros_like([p.data for p in params])
    steps_per_epoch = -(-len(dataset) // config.batch_size)
    report = TrainReport()
    t0 = time.perf_counter()
    step = 0
    for epoch in range(config.epochs):
        loss_sum, correct = 0.0, 0
        for x, y in iter_batches(dataset, config.batch_size, config.shuffle_seed, epoch):
            try:
                logits = model(x)
                loss = ag.softmax_cross_entropy(logits, y)
                model.zero_grad()
                ag.backward(loss)
                lr = lr_at(step, config, steps_per_epoch)
                grads = [p.grad for p in params]
                if config.optimizer == "adam":
                    adam_step([p.data for p in params], grads, state, lr, config.betas, config.eps,
                              config.weight_decay, masks)
                else:
                    sgd_step([p.data for p in params], grads, lr, config.weight_decay, masks)
            except (ag.NonFiniteError, DivergenceError) as e:
                raise DivergenceError(f"diverged at epoch {epoch + 1}, step {step}: {e}") from e
            step += 1
            loss_sum += loss.item() * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
        report.train_loss.append(loss_sum / len(dataset))
        report.train_acc.append(correct / len(dataset))
        if val is not None:
            vl, va = evaluate(model, val)
            report.val_loss.append(vl)
            report.val_acc.append(va)
        log.info("epoch %d loss %.4f acc %.4f", epoch + 1, report.train_loss[-1], report.train_acc[-1])
    model.zero_grad()
    report.wall_time = time.perf_counter() - t0
    ckpt = ModelCheckpoint.from_model(model, {"train": config.to_dict(), "epochs_done": config.epochs})
    report.param_hash = params_hash(ckpt.params)
    if report_path is not None:
        Path(report_path).write_text(report.jsonl())
    return ckpt, report


def train_pair(model_config: ModelConfig, dataset: Dataset, config: TrainConfig,
               init_seeds: tuple[int, int] = (1, 2), shuffle_seeds: tuple[int, int] | None = None,
               val: Dataset | None = None):
    """Train two models that share the asymmetry payload but differ in init and batch order."""
    shuffle_seeds = shuffle_seeds or init_seeds
    out = []
    hashes = []
    for init_seed, shuffle_seed in zip(init_seeds, shuffle_seeds):
        cfg = ModelConfig.from_dict({**model_config.to_dict(), "init_seed": init_seed})
        model = build_model(cfg)
        hashes.append(model.asym_hash())
        tcfg = TrainConfig.from_dict({**config.to_dict(), "shuffle_seed": shuffle_seed})
        out.append(train(model, dataset, tcfg, val))
    if hashes[0] != hashes[1] or out[0][0].asym_hash != out[1][0].asym_hash:
        raise RuntimeError("asymmetry payload differs between the pair")
    return out[0], out[1]
