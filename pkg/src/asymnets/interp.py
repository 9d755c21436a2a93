"""Linear interpolation in parameter space: barriers, curves and MLI statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .checkpoint import ModelCheckpoint, check_compatible
from .data import Dataset
from .train import evaluate

LossFn = Callable[[ModelCheckpoint], float]


@dataclass
class InterpCurve:
    alphas: np.ndarray
    losses: np.ndarray
    accuracies: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "loss", "accuracy"])
        for a, l, acc in zip(self.alphas, self.losses, self.accuracies):
            w.writerow([repr(float(a)), repr(float(l)), repr(float(acc))])
        return buf.getvalue()


@dataclass
class MliReport:
    delta: float
    monotone: bool
    local_convexity: float
    global_convexity: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def interpolate_params(a: ModelCheckpoint, b: ModelCheckpoint, alpha: float) -> dict[str, np.ndarray]:
    """``(1 - alpha) * a + alpha * b`` over every parameter array; payloads must match."""
    check_compatible(a, b)
    if alpha == 0:
        return {k: v.copy() for k, v in a.params.items()}
    if alpha == 1:
        return {k: b.params[k].copy() for k in a.params}
    return {k: (1.0 - alpha) * a.params[k] + alpha * b.params[k] for k in a.params}


def interpolate(a: ModelCheckpoint, b: ModelCheckpoint, alpha: float) -> ModelCheckpoint:
    return a.with_params(interpolate_params(a, b, alpha), interpolated_alpha=alpha)


def dataset_loss(ds: Dataset) -> Callable[[ModelCheckpoint], tuple[float, float]]:
    def fn(ckpt: ModelCheckpoint) -> tuple[float, float]:
        return evaluate(ckpt.to_model(), ds)
    return fn


def _eval(ds_or_fn, ckpt: ModelCheckpoint) -> tuple[float, float]:
    if isinstance(ds_or_fn, Dataset):
        return evaluate(ckpt.to_model(), ds_or_fn)
    out = ds_or_fn(ckpt)
    return out if isinstance(out, tuple) else (float(out), math.nan)


def barrier(a: ModelCheckpoint, b: ModelCheckpoint, data) -> float:
    """Midpoint loss minus the mean endpoint loss.

    ``data`` is a :class:`Dataset` (cross-entropy over the whole set) or a callable
    mapping a checkpoint to a loss.
    """
    check_compatible(a, b)
    mid = a.with_params({k: 0.5 * a.params[k] + 0.5 * b.params[k] for k in a.params})
    la = _eval(data, a)[0]
    lb = _eval(data, b)[0]
    return _eval(data, mid)[0] - 0.5 * (la + lb)


def curve(a: ModelCheckpoint, b: ModelCheckpoint, data, n_points: int = 25) -> InterpCurve:
    if n_points < 3:
        raise ValueError("need at least 3 points")
    check_compatible(a, b)
    alphas = np.linspace(0.0, 1.0, n_points)
    losses, accs = [], []
    for alpha in alphas:
        loss, acc = _eval(data, interpolate(a, b, float(alpha)))
        losses.append(loss)
        accs.append(acc)
    return InterpCurve(alphas, np.array(losses), np.array(accs))


def mli_metrics(c: InterpCurve, rtol: float = 1e-9) -> MliReport:
    """Monotonicity and convexity statistics of a loss curve on a uniform grid."""
    alphas = np.asarray(c.alphas, dtype=np.float64)
    L = np.asarray(c.losses, dtype=np.float64)
    if len(alphas) < 3 or len(L) != len(alphas):
        raise ValueError("need at least 3 points and one loss per alpha")
    steps = np.diff(alphas)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=rtol, atol=0):
        raise ValueError("alpha grid must be uniform and increasing")
    delta = float(np.max(np.diff(L)))
    second = L[2:] - 2 * L[1:-1] + L[:-2]
    local = float(np.mean(second >= 0))
    a0, a1 = alphas[0], alphas[-1]
    t = (alphas - a0) / (a1 - a0)
    chord = (1 - t) * L[0] + t * L[-1]
    glob = float(np.mean(L <= chord))
    return MliReport(delta, delta <= 0, local, glob)


def distance_per_parameter(a: ModelCheckpoint, b: ModelCheckpoint) -> float:
    """L2 distance between trainable vectors divided by the trainable count."""
    check_compatible(a, b)
    va, vb = a.trainable_vector(), b.trainable_vector()
    return float(np.linalg.norm(va - vb) / va.size)
