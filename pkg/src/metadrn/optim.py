"""Outer-loop optimizer and learning-rate schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError


@dataclass
class AdamW:
    """AdamW with decoupled weight decay over named numpy arrays.

    Moments persist across calls to :meth:`step`; parameters are never
    modified in place.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
        if set(params) != set(grads):
            raise ValueError("gradients are not congruent to the parameters")
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ValueError(f"gradient shape mismatch for {k}: {g.shape} vs {params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {k}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        out = {}
        for k, p in params.items():
            g = grads[k]
            m = self.m.get(k)
            v = self.v.get(k)
            if m is None:
                m = np.zeros_like(p)
                v = np.zeros_like(p)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.m[k], self.v[k] = m.astype(p.dtype, copy=False), v.astype(p.dtype, copy=False)
            new = p * (1.0 - lr * self.weight_decay)
            new = new - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            out[k] = new.astype(p.dtype, copy=False)
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam/t": np.array([self.t], dtype=np.int64)}
        for k in self.m:
            out[f"adam/m/{k}"] = self.m[k]
            out[f"adam/v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["adam/t"][0])
        self.m = {k[7:]: v for k, v in arrays.items() if k.startswith("adam/m/")}
        self.v = {k[7:]: v for k, v in arrays.items() if k.startswith("adam/v/")}


@dataclass
class PlateauSchedule:
    """Multiply the rate by ``factor`` once the monitored metric (higher is better)
    has failed to improve by more than ``threshold`` for more than ``patience`` epochs."""

    base_lr: float = 1e-3
    factor: float = 0.5
    patience: int = 8
    threshold: float = 1e-4
    lr: float = math.nan
    best: float = -math.inf
    num_bad: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError("plateau factor must lie in (0, 1)")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if math.isnan(self.lr):
            self.lr = self.base_lr

    def lr_at(self, epoch: int) -> float:
        return self.lr

    def observe(self, metric: float) -> float:
        if metric > self.best + self.threshold:
            self.best = metric
            self.num_bad = 0
        else:
            self.num_bad += 1
        if self.num_bad > self.patience:
            self.lr *= self.factor
            self.num_bad = 0
        return self.lr

    def state_array(self) -> np.ndarray:
        return np.array([self.lr, self.best, float(self.num_bad)], dtype=np.float64)

    def load_state_array(self, a: np.ndarray) -> None:
        self.lr, self.best, self.num_bad = float(a[0]), float(a[1]), int(a[2])


@dataclass
class LinearSchedule:
    start: float = 3e-2
    end: float = 3e-5
    total_epochs: int = 200

    def __post_init__(self):
        if self.end > self.start:
            raise ValueError("linear schedule must not increase")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")

    def lr_at(self, epoch: int) -> float:
        e = min(max(epoch, 0), self.total_epochs)
        return self.start + (self.end - self.start) * e / self.total_epochs

    def observe(self, metric: float) -> float:
        return math.nan

    def state_array(self) -> np.ndarray:
        return np.zeros(3)

    def load_state_array(self, a: np.ndarray) -> None:
        pass


def schedule_lr(schedule: PlateauSchedule | LinearSchedule, epoch: int, history) -> float:
    """Learning rate for ``epoch`` given monitored metrics of the epochs before it.

    Pure: the schedule argument is used only as a configuration template.
    """
    if isinstance(schedule, LinearSchedule):
        return schedule.lr_at(epoch)
    fresh = PlateauSchedule(schedule.base_lr, schedule.factor, schedule.patience, schedule.threshold)
    for metric in list(history)[:epoch]:
        fresh.observe(metric)
    return fresh.lr
