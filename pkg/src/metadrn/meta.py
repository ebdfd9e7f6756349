"""Gradient-based meta-learning: MAML, first-order MAML, Meta-SGD and Reptile.

All algorithms take a ``loss_fn(params, samples) -> scalar Tensor`` and tasks
exposing ``.support`` and ``.query`` sample lists. They never mutate the
``ParamSet`` they are given; per-task gradients are reduced in task order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .params import ParamSet
from .tensor import NumericError, Tensor

LossFn = Callable[[ParamSet, Sequence], Tensor]

ALGORITHMS = ("maml", "fomaml", "metasgd", "reptile")


@dataclass
class InnerLoopConfig:
    alpha: float = 1e-3
    steps: int = 1
    eval_steps: int | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("inner learning rate must be non-negative")
        if self.steps < 1:
            raise ValueError("inner steps must be >= 1")
        if self.eval_steps is None:
            self.eval_steps = self.steps


@dataclass
class MetaGradient:
    theta: dict[str, np.ndarray]
    alpha: dict[str, np.ndarray] | None = None
    loss: float = math.nan

    def named(self) -> dict[str, np.ndarray]:
        out = {f"theta/{k}": v for k, v in self.theta.items()}
        if self.alpha is not None:
            out.update({f"alpha/{k}": v for k, v in self.alpha.items()})
        return out


def init_alpha(theta: ParamSet, value: float = 1e-3) -> ParamSet:
    """Per-parameter Meta-SGD learning rates, congruent to ``theta``."""
    return ParamSet((k, Tensor(np.full(v.shape, value, dtype=v.dtype), requires_grad=True))
                    for k, v in theta.items())


def _check_loss(loss: Tensor, where: str) -> None:
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite {where} loss")


def _adapt(theta: ParamSet, support, alpha: float, steps: int, loss_fn: LossFn,
           alpha_override: ParamSet | None, track_graph: bool) -> tuple[ParamSet, float]:
    params = theta if track_graph else theta.detached()
    last = math.nan
    for _ in range(steps):
        loss = loss_fn(params, support)
        _check_loss(loss, "support")
        last = loss.item()
        grads = T.backward(loss, params, create_graph=track_graph)
        if track_graph:
            if alpha_override is not None:
                params = ParamSet((k, p - alpha_override[k] * grads[k]) for k, p in params.items())
            else:
                params = ParamSet((k, p - T.scalar_mul(grads[k], alpha)) for k, p in params.items())
        else:
            if alpha_override is not None:
                new = ((k, p.data - alpha_override[k].data * grads[k].data) for k, p in params.items())
            else:
                new = ((k, p.data - p.dtype.type(alpha) * grads[k].data) for k, p in params.items())
            params = ParamSet((k, Tensor(v, requires_grad=True)) for k, v in new)
    return params, last


def inner_adapt(theta: ParamSet, support, cfg: InnerLoopConfig, loss_fn: LossFn,
                alpha_override: ParamSet | None = None, track_graph: bool = False,
                steps: int | None = None) -> ParamSet:
    """Fast weights after ``cfg.steps`` gradient steps on the support set.

    With ``track_graph`` the result stays differentiable with respect to
    ``theta`` (and ``alpha_override``); otherwise it is a fresh set of leaves.
    """
    if not support:
        raise ValueError("support set is empty")
    steps = cfg.steps if steps is None else steps
    params, _ = _adapt(theta, support, cfg.alpha, steps, loss_fn, alpha_override, track_graph)
    return params


def _mean(acc: dict[str, np.ndarray] | None, n: int) -> dict[str, np.ndarray]:
    return {k: v / v.dtype.type(n) for k, v in acc.items()}


def _accumulate(acc: dict[str, np.ndarray] | None, grads: dict[str, Tensor]) -> dict[str, np.ndarray]:
    if acc is None:
        return {k: g.data.copy() for k, g in grads.items()}
    for k, g in grads.items():
        acc[k] += g.data
    return acc


def _require_query(tasks) -> None:
    if not tasks:
        raise ValueError("empty task batch")
    for task in tasks:
        if not task.query:
            raise ValueError("every task needs a nonempty query set")


def maml_meta_grad(theta: ParamSet, tasks, cfg: InnerLoopConfig, loss_fn: LossFn) -> MetaGradient:
    """Second-order MAML: differentiate the query loss through the inner updates."""
    _require_query(tasks)
    base = theta.detached()
    acc, losses = None, []
    for task in tasks:
        adapted = inner_adapt(base, task.support, cfg, loss_fn, track_graph=True)
        q = loss_fn(adapted, task.query)
        _check_loss(q, "query")
        losses.append(q.item())
        acc = _accumulate(acc, T.backward(q, base))
    return MetaGradient(_mean(acc, len(tasks)), loss=float(np.mean(losses)))


def fomaml_meta_grad(theta: ParamSet, tasks, cfg: InnerLoopConfig, loss_fn: LossFn) -> MetaGradient:
    """First-order MAML: the query gradient at the fast weights, applied at ``theta``."""
    _require_query(tasks)
    acc, losses = None, []
    for task in tasks:
        adapted = inner_adapt(theta, task.support, cfg, loss_fn, track_graph=False)
        q = loss_fn(adapted, task.query)
        _check_loss(q, "query")
        losses.append(q.item())
        acc = _accumulate(acc, T.backward(q, adapted))
    return MetaGradient(_mean(acc, len(tasks)), loss=float(np.mean(losses)))


def metasgd_meta_grad(theta: ParamSet, alpha: ParamSet, tasks, cfg: InnerLoopConfig,
                      loss_fn: LossFn) -> MetaGradient:
    """Meta-SGD: gradients of the query loss for both the init and the per-parameter rates."""
    _require_query(tasks)
    if not theta.congruent(alpha):
        raise ValueError("alpha must be congruent to theta")
    base, rates = theta.detached(), alpha.detached()
    keys = list(base)
    wrt = [*base.values(), *rates.values()]
    acc_t = acc_a = None
    losses = []
    for task in tasks:
        adapted = inner_adapt(base, task.support, cfg, loss_fn, alpha_override=rates, track_graph=True)
        q = loss_fn(adapted, task.query)
        _check_loss(q, "query")
        losses.append(q.item())
        grads = T.backward(q, wrt)
        acc_t = _accumulate(acc_t, dict(zip(keys, grads[:len(keys)])))
        acc_a = _accumulate(acc_a, dict(zip(keys, grads[len(keys):])))
    n = len(tasks)
    return MetaGradient(_mean(acc_t, n), _mean(acc_a, n), loss=float(np.mean(losses)))


def reptile_meta_grad(theta: ParamSet, tasks, cfg: InnerLoopConfig, loss_fn: LossFn) -> MetaGradient:
    """Reptile: ``theta - theta'`` after k support-set steps, averaged over tasks.

    The sign is chosen so that a descent step with rate beta moves theta by
    ``beta * (theta' - theta)``.
    """
    if not tasks:
        raise ValueError("empty task batch")
    acc, losses = None, []
    for task in tasks:
        if not task.support:
            raise ValueError("support set is empty")
        adapted, last = _adapt(theta, task.support, cfg.alpha, cfg.steps, loss_fn, None, False)
        losses.append(last)
        diff = {k: Tensor(theta[k].data - adapted[k].data) for k in theta}
        acc = _accumulate(acc, diff)
    return MetaGradient(_mean(acc, len(tasks)), loss=float(np.mean(losses)))


@dataclass
class MetaState:
    theta: ParamSet
    alpha: ParamSet | None = None

    def named(self) -> dict[str, np.ndarray]:
        out = {f"theta/{k}": v.data for k, v in self.theta.items()}
        if self.alpha is not None:
            out.update({f"alpha/{k}": v.data for k, v in self.alpha.items()})
        return out

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray]) -> "MetaState":
        theta = ParamSet.from_arrays([(k[6:], v) for k, v in arrays.items() if k.startswith("theta/")])
        alpha_items = [(k[6:], v) for k, v in arrays.items() if k.startswith("alpha/")]
        return cls(theta, ParamSet.from_arrays(alpha_items) if alpha_items else None)


def initial_state(algorithm: str, theta: ParamSet, alpha_init: float = 1e-3) -> MetaState:
    check_algorithm(algorithm)
    return MetaState(theta, init_alpha(theta, alpha_init) if algorithm == "metasgd" else None)


def check_algorithm(name: str) -> None:
    if name not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")


def meta_gradient(algorithm: str, state: MetaState, tasks, cfg: InnerLoopConfig,
                  loss_fn: LossFn) -> MetaGradient:
    check_algorithm(algorithm)
    if algorithm == "maml":
        return maml_meta_grad(state.theta, tasks, cfg, loss_fn)
    if algorithm == "fomaml":
        return fomaml_meta_grad(state.theta, tasks, cfg, loss_fn)
    if algorithm == "metasgd":
        return metasgd_meta_grad(state.theta, state.alpha, tasks, cfg, loss_fn)
    return reptile_meta_grad(state.theta, tasks, cfg, loss_fn)


def adapt_for_eval(algorithm: str, state: MetaState, support, cfg: InnerLoopConfig,
                   loss_fn: LossFn) -> ParamSet:
    """Test-time adaptation: ``cfg.eval_steps`` untracked steps (learned rates for Meta-SGD)."""
    alpha = state.alpha if algorithm == "metasgd" else None
    return inner_adapt(state.theta, support, cfg, loss_fn, alpha_override=alpha,
                       track_graph=False, steps=cfg.eval_steps)


def clamp_alpha(state: MetaState, low: float = 0.0) -> MetaState:
    """Meta-SGD rates clipped from below; they are otherwise free to change sign."""
    alpha = ParamSet((k, Tensor(np.maximum(v.data, v.dtype.type(low)), requires_grad=True))
                     for k, v in state.alpha.items())
    return MetaState(state.theta, alpha)


def apply_sgd(state: MetaState, grad: MetaGradient, lr: float) -> MetaState:
    """Plain gradient descent on the meta-parameters (useful as a reference outer optimizer)."""
    theta = ParamSet((k, Tensor(v.data - lr * grad.theta[k], requires_grad=True)) for k, v in state.theta.items())
    alpha = None
    if state.alpha is not None:
        alpha = ParamSet((k, Tensor(v.data - lr * grad.alpha[k], requires_grad=True))
                         for k, v in state.alpha.items())
    return MetaState(theta, alpha)
