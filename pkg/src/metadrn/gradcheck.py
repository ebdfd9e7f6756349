"""Finite-difference checks for the autodiff core (run them in float64)."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _scalarize(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.sum(T.mul(out, Tensor(weights)))


def numeric_grad(fn: Callable[[], float], arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of ``fn`` with respect to every entry of ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn()
        flat[i] = orig - eps
        lo = fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], seed: int = 0,
              eps: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients of ``f``.

    ``f`` maps tensors to a tensor; it is reduced to a scalar with fixed random weights.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    with T.default_dtype(np.float64):
        probe = f(*[Tensor(a, requires_grad=True) for a in arrays])
        weights = np.random.default_rng(seed).standard_normal(probe.shape)
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        analytic = T.backward(_scalarize(f(*leaves), weights), leaves)

        def value() -> float:
            # leaves require grad so that f may itself differentiate (gradgradcheck)
            return _scalarize(f(*[Tensor(a, requires_grad=True) for a in arrays]), weights).item()

        worst = 0.0
        for a, g in zip(arrays, analytic):
            worst = max(worst, rel_error(g.data, numeric_grad(value, a, eps)))
    return worst


def gradgradcheck(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], seed: int = 0,
                  eps: float = 1e-6) -> float:
    """Finite-difference check of the graph-attached gradients of ``f`` (double backprop)."""
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    with T.default_dtype(np.float64):
        probe = f(*[Tensor(a) for a in arrays])
    weights = np.random.default_rng(seed).standard_normal(probe.shape)
    gweights = [np.random.default_rng(seed + 1 + i).standard_normal(a.shape) for i, a in enumerate(arrays)]

    def first_grads(*xs: Tensor) -> Tensor:
        grads = T.backward(_scalarize(f(*xs), weights), list(xs), create_graph=True)
        total = None
        for g, w in zip(grads, gweights):
            term = T.sum(T.mul(g, Tensor(w)))
            total = term if total is None else T.add(total, term)
        return total

    return gradcheck(first_grads, arrays, seed=seed, eps=eps)
