from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor


class ParamSet(dict):
    """Ordered name -> :class:`Tensor` mapping holding one set of trainable weights.

    Iteration order is insertion order. Instances are treated as immutable by
    the meta-learning code: updates build a new ``ParamSet``.
    """

    def numel(self) -> int:
        return int(sum(t.size for t in self.values()))

    def map(self, fn: Callable[[str, Tensor], Tensor]) -> "ParamSet":
        return ParamSet((k, fn(k, v)) for k, v in self.items())

    def detached(self, requires_grad: bool = True) -> "ParamSet":
        """Fresh graph leaves holding copies of the current values."""
        return ParamSet((k, Tensor(v.data.copy(), requires_grad=requires_grad)) for k, v in self.items())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    @classmethod
    def from_arrays(cls, arrays: Iterable[tuple[str, np.ndarray]] | dict, requires_grad: bool = True) -> "ParamSet":
        items = arrays.items() if isinstance(arrays, dict) else arrays
        return cls((k, Tensor(np.array(v), requires_grad=requires_grad)) for k, v in items)

    def congruent(self, other: "ParamSet") -> bool:
        return list(self.keys()) == list(other.keys()) and all(
            self[k].shape == other[k].shape for k in self)

    def astype(self, dtype) -> "ParamSet":
        return ParamSet((k, Tensor(v.data.astype(dtype), requires_grad=v.requires_grad)) for k, v in self.items())

    def flat(self) -> np.ndarray:
        if not self:
            return np.zeros(0)
        return np.concatenate([v.data.reshape(-1) for v in self.values()])

    def allclose(self, other: "ParamSet", atol: float = 0.0) -> bool:
        return self.congruent(other) and all(
            np.allclose(self[k].data, other[k].data, rtol=0.0, atol=atol) for k in self)
