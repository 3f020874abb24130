"""Parameter containers shared by the models."""
from __future__ import annotations

import numpy as np

from . import tensor as tn
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape).astype(dtype)


class Linear:
    """Affine map ``b = W(a)`` with weight ``(out, in)`` and bias ``(out,)``."""

    def __init__(self, n_in, n_out, rng, name, dtype=np.float64, zero=False):
        w = np.zeros((n_out, n_in), dtype) if zero else uniform_init(rng, (n_out, n_in), n_in, dtype)
        self.W = tn.parameter(w, name=f"{name}.W")
        self.b = tn.parameter(np.zeros(n_out, dtype), name=f"{name}.b")

    def __call__(self, a: Tensor) -> Tensor:
        return tn.linear(self.W, self.b, a)

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]


class Module:
    """Anything holding named parameter tensors."""

    def parameters(self) -> list[Tensor]:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        named = self.named_parameters()
        missing = set(named) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in named.items():
            value = np.asarray(arrays[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape}, expected {p.shape}")
            p.data = value.astype(p.dtype)

    def batch_bias(self, p: Tensor, n: int) -> Tensor:
        """Repeat a learned bias tensor along a new leading batch axis."""
        return tn.broadcast_to(tn.reshape(p, (1,) + p.shape), (n,) + p.shape)
