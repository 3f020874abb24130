"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, no_tape


def numeric_grad(f: Callable[[], Tensor], p: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``p.data``."""
    grad = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_tape():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            hi = f().item()
            flat[k] = orig - eps
            lo = f().item()
            flat[k] = orig
            gflat[k] = (hi - lo) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a|, |n|)`` in the 2-norm over the whole tensor."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(
    f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5
) -> list[float]:
    """Relative error of the tape gradient of ``f`` for each of ``params``."""
    with Tape():
        root = f()
        grads = backward(root, params)
    return [relative_error(grads[p], numeric_grad(f, p, eps)) for p in params]
