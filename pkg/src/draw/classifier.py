"""Glimpse classifier: an LSTM that takes one attentive N x N read per step
and classifies from its last hidden state.

With ``attention=False`` the same network sees a fixed, whole-image
downsampling to N x N at every step instead (the no-attention baseline).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attention as att
from . import tensor as tn
from .nn import Linear, Module
from .recurrent import LstmCell, LstmState
from .tensor import Tensor


@dataclass
class ClassifierConfig:
    glimpses: int = 8
    H: int = 256
    N: int = 12
    A: int = 100
    B: int = 100
    classes: int = 10
    attention: bool = True

    def __post_init__(self):
        if self.glimpses < 1:
            raise ValueError("glimpses must be >= 1")
        if self.N < 2:
            raise ValueError("read size must be >= 2")


def downsample(images: np.ndarray, N: int) -> np.ndarray:
    """Whole-image Gaussian downsampling to ``(n, N*N)`` with a fixed grid."""
    n, B, A = images.shape
    delta = (max(A, B) - 1) / (N - 1)
    p = att.AttentionParams.fixed((A + 1) / 2, (B + 1) / 2, delta, (delta / 2) ** 2, 1.0, N, A, B)
    with tn.no_tape():
        fx, fy = att.filterbank(p)
    fx, fy = fx.data[0], fy.data[0]
    return np.einsum("jb,nba,ia->nji", fy, images, fx).reshape(n, N * N)


class Classifier(Module):
    def __init__(self, config: ClassifierConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        H = config.H
        self.h0 = tn.parameter(np.zeros(H, dtype), name="cls.h0")
        self.lstm = LstmCell(config.N**2, H, rng, "cls.lstm", dtype)
        self.attn = Linear(H, 5, rng, "cls.attn", dtype) if config.attention else None
        self.head = Linear(H, config.classes, rng, "cls.head", dtype)

    def parameters(self) -> list[Tensor]:
        out = [self.h0, *self.lstm.parameters(), *self.head.parameters()]
        if self.attn is not None:
            out += self.attn.parameters()
        return out

    def logits(self, images, record_params=False):
        cfg = self.config
        images = np.asarray(images, self.dtype)
        n = images.shape[0]
        x = tn.constant(images)
        state = LstmState(self.batch_bias(self.h0, n), tn.constant(np.zeros((n, cfg.H), self.dtype)))
        fixed = None if cfg.attention else tn.constant(downsample(images, cfg.N).astype(self.dtype))
        trail = []
        for _ in range(cfg.glimpses):
            if cfg.attention:
                p = att.attention_params(self.attn, state.h, cfg.A, cfg.B, cfg.N)
                g = att.glimpse(x, p)
                if record_params:
                    trail.append({k: getattr(p, k).data.copy() for k in ("gx", "gy", "delta", "sigma2", "gamma")})
            else:
                g = fixed
            state = self.lstm.step(state, g)
        out = self.head(state.h)
        return (out, trail) if record_params else out

    def loss(self, images, labels) -> Tensor:
        """Mean cross-entropy in nats."""
        ce = tn.softmax_cross_entropy(self.logits(images), labels)
        return tn.scale(tn.sum(ce), 1.0 / len(labels))

    def classify(self, images) -> np.ndarray:
        """Class probabilities, ``(n, classes)``."""
        with tn.no_tape():
            return tn.softmax(self.logits(images)).data

    def error_rate(self, images, labels, batch=500) -> float:
        wrong = 0
        for k in range(0, len(labels), batch):
            probs = self.classify(images[k:k + batch])
            wrong += int(np.sum(probs.argmax(axis=1) != labels[k:k + batch]))
        return wrong / len(labels)
