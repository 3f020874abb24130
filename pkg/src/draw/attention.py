"""Differentiable 2D Gaussian attention and the plain/attentive read and write.

Images are stored as ``(B, A)`` arrays: B rows (height, the y axis) and A
columns (width, the x axis), with a leading batch axis ``n``.  Pixel
coordinates are 1-based, so with a centred grid and unit raw stride the
filter centres run exactly from 1 to A.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import DimensionError, Tensor

# Raw log-scale emissions are clipped to this range before exponentiation.
LOG_CLAMP = 10.0


@dataclass
class AttentionParams:
    """Grid centre, stride, filter variance and intensity, one value per batch row."""

    gx: Tensor
    gy: Tensor
    delta: Tensor
    sigma2: Tensor
    gamma: Tensor
    N: int
    A: int
    B: int

    @property
    def batch(self) -> int:
        return self.gx.shape[0]

    @classmethod
    def fixed(cls, gx, gy, delta, sigma2, gamma, N, A, B, dtype=np.float64):
        """Constant parameters for a batch of one (tests, export, baselines)."""
        vals = [tn.constant(np.array([v], dtype=dtype)) for v in (gx, gy, delta, sigma2, gamma)]
        return cls(*vals, N=N, A=A, B=B)


def params_from_raw(raw: Tensor, A: int, B: int, N: int) -> AttentionParams:
    """Map ``(n, 5)`` raw emissions ``(gx~, gy~, log sigma2, log delta~, log gamma)``."""
    if N < 2:
        raise ValueError(f"attention needs N >= 2 (stride scale divides by N-1), got N={N}")
    if raw.ndim != 2 or raw.shape[1] != 5:
        raise DimensionError(f"attention raw emissions must be (n, 5), got {raw.shape}")
    gx_, gy_, log_s2, log_d, log_g = tn.split_last(raw, [1, 1, 1, 1, 1])
    n = raw.shape[0]

    def flat(t):
        return tn.reshape(t, (n,))

    def positive(t):
        return tn.exp(tn.clamp(flat(t), -LOG_CLAMP, LOG_CLAMP))

    gx = tn.scale(tn.shift(flat(gx_), 1.0), (A + 1) / 2)
    gy = tn.scale(tn.shift(flat(gy_), 1.0), (B + 1) / 2)
    delta = tn.scale(positive(log_d), (max(A, B) - 1) / (N - 1))
    return AttentionParams(gx, gy, delta, positive(log_s2), positive(log_g), N, A, B)


def attention_params(layer, h_dec: Tensor, A: int, B: int, N: int) -> AttentionParams:
    """Emit attention parameters from the decoder state through ``layer``."""
    return params_from_raw(layer(h_dec), A, B, N)


def _per_row(v: Tensor, shape) -> Tensor:
    """Repeat a ``(n,)`` tensor to ``(n, *shape)``."""
    n = v.shape[0]
    return tn.broadcast_to(tn.reshape(v, (n,) + (1,) * len(shape)), (n,) + tuple(shape))


def grid_centres(p: AttentionParams) -> tuple[Tensor, Tensor]:
    """Filter means ``g + (i - N/2 - 0.5) * delta`` for ``i = 1..N``, shape ``(n, N)``."""
    n, N = p.batch, p.N
    offsets = np.arange(1, N + 1, dtype=p.gx.dtype) - N / 2 - 0.5
    off = tn.constant(np.broadcast_to(offsets, (n, N)).copy())
    step = tn.mul(_per_row(p.delta, (N,)), off)
    return tn.add(_per_row(p.gx, (N,)), step), tn.add(_per_row(p.gy, (N,)), step)


def _bank(mu: Tensor, sigma2: Tensor, size: int) -> Tensor:
    n, N = mu.shape
    coords = tn.constant(
        np.broadcast_to(np.arange(1, size + 1, dtype=mu.dtype), (n, N, size)).copy()
    )
    mu3 = tn.broadcast_to(tn.reshape(mu, (n, N, 1)), (n, N, size))
    d2 = tn.square(tn.sub(coords, mu3))
    inv = tn.div(tn.constant(np.full((n, N, size), -0.5, mu.dtype)), _per_row(sigma2, (N, size)))
    # Row-normalising exp(e) is a softmax over pixels; shifting by the row max
    # keeps the normaliser from underflowing for far off-image centres.
    return tn.softmax(tn.mul(d2, inv))


def filterbank(p: AttentionParams) -> tuple[Tensor, Tensor]:
    """Row-normalised Gaussian filterbanks ``F_X (n, N, A)`` and ``F_Y (n, N, B)``."""
    mu_x, mu_y = grid_centres(p)
    return _bank(mu_x, p.sigma2, p.A), _bank(mu_y, p.sigma2, p.B)


def _check_image(x: Tensor, p: AttentionParams, what="x"):
    if x.shape != (p.batch, p.B, p.A):
        raise DimensionError(f"{what}: expected shape {(p.batch, p.B, p.A)}, got {x.shape}")


def _patch(x: Tensor, fx: Tensor, fy: Tensor) -> Tensor:
    return tn.matmul(tn.matmul(fy, x), tn.transpose(fx))


def glimpse(x: Tensor, p: AttentionParams, banks=None) -> Tensor:
    """``gamma * F_Y x F_X^T`` flattened to ``(n, N*N)``."""
    _check_image(x, p)
    fx, fy = banks if banks is not None else filterbank(p)
    n, N = p.batch, p.N
    patch = tn.mul(_patch(x, fx, fy), _per_row(p.gamma, (N, N)))
    return tn.reshape(patch, (n, N * N))


def read_attn(x: Tensor, x_hat: Tensor, p: AttentionParams) -> Tensor:
    """Image and error-image patches through the same filterbanks, ``(n, 2*N*N)``."""
    _check_image(x, p)
    _check_image(x_hat, p, "x_hat")
    banks = filterbank(p)
    return tn.concat([glimpse(x, p, banks), glimpse(x_hat, p, banks)], axis=-1)


def write_patch(w: Tensor, p: AttentionParams) -> Tensor:
    """``(1/gamma) F_Y^T w F_X`` for a flat ``(n, N*N)`` writing patch; returns ``(n, B, A)``."""
    n, N = p.batch, p.N
    if w.shape != (n, N * N):
        raise DimensionError(f"write patch: expected shape {(n, N * N)}, got {w.shape}")
    fx, fy = filterbank(p)
    w3 = tn.reshape(w, (n, N, N))
    canvas = tn.matmul(tn.matmul(tn.transpose(fy), w3), fx)
    inv_gamma = tn.div(tn.constant(np.ones((n, p.B, p.A), w.dtype)), _per_row(p.gamma, (p.B, p.A)))
    return tn.mul(canvas, inv_gamma)


def write_attn(patch_layer, param_layer, h_dec: Tensor, A: int, B: int, N: int) -> Tensor:
    """Attentive write: the patch and its own attention parameters both come from ``h_dec``."""
    p = attention_params(param_layer, h_dec, A, B, N)
    return write_patch(patch_layer(h_dec), p)


def read_plain(x: Tensor, x_hat: Tensor) -> Tensor:
    """``[x, x_hat]`` flattened per batch row, ``(n, 2*A*B)``."""
    if x.shape != x_hat.shape:
        raise DimensionError(f"read_plain: shape mismatch {x.shape} vs {x_hat.shape}")
    n = x.shape[0]
    size = int(np.prod(x.shape[1:]))
    return tn.concat([tn.reshape(x, (n, size)), tn.reshape(x_hat, (n, size))], axis=-1)


def write_plain(layer, h_dec: Tensor, A: int, B: int) -> Tensor:
    """Whole-canvas write ``W(h_dec)`` reshaped to ``(n, B, A)``."""
    return tn.reshape(layer(h_dec), (h_dec.shape[0], B, A))


def patch_box(gx: float, gy: float, delta: float, N: int) -> tuple[float, float, float, float]:
    """Extent of the filter grid in 1-based pixel coordinates: ``(x0, y0, x1, y1)``."""
    half = (N - 1) * delta / 2
    return gx - half, gy - half, gx + half, gy + half
