"""The DRAW recurrent variational auto-encoder.

Per step t = 1..T (images batched along axis 0):

    x_hat = x - s(c_{t-1})
    r     = read(x, x_hat, h_dec_{t-1})
    h_enc = LSTM_enc(h_enc_{t-1}, [r, h_dec_{t-1}])
    z     = mu + sigma * eps,   mu = W(h_enc),  sigma = exp(W(h_enc))
    h_dec = LSTM_dec(h_dec_{t-1}, z)
    c_t   = c_{t-1} + write(h_dec)

Losses are reported in nats per image (batch mean).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attention as att
from . import tensor as tn
from .nn import Linear, Module
from .recurrent import LstmCell, LstmState
from .tensor import Tensor


@dataclass
class DrawConfig:
    T: int = 64
    H: int = 256
    Z: int = 100
    read_size: int = 2
    write_size: int = 5
    attention: bool = True
    A: int = 28
    B: int = 28

    def __post_init__(self):
        for key in ("T", "H", "Z", "read_size", "write_size", "A", "B"):
            if getattr(self, key) < 1:
                raise ValueError(f"DrawConfig.{key} must be positive, got {getattr(self, key)}")
        if self.attention and min(self.read_size, self.write_size) < 2:
            raise ValueError("read_size and write_size must be >= 2 with attention")

    @property
    def read_dim(self) -> int:
        if self.attention:
            return 2 * self.read_size**2
        return 2 * self.A * self.B


@dataclass
class DrawState:
    t: int
    canvas: Tensor
    enc: LstmState
    dec: LstmState
    mu: Tensor | None = None
    sigma: Tensor | None = None
    log_sigma: Tensor | None = None
    z: Tensor | None = None
    write_params: att.AttentionParams | None = field(default=None, repr=False)


@dataclass
class LossBreakdown:
    lx: float
    lz: float
    total: float


def reconstruction_loss(c_T: Tensor, x) -> Tensor:
    """Bernoulli negative log-likelihood of ``x`` under means ``s(c_T)``, summed."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("reconstruction_loss: target intensities must lie in [0, 1]")
    return tn.sum(tn.bce_with_logits(c_T, x))


def latent_loss(mus, sigmas, log_sigmas=None) -> Tensor:
    """Summed KL of N(0, I) from each N(mu_t, sigma_t^2):
    ``0.5 * sum(mu^2 + sigma^2 - log sigma^2) - (#terms)/2``."""
    total = None
    for k, (mu, sigma) in enumerate(zip(mus, sigmas)):
        if log_sigmas is not None:
            log_s2 = tn.scale(log_sigmas[k], 2.0)
        else:
            if np.any(sigma.data <= 0):
                raise ValueError("latent_loss: sigma must be positive")
            log_s2 = tn.log(tn.square(sigma))
        inner = tn.sub(tn.add(tn.square(mu), tn.square(sigma)), log_s2)
        term = tn.shift(tn.scale(tn.sum(inner), 0.5), -0.5 * mu.data.size)
        total = term if total is None else tn.add(total, term)
    return total


class DrawModel(Module):
    def __init__(self, config: DrawConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype)
        cfg = config
        rng = np.random.default_rng(seed)
        H, Z, A, B = cfg.H, cfg.Z, cfg.A, cfg.B

        self.c0 = tn.parameter(np.zeros((B, A), dtype), name="canvas0")
        self.h_enc0 = tn.parameter(np.zeros(H, dtype), name="enc.h0")
        self.h_dec0 = tn.parameter(np.zeros(H, dtype), name="dec.h0")
        self.enc = LstmCell(cfg.read_dim + H, H, rng, "enc", dtype)
        self.dec = LstmCell(Z, H, rng, "dec", dtype)
        self.mu = Linear(H, Z, rng, "mu", dtype)
        self.log_sigma = Linear(H, Z, rng, "log_sigma", dtype)
        if cfg.attention:
            self.read_params = Linear(H, 5, rng, "read_attn", dtype)
            self.write = Linear(H, cfg.write_size**2, rng, "write", dtype)
            self.write_params = Linear(H, 5, rng, "write_attn", dtype)
        else:
            self.read_params = None
            self.write = Linear(H, A * B, rng, "write", dtype)
            self.write_params = None

    # parameter groups ------------------------------------------------------

    def encoder_parameters(self) -> list[Tensor]:
        out = [self.h_enc0, *self.enc.parameters(), *self.mu.parameters(), *self.log_sigma.parameters()]
        if self.read_params is not None:
            out += self.read_params.parameters()
        return out

    def decoder_parameters(self) -> list[Tensor]:
        out = [self.c0, self.h_dec0, *self.dec.parameters(), *self.write.parameters()]
        if self.write_params is not None:
            out += self.write_params.parameters()
        return out

    def parameters(self) -> list[Tensor]:
        return self.decoder_parameters() + self.encoder_parameters()

    # pieces -------------------------------------------------------------

    def initial_state(self, n: int, with_encoder=True) -> DrawState:
        H = self.config.H
        zeros = np.zeros((n, H), self.dtype)
        enc = None
        if with_encoder:
            enc = LstmState(self.batch_bias(self.h_enc0, n), tn.constant(zeros))
        dec = LstmState(self.batch_bias(self.h_dec0, n), tn.constant(zeros.copy()))
        return DrawState(0, self.batch_bias(self.c0, n), enc, dec)

    def read(self, x: Tensor, x_hat: Tensor, h_dec: Tensor) -> Tensor:
        cfg = self.config
        if not cfg.attention:
            return att.read_plain(x, x_hat)
        p = att.attention_params(self.read_params, h_dec, cfg.A, cfg.B, cfg.read_size)
        return att.read_attn(x, x_hat, p)

    def write_step(self, h_dec: Tensor):
        """Canvas increment for ``h_dec`` and, with attention, the write parameters."""
        cfg = self.config
        if not cfg.attention:
            return att.write_plain(self.write, h_dec, cfg.A, cfg.B), None
        p = att.attention_params(self.write_params, h_dec, cfg.A, cfg.B, cfg.write_size)
        return att.write_patch(self.write(h_dec), p), p

    def sample_latent(self, h_enc: Tensor, eps: np.ndarray):
        """Reparameterised draw ``z = mu + sigma * eps``; ``eps`` is held fixed."""
        mu = self.mu(h_enc)
        log_sigma = self.log_sigma(h_enc)
        sigma = tn.exp(log_sigma)
        z = tn.add(mu, tn.mul(sigma, tn.constant(np.asarray(eps, self.dtype))))
        return z, mu, sigma, log_sigma

    def inference_step(self, x: Tensor, state: DrawState, eps: np.ndarray, z_override=None) -> DrawState:
        x_hat = tn.sub(x, tn.logistic(state.canvas))
        r = self.read(x, x_hat, state.dec.h)
        enc = self.enc.step(state.enc, tn.concat([r, state.dec.h], axis=-1))
        z, mu, sigma, log_sigma = self.sample_latent(enc.h, eps)
        if z_override is not None:
            z = z_override
        dec = self.dec.step(state.dec, z)
        delta, wp = self.write_step(dec.h)
        canvas = tn.add(state.canvas, delta)
        return DrawState(state.t + 1, canvas, enc, dec, mu, sigma, log_sigma, z, wp)

    # whole passes -------------------------------------------------------

    def draw_noise(self, rng: np.random.Generator, n: int) -> list[np.ndarray]:
        return [rng.standard_normal((n, self.config.Z)).astype(self.dtype) for _ in range(self.config.T)]

    def run(self, x, noise) -> list[DrawState]:
        """Unroll T inference steps on a batch ``x`` of shape ``(n, B, A)``."""
        x = x if isinstance(x, Tensor) else tn.constant(np.asarray(x, self.dtype))
        if x.shape[1:] != (self.config.B, self.config.A):
            raise tn.DimensionError(
                f"image shape {x.shape[1:]} does not match config {(self.config.B, self.config.A)}"
            )
        state = self.initial_state(x.shape[0])
        states = []
        for t in range(self.config.T):
            state = self.inference_step(x, state, noise[t])
            states.append(state)
        return states

    def loss_terms(self, x, rng=None, noise=None):
        """``(lx, lz, total)`` tensors in nats per image for one latent sample."""
        x_arr = np.asarray(x.data if isinstance(x, Tensor) else x, self.dtype)
        n = x_arr.shape[0]
        if noise is None:
            noise = self.draw_noise(rng, n)
        states = self.run(x_arr, noise)
        lx = tn.scale(reconstruction_loss(states[-1].canvas, x_arr), 1.0 / n)
        lz = tn.scale(
            latent_loss([s.mu for s in states], [s.sigma for s in states], [s.log_sigma for s in states]),
            1.0 / n,
        )
        return lx, lz, tn.add(lx, lz)

    def total_loss(self, x, rng=None, noise=None) -> LossBreakdown:
        with tn.no_tape():
            lx, lz, total = self.loss_terms(x, rng, noise)
        return LossBreakdown(lx.item(), lz.item(), total.item())

    def per_image_bound(self, x, rng) -> np.ndarray:
        """One-sample bound for each image separately, shape ``(n,)``."""
        x_arr = np.asarray(x, self.dtype)
        with tn.no_tape():
            states = self.run(x_arr, self.draw_noise(rng, x_arr.shape[0]))
            c = states[-1].canvas
            lx = tn.bce_with_logits(c, x_arr).data.reshape(x_arr.shape[0], -1).sum(axis=1)
            lz = np.zeros_like(lx)
            for s in states:
                lz += 0.5 * (s.mu.data**2 + s.sigma.data**2 - 2 * s.log_sigma.data - 1).sum(axis=1)
        return lx + lz

    def generate(self, rng: np.random.Generator, n: int = 1):
        """Decoder-only unroll from prior samples.

        Returns ``(sample, mean, canvases, write_params)`` where ``canvases`` is
        a list of T arrays ``(n, B, A)`` and ``write_params`` is a list of
        per-step dicts (empty without attention).
        """
        cfg = self.config
        with tn.no_tape():
            state = self.initial_state(n, with_encoder=False)
            canvas, dec = state.canvas, state.dec
            canvases, params = [], []
            for _ in range(cfg.T):
                z = tn.constant(rng.standard_normal((n, cfg.Z)).astype(self.dtype))
                dec = self.dec.step(dec, z)
                delta, wp = self.write_step(dec.h)
                canvas = tn.add(canvas, delta)
                canvases.append(canvas.data.copy())
                if wp is not None:
                    params.append(
                        {k: getattr(wp, k).data.copy() for k in ("gx", "gy", "delta", "sigma2", "gamma")}
                    )
            mean = tn.logistic(canvas).data
        sample = (rng.random(mean.shape) < mean).astype(self.dtype)
        return sample, mean, canvases, params
