"""LSTM with forget gates, no peepholes.

    i = s(W_i [x, h] + b_i)     f = s(W_f [x, h] + b_f)
    o = s(W_o [x, h] + b_o)     g = tanh(W_g [x, h] + b_g)
    c' = f * c + i * g          h' = o * tanh(c')

The four gate blocks share one ``(4H, in + H)`` weight, stacked in the order
i, f, o, g.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .nn import uniform_init
from .tensor import DimensionError, Tensor

FORGET_BIAS = 1.0


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


class LstmCell:
    def __init__(self, n_in: int, hidden: int, rng, name: str, dtype=np.float64):
        self.n_in = n_in
        self.hidden = hidden
        fan_in = n_in + hidden
        self.W = tn.parameter(uniform_init(rng, (4 * hidden, fan_in), fan_in, dtype), name=f"{name}.W")
        b = np.zeros(4 * hidden, dtype)
        b[hidden:2 * hidden] = FORGET_BIAS
        self.b = tn.parameter(b, name=f"{name}.b")

    def parameters(self) -> list[Tensor]:
        return [self.W, self.b]

    def zero_state(self, n: int) -> LstmState:
        z = np.zeros((n, self.hidden), self.W.dtype)
        return LstmState(tn.constant(z), tn.constant(z.copy()))

    def step(self, state: LstmState, x: Tensor) -> LstmState:
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"lstm: input size {x.shape[-1]}, cell expects {self.n_in}")
        H = self.hidden
        pre = tn.linear(self.W, self.b, tn.concat([x, state.h], axis=-1))
        i, f, o, g = tn.split_last(pre, [H, H, H, H])
        c = tn.add(tn.mul(tn.logistic(f), state.c), tn.mul(tn.logistic(i), tn.tanh(g)))
        h = tn.mul(tn.logistic(o), tn.tanh(c))
        return LstmState(h, c)


def lstm_step(cell: LstmCell, state: LstmState, x: Tensor) -> LstmState:
    return cell.step(state, x)
