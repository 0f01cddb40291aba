"""Selective state-space scan and the Mamba-style block built on it.

The scan runs over the token axis (variates in the forecaster). Per channel
``d`` and state ``n``::

    h_t = exp(delta_t[d] * A[d, n]) * h_{t-1} + Bbar_t[d, n] * x_t[d]
    y_t[d] = sum_n C_t[n] * h_t[d, n] + D_skip[d] * x_t[d]

with ``A = -exp(A_log) < 0`` and ``delta = softplus(.) > 0``, so every
discrete transition lies in (0, 1).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Linear, Module, Parameter, ones, uniform_fan_in, zeros
from .tensor import Tensor

DT_MIN, DT_MAX = 1e-3, 1e-1
CONV_WIDTH = 4


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, D_skip: Tensor,
                   zoh=False) -> Tensor:
    """Run the selective recurrence.

    Args:
        u: inputs ``[B, T, D]``.
        delta: positive step sizes ``[B, T, D]``.
        A: continuous transition ``[D, N]`` (negative).
        B, C: input and readout vectors ``[B, T, N]``.
        D_skip: feedthrough ``[D]``.
        zoh: use the exact zero-order-hold input matrix instead of ``delta * B``.
    """
    dA = T.reshape(delta, delta.shape + (1,)) * A          # [B, T, D, N]
    decay = T.exp(dA)
    Bx = T.reshape(B, B.shape[:2] + (1, -1)) * T.reshape(u, u.shape + (1,))
    if zoh:
        bx = (decay - 1.0) / A * Bx
    else:
        bx = T.reshape(delta, delta.shape + (1,)) * Bx
    h = T.linear_recurrence(decay, bx, axis=1)
    y = T.sum(h * T.reshape(C, C.shape[:2] + (1, -1)), axis=-1)
    return y + u * D_skip


def _dt_bias(rng, shape):
    dt = np.exp(rng.uniform(np.log(DT_MIN), np.log(DT_MAX), size=shape))
    return dt + np.log(-np.expm1(-dt))  # inverse softplus


def _a_log(rng, shape):
    d, n = shape
    return np.log(np.tile(np.arange(1, n + 1, dtype=float), (d, 1)))


class MambaBlock(Module):
    """in_proj -> (causal depthwise conv, silu) -> selective scan -> silu gate -> out_proj.

    ``use_conv`` and ``use_gate`` switch off the pre-convolution and the
    gating branch; ``zoh`` selects exact input discretization.
    """

    def __init__(self, d_model, d_state=16, use_conv=True, use_gate=True, zoh=False, dtype=np.float64):
        super().__init__()
        self.d_model, self.d_state = d_model, d_state
        self.use_conv, self.use_gate, self.zoh = use_conv, use_gate, zoh
        self.in_proj = Linear(d_model, 2 * d_model if use_gate else d_model, dtype=dtype, bias_init=zeros)
        if use_conv:
            self.conv_kernel = Parameter((d_model, 1, CONV_WIDTH), uniform_fan_in(CONV_WIDTH), dtype)
            self.conv_bias = Parameter((d_model,), zeros, dtype)
        self.dt_proj = Linear(d_model, d_model, dtype=dtype, bias_init=_dt_bias)
        self.B_proj = Linear(d_model, d_state, dtype=dtype, bias_init=zeros)
        self.C_proj = Linear(d_model, d_state, dtype=dtype, bias_init=zeros)
        self.A_log = Parameter((d_model, d_state), _a_log, dtype)
        self.D_skip = Parameter((d_model,), ones, dtype)
        self.out_proj = Linear(d_model, d_model, dtype=dtype, bias_init=zeros)

    def transition(self) -> Tensor:
        return T.neg(T.exp(self.A_log))

    def scan(self, x: Tensor) -> Tensor:
        """Selective scan of ``x [B, T, D]`` with input-dependent step, B and C."""
        delta = T.softplus(self.dt_proj(x))
        return selective_scan(x, delta, self.transition(), self.B_proj(x), self.C_proj(x),
                              self.D_skip, zoh=self.zoh)

    def pre_conv(self, x: Tensor) -> Tensor:
        if not self.use_conv:
            return x
        xc = T.conv1d_causal(T.transpose(x, (0, 2, 1)), self.conv_kernel, 1,
                             bias=self.conv_bias, groups=self.d_model)
        return T.transpose(xc, (0, 2, 1))

    def forward(self, h: Tensor) -> Tensor:
        D = self.d_model
        xz = self.in_proj(h)
        x = xz[..., :D] if self.use_gate else xz
        x = T.silu(self.pre_conv(x))
        y = self.scan(x)
        if self.use_gate:
            y = y * T.silu(xz[..., D:])
        return self.out_proj(y)


def backward_branch(h: Tensor, block: MambaBlock, axis=1) -> Tensor:
    """Scan the token axis in reverse: ``flip(block(flip(h)))``."""
    return T.flip(block(T.flip(h, axis)), axis)
