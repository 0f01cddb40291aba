"""Spatial-temporal attention, the FFN-TD refinement and attention baselines."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module, Parameter, uniform_fan_in
from .tensor import Tensor


class STAttention(Module):
    """Reweigh ``h [B, V, D]`` along the model axis and the variate axis.

    Temporal branch: each model-axis position ``d`` is described by the
    column ``h[b, :, d]`` (length V), mapped to ``E_t = relu(W_t . + b_t)``
    and scored with a context vector; a softmax over the ``D`` positions
    gives ``alpha_t``. Spatial branch does the same for rows ``h[b, v, :]``
    with a softmax over the ``V`` variates. Each branch multiplies ``h`` by
    ``N * alpha`` (``N`` the softmax length), so uniform scores are the
    identity, and the two branches are averaged.
    """

    def __init__(self, n_tokens, d_model, e_dim=64, dtype=np.float64):
        super().__init__()
        self.n_tokens, self.d_model, self.e_dim = n_tokens, d_model, e_dim
        self.temporal = Linear(n_tokens, e_dim, dtype=dtype)
        self.spatial = Linear(d_model, e_dim, dtype=dtype)
        self.v_ctx_t = Parameter((e_dim,), uniform_fan_in(e_dim), dtype)
        self.v_ctx_s = Parameter((e_dim,), uniform_fan_in(e_dim), dtype)

    def weights(self, h: Tensor) -> tuple[Tensor, Tensor]:
        """Attention weights ``(alpha_t [B, D], alpha_s [B, V])``."""
        if h.ndim != 3 or h.shape[1] != self.n_tokens or h.shape[2] != self.d_model:
            raise T.DimensionError(
                f"STAttention: configured for [B, {self.n_tokens}, {self.d_model}], got {h.shape}")
        e_t = T.relu(self.temporal(T.transpose(h, (0, 2, 1))))      # [B, D, E]
        e_s = T.relu(self.spatial(h))                                # [B, V, E]
        a_t = T.softmax(T.matmul(e_t, T.reshape(self.v_ctx_t, (-1, 1)))[..., 0], axis=-1)
        a_s = T.softmax(T.matmul(e_s, T.reshape(self.v_ctx_s, (-1, 1)))[..., 0], axis=-1)
        return a_t, a_s

    def forward(self, h: Tensor) -> Tensor:
        B, V, D = h.shape
        a_t, a_s = self.weights(h)
        h_t = h * T.reshape(a_t * float(D), (B, 1, D))
        h_s = h * T.reshape(a_s * float(V), (B, V, 1))
        return (h_t + h_s) * 0.5


class FFNTD(Module):
    """``norm2(h + lin2(relu(lin1(norm1(h)))))`` over the model axis."""

    def __init__(self, d_model, d_ff=None, dtype=np.float64):
        super().__init__()
        d_ff = d_ff or 2 * d_model
        if d_ff < d_model:
            raise ValueError(f"d_ff ({d_ff}) must be >= d_model ({d_model})")
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.lin1 = Linear(d_model, d_ff, dtype=dtype)
        self.lin2 = Linear(d_ff, d_model, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)

    def forward(self, h):
        return self.norm2(h + self.lin2(T.relu(self.lin1(self.norm1(h)))))


class TokenSelfAttention(Module):
    """Single-head scaled dot-product attention over variate tokens, with a residual."""

    def __init__(self, d_model, dtype=np.float64):
        super().__init__()
        self.q = Linear(d_model, d_model, dtype=dtype)
        self.k = Linear(d_model, d_model, dtype=dtype)
        self.v = Linear(d_model, d_model, dtype=dtype)
        self.out = Linear(d_model, d_model, dtype=dtype)
        self.scale = 1.0 / np.sqrt(d_model)

    def forward(self, h):
        scores = T.matmul(self.q(h), T.transpose(self.k(h), (0, 2, 1))) * self.scale
        return h + self.out(T.matmul(T.softmax(scores, axis=-1), self.v(h)))


class TimeAttentionReference(Module):
    """Naive self-attention over time steps, ``[B, L, V] -> [B, P, V]``.

    Exists only as a quadratic-cost contrast for latency benchmarks: it
    builds the full ``L x L`` score matrix.
    """

    def __init__(self, n_vars, horizon, lookback, d_model=64, dtype=np.float64):
        super().__init__()
        self.embed = Linear(n_vars, d_model, dtype=dtype)
        self.attn = TokenSelfAttention(d_model, dtype=dtype)
        self.head = Linear(lookback, horizon, dtype=dtype)
        self.out = Linear(d_model, n_vars, dtype=dtype)

    def forward(self, x):
        h = self.attn(self.embed(x))                     # [B, L, d]
        h = self.head(T.transpose(h, (0, 2, 1)))        # [B, d, P]
        return self.out(T.transpose(h, (0, 2, 1)))
