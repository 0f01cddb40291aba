"""Stack of dilated causal convolutions; layer ``l`` uses dilation ``2**(l-1)``."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Module, Parameter, uniform_fan_in, zeros


def receptive_field(kernel_size: int, n_layers: int) -> int:
    return 1 + (kernel_size - 1) * (2 ** n_layers - 1)


class TcnLayer(Module):
    def __init__(self, channels, kernel_size, dilation, depthwise=True, dtype=np.float64):
        super().__init__()
        self.dilation = dilation
        self.groups = channels if depthwise else 1
        fan_in = kernel_size * (1 if depthwise else channels)
        c_in = 1 if depthwise else channels
        self.kernel = Parameter((channels, c_in, kernel_size), uniform_fan_in(fan_in), dtype)
        self.bias = Parameter((channels,), zeros, dtype)

    def forward(self, x):
        return T.conv1d_causal(x, self.kernel, self.dilation, bias=self.bias, groups=self.groups)


class TCN(Module):
    """``K`` causal conv layers over ``[B, C, P]`` with ReLU and optional residual adds.

    With ``depthwise=True`` every channel (variate) owns its own kernel and
    channels never mix; ``depthwise=False`` uses full ``C x C`` kernels.
    ``activation=None`` makes each layer purely linear.
    """

    def __init__(self, channels, n_layers=2, kernel_size=3, residual=True, depthwise=True,
                 activation="relu", dtype=np.float64):
        super().__init__()
        self.residual = residual
        self.activation = activation
        self.kernel_size = kernel_size
        self.layers = [TcnLayer(channels, kernel_size, 2 ** l, depthwise, dtype) for l in range(n_layers)]

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.kernel_size, len(self.layers))

    def forward(self, h):
        for layer in self.layers:
            y = layer(h)
            if self.activation is not None:
                y = T.activation(self.activation, y)
            h = h + y if self.residual else y
        return h
