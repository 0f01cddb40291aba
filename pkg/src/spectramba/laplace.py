"""Learnable FFT + Laplace reconstruction.

A window is moved to the frequency domain, small linear projectors read
amplitudes, decay rates, frequencies and phases off the spectrum, and the
signal is resynthesized as a sum of exponentially modulated cosines
``sum_h A * exp(alpha * t) * cos(omega * t + phi)`` on a learned time grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module, eye, zeros
from .tensor import ComplexSpectrum, Tensor

GRID_START = 1e-4
FFT_NORMS = ("ortho", "backward")


@dataclass
class LaplaceParams:
    """Per-window synthesis parameters.

    Shapes: ``A [B, V, P, Hc]``; ``alpha``, ``omega``, ``phi`` ``[B, V, Hc]``;
    ``t [P]``.
    """

    A: Tensor
    alpha: Tensor
    omega: Tensor
    phi: Tensor
    t: Tensor


def decay_constraint(alpha: Tensor) -> Tensor:
    """``-elu(-alpha)``: identity for negative rates, saturates below 1 for positive ones."""
    return T.neg(T.elu(T.neg(alpha)))


def reconstruct(params: LaplaceParams) -> Tensor:
    """Sum of damped cosines, ``[B, V, P]``."""
    A, alpha, omega, phi, t = params.A, params.alpha, params.omega, params.phi, params.t
    if A.ndim != 4 or alpha.shape != A.shape[:2] + A.shape[3:]:
        raise T.DimensionError(f"reconstruct: A {A.shape} incompatible with alpha {alpha.shape}")
    if omega.shape != alpha.shape or phi.shape != alpha.shape or t.shape != (A.shape[2],):
        raise T.DimensionError(
            f"reconstruct: omega {omega.shape}, phi {phi.shape}, t {t.shape} vs A {A.shape}")
    tt = T.reshape(t, (1, 1, -1, 1))
    growth = T.exp(T.reshape(alpha, alpha.shape[:2] + (1, -1)) * tt)
    phase = T.reshape(omega, omega.shape[:2] + (1, -1)) * tt + T.reshape(phi, phi.shape[:2] + (1, -1))
    return T.sum(A * growth * T.cos(phase), axis=-1)


class LaplaceBlock(Module):
    """FFT, parameter projection and damped-cosine synthesis for one layer.

    Args:
        d_in: length of the last axis of the input windows.
        out_len: reconstruction length ``P``.
        harmonics: number of synthesized components ``Hc`` (defaults to ``out_len``).
        low_rank: if set, amplitudes are the product of ``[P, R]`` and ``[R, Hc]`` factors.
        topk: if set, only the ``topk`` largest-magnitude bins survive before projection.
        fft_norm: ``"ortho"`` feeds the projectors the unitary spectrum (scaled by
            ``1/sqrt(d_in)``), ``"backward"`` the raw unnormalized one.

    The unitary scaling keeps bin magnitudes independent of ``d_in``. With raw
    bins at width 64 the reconstruction starts ~20x larger than its input.
    """

    def __init__(self, d_in, out_len=None, harmonics=None, low_rank=None, topk=None, fft_norm="ortho",
                 dtype=np.float64):
        super().__init__()
        if fft_norm not in FFT_NORMS:
            raise ValueError(f"fft_norm must be one of {FFT_NORMS}, got {fft_norm!r}")
        self.d_in = d_in
        self.spectrum_scale = 1.0 / np.sqrt(d_in) if fft_norm == "ortho" else 1.0
        self.out_len = P = out_len or d_in
        self.harmonics = Hc = harmonics or P
        self.n_bins = F = d_in // 2 + 1
        if low_rank is not None and not (1 <= low_rank < min(P, Hc)):
            raise ValueError(f"low_rank must satisfy 1 <= R < min(P, Hc) = {min(P, Hc)}, got {low_rank}")
        self.low_rank = low_rank
        self.topk = topk
        width = P * Hc if low_rank is None else low_rank * (P + Hc)
        self.proj_A = Linear(2 * F, width, dtype=dtype, bias_init=zeros)
        self.proj_alpha = Linear(F, Hc, dtype=dtype, bias_init=zeros)
        self.proj_omega_phi = Linear(F, 2 * Hc, dtype=dtype, bias_init=zeros)
        self.proj_t = Linear(P, P, dtype=dtype, weight_init=eye, bias_init=zeros)
        self.grid = np.linspace(GRID_START, 1.0, P).astype(dtype)

    def _mask(self, spec: ComplexSpectrum) -> ComplexSpectrum:
        mag = spec.real.data ** 2 + spec.imag.data ** 2
        k = min(self.topk, mag.shape[-1])
        thresh = -np.sort(-mag, axis=-1)[..., k - 1: k]
        keep = (mag >= thresh).astype(mag.dtype)
        return ComplexSpectrum(spec.real * keep, spec.imag * keep)

    def project_params(self, spec: ComplexSpectrum) -> LaplaceParams:
        if spec.n_bins != self.n_bins:
            raise T.DimensionError(f"project_params: spectrum has {spec.n_bins} bins, projectors expect {self.n_bins}")
        if self.topk:
            spec = self._mask(spec)
        B, V = spec.real.shape[:2]
        P, Hc, R = self.out_len, self.harmonics, self.low_rank
        a = self.proj_A(spec.stacked())
        if R is None:
            A = T.reshape(a, (B, V, P, Hc))
        else:
            U = T.reshape(a[..., : P * R], (B, V, P, R))
            Vt = T.reshape(a[..., P * R:], (B, V, R, Hc))
            A = T.matmul(U, Vt)
        alpha = decay_constraint(self.proj_alpha(spec.real))
        op = self.proj_omega_phi(spec.imag)
        omega, phi = op[..., :Hc], op[..., Hc:]
        t = T.reshape(self.proj_t(Tensor(self.grid[None, :])), (-1,))
        return LaplaceParams(A, alpha, omega, phi, t)

    def forward(self, h: Tensor) -> Tensor:
        if h.shape[-1] != self.d_in:
            raise T.DimensionError(f"LaplaceBlock: expected width {self.d_in}, got {h.shape}")
        spec = T.rfft(h)
        if self.spectrum_scale != 1.0:
            spec = ComplexSpectrum(spec.real * self.spectrum_scale, spec.imag * self.spectrum_scale)
        return reconstruct(self.project_params(spec))
