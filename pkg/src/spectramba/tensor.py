"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable primitive records one node on a thread-local tape when
gradients are enabled and at least one input requires them. ``backward``
walks the tape in exact reverse execution order and then clears it.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when a forward operation produces NaN or Inf."""


class TapeError(RuntimeError):
    """Raised on misuse of the differentiation tape."""


class _TapeState(threading.local):
    def __init__(self):
        self.nodes: list[_Node] = []
        self.enabled = True
        self.generation = 0


_state = _TapeState()


@dataclass(eq=False)
class _Node:
    op: str
    inputs: tuple
    output: "Tensor"
    backward: Callable
    index: int
    generation: int


@contextlib.contextmanager
def no_grad():
    """Disable recording for the enclosed block."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def reset_tape():
    """Drop every recorded node without computing gradients."""
    _state.nodes = []
    _state.generation += 1


def tape_length() -> int:
    return len(_state.nodes)


class Tensor:
    """n-dimensional float array participating in reverse-mode autodiff.

    Args:
        data: array-like values. Integer and bool inputs are promoted to
            ``dtype`` (default float64).
        requires_grad: whether gradients accumulate into ``grad``.
        dtype: numpy float dtype; inferred from ``data`` when it is already
            a float array.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op}: forward produced non-finite values")
    out = Tensor(data)
    if _state.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = _Node(op, tuple(inputs), out, backward_fn, len(_state.nodes), _state.generation)
        _state.nodes.append(node)
        out._node = node
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _pair(a, b):
    a = a if isinstance(a, Tensor) else None if a is None else as_tensor(a, _dtype_of(b))
    b = b if isinstance(b, Tensor) else as_tensor(b, a.dtype)
    if a.dtype != b.dtype:
        # promote, both ways, without breaking the tape
        target = np.result_type(a.dtype, b.dtype)
        if a.dtype != target:
            a = cast(a, target)
        if b.dtype != target:
            b = cast(b, target)
    return a, b


def _dtype_of(x):
    return x.dtype if isinstance(x, Tensor) else np.float64


def cast(x: Tensor, dtype) -> Tensor:
    src = x.dtype
    return _make("cast", x.data.astype(dtype), [x], lambda g: (g.astype(src),))


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, [a, b],
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, [a, b],
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, [a, b],
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return _make("div", out, [a, b], bw)


def neg(x: Tensor) -> Tensor:
    return _make("neg", -x.data, [x], lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make("exp", out, [x], lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make("log", np.log(xd), [x], lambda g: (g / xd,))


def cos(x: Tensor) -> Tensor:
    xd = x.data
    return _make("cos", np.cos(xd), [x], lambda g: (-g * np.sin(xd),))


def sin(x: Tensor) -> Tensor:
    xd = x.data
    return _make("sin", np.sin(xd), [x], lambda g: (g * np.cos(xd),))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make("square", xd * xd, [x], lambda g: (2.0 * g * xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make("sqrt", out, [x], lambda g: (0.5 * g / out,))


def abs(x: Tensor) -> Tensor:  # noqa: A001
    xd = x.data
    return _make("abs", np.abs(xd), [x], lambda g: (g * np.sign(xd),))


def _sigmoid(z):
    # split branches so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make("sigmoid", s, [x], lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0.0).astype(x.dtype), [x],
                 lambda g: (g * mask,))


def elu(x: Tensor) -> Tensor:
    xd = x.data
    em1 = np.expm1(np.minimum(xd, 0.0))
    out = np.where(xd > 0, xd, em1)
    return _make("elu", out, [x], lambda g: (g * np.where(xd > 0, 1.0, em1 + 1.0),))


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = _sigmoid(xd)
    return _make("silu", xd * s, [x], lambda g: (g * (s * (1.0 + xd * (1.0 - s))),))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.logaddexp(0.0, xd)
    return _make("softplus", out, [x], lambda g: (g * _sigmoid(xd),))


_ACTIVATIONS = {"relu": relu, "elu": elu, "silu": silu}


def activation(kind: str, x: Tensor) -> Tensor:
    """Apply ``relu``, ``elu`` or ``silu`` elementwise."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}")
    if not np.isfinite(x.data).all():
        raise NonFiniteError(f"{kind}: non-finite input")
    return fn(x)


# ----------------------------------------------------------------- reductions


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), [x], bw)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return sum(x, axis, keepdims) * (1.0 / n)


def softmax(x: Tensor, axis=-1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax: empty reduction axis {axis} for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make("softmax", s, [x],
                 lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def layer_norm(x: Tensor, axis=-1, eps=1e-5, weight=None, bias=None) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis``, then scale and shift.

    ``weight`` and ``bias`` broadcast against the normalized tensor; either may
    be None.
    """
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=axis, keepdims=True)
        gxm = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    out = _make("layer_norm", xhat, [x], bw)
    if weight is not None:
        out = out * weight
    if bias is not None:
        out = out + bias
    return out


# -------------------------------------------------------------- shape & index


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _make("reshape", x.data.reshape(shape), [x], lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.ascontiguousarray(x.data.transpose(axes)), [x],
                 lambda g: (g.transpose(inv),))


def flip(x: Tensor, axis) -> Tensor:
    return _make("flip", np.ascontiguousarray(np.flip(x.data, axis)), [x],
                 lambda g: (np.flip(g, axis),))


def getitem(x: Tensor, idx) -> Tensor:
    src = x.shape
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in parts)

    def bw(g):
        full = np.zeros(src, dtype=g.dtype)
        if basic:
            full[idx] = g  # basic indexing never repeats an element
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make("getitem", np.ascontiguousarray(x.data[idx]), [x], bw)


def concat(xs: Sequence[Tensor], axis=-1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make("concat", np.concatenate([t.data for t in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(xs: Sequence[Tensor], axis=0) -> Tensor:
    xs = [as_tensor(t) for t in xs]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make("stack", np.stack([t.data for t in xs], axis=axis), xs, bw)


# -------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product with broadcasting over leading dimensions."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            # shared weight: fold batch dims into one GEMM
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make("matmul", ad @ bd, [a, b], bw)


# ------------------------------------------------------------------- spectral


@dataclass
class ComplexSpectrum:
    """One-sided spectrum split into real and imaginary tensors."""

    real: Tensor
    imag: Tensor

    @property
    def n_bins(self) -> int:
        return self.real.shape[-1]

    def stacked(self) -> Tensor:
        """``[real; imag]`` concatenated along the bin axis."""
        return concat([self.real, self.imag], axis=-1)


def rfft_stacked(x: Tensor) -> Tensor:
    """Real FFT along the last axis, returned as ``[Re H, Im H]`` of width 2F.

    The adjoint maps bin gradients back through the conjugate transform, so
    the op stays exact for any length.
    """
    D = x.shape[-1]
    if D < 1:
        raise DimensionError("rfft: empty last axis")
    spec = np.fft.rfft(x.data, axis=-1)
    F = spec.shape[-1]
    out = np.concatenate([spec.real, spec.imag], axis=-1).astype(x.dtype)

    def bw(g):
        z = np.zeros(g.shape[:-1] + (D,), dtype=np.complex128)
        z[..., :F] = g[..., :F] + 1j * g[..., F:]
        return ((D * np.fft.ifft(z, axis=-1)).real.astype(x.dtype),)

    return _make("rfft", out, [x], bw)


def rfft(x: Tensor) -> ComplexSpectrum:
    """One-sided DFT ``H_k = sum_d x_d exp(-2 pi i k d / D)`` of the last axis."""
    both = rfft_stacked(x)
    F = x.shape[-1] // 2 + 1
    return ComplexSpectrum(both[..., :F], both[..., F:])


# ---------------------------------------------------------------- convolution


def conv1d_causal(x: Tensor, kernel: Tensor, dilation=1, bias=None, groups=1) -> Tensor:
    """Dilated causal 1-D convolution that preserves sequence length.

    Args:
        x: input ``[B, C_in, T]``.
        kernel: ``[C_out, C_in // groups, k]``; tap ``k - 1`` sees the current step.
        dilation: spacing between taps (>= 1).
        bias: optional ``[C_out]``.
        groups: 1 for full channel mixing or ``C_in`` for depthwise.
    """
    if int(dilation) != dilation or dilation < 1:
        raise ValueError(f"conv1d_causal: dilation must be a positive int, got {dilation}")
    x, kernel = _pair(x, kernel)
    B, C_in, T = x.shape
    C_out, c_per, k = kernel.shape
    if groups not in (1, C_in) or c_per * groups != C_in:
        raise DimensionError(f"conv1d_causal: kernel {kernel.shape} incompatible with input {x.shape}, groups={groups}")
    if groups == C_in and C_out != C_in:
        raise DimensionError("conv1d_causal: depthwise kernels need C_out == C_in")
    pad = (k - 1) * dilation
    xp = np.concatenate([np.zeros((B, C_in, pad), dtype=x.dtype), x.data], axis=-1)
    W = kernel.data
    depthwise = groups == C_in and groups > 1
    out = np.zeros((B, C_out, T), dtype=x.dtype)
    for j in range(k):
        seg = xp[:, :, j * dilation: j * dilation + T]
        if depthwise:
            out += W[:, 0, j][None, :, None] * seg
        else:
            out += np.einsum("oc,bct->bot", W[:, :, j], seg)

    def bw(g):
        gxp = np.zeros_like(xp)
        gW = np.zeros_like(W)
        for j in range(k):
            seg = xp[:, :, j * dilation: j * dilation + T]
            if depthwise:
                gxp[:, :, j * dilation: j * dilation + T] += W[:, 0, j][None, :, None] * g
                gW[:, 0, j] = (g * seg).sum(axis=(0, 2))
            else:
                gxp[:, :, j * dilation: j * dilation + T] += np.einsum("oc,bot->bct", W[:, :, j], g)
                gW[:, :, j] = np.einsum("bot,bct->oc", g, seg)
        return gxp[:, :, pad:], gW

    y = _make("conv1d_causal", out, [x, kernel], bw)
    if bias is not None:
        y = y + reshape(as_tensor(bias), (C_out, 1))
    return y


# ------------------------------------------------------------------ recurrence


def linear_recurrence(a: Tensor, b: Tensor, axis=1) -> Tensor:
    """All states of ``h_t = a_t * h_{t-1} + b_t`` with ``h_{-1} = 0``.

    ``a`` and ``b`` share a shape; the recurrence runs along ``axis``. The
    loop is sequential, so cost is linear in the sequence length.
    """
    a, b = _pair(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"linear_recurrence: {a.shape} vs {b.shape}")
    ad = np.moveaxis(a.data, axis, 0)
    bd = np.moveaxis(b.data, axis, 0)
    T = ad.shape[0]
    h = np.empty_like(bd)
    prev = np.zeros_like(bd[0])
    for t in range(T):
        prev = ad[t] * prev + bd[t]
        h[t] = prev

    def bw(g):
        g = np.moveaxis(g, axis, 0)
        ga = np.zeros_like(ad)
        gb = np.zeros_like(bd)
        carry = np.zeros_like(bd[0])
        for t in range(T - 1, -1, -1):
            carry = g[t] + carry
            gb[t] = carry
            if t > 0:
                ga[t] = carry * h[t - 1]
            carry = carry * ad[t]
        return np.moveaxis(ga, 0, axis), np.moveaxis(gb, 0, axis)

    return _make("linear_recurrence", np.ascontiguousarray(np.moveaxis(h, 0, axis)), [a, b], bw)


# ------------------------------------------------------------------- backward


def backward(loss: Tensor):
    """Populate ``grad`` on every leaf that requires it, then clear the tape."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise TapeError(f"backward: loss must be a scalar tensor, got shape {getattr(loss, 'shape', None)}")
    node = loss._node
    if node is None:
        if loss.requires_grad:
            loss.grad = loss.grad + np.ones_like(loss.data)
            return
        raise TapeError("backward: loss was not produced by recorded operations")
    nodes = _state.nodes
    if node.generation != _state.generation or node.index >= len(nodes) or nodes[node.index] is not node:
        raise TapeError("backward: loss belongs to a tape that was already consumed")
    grads = {id(loss): np.ones_like(loss.data)}
    for n in reversed(nodes[: node.index + 1]):
        g = grads.pop(id(n.output), None)
        if g is None:
            continue
        for inp, gi in zip(n.inputs, n.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = inp.grad + gi.astype(inp.dtype, copy=False)
            else:
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi
    reset_tape()
