"""Central finite-difference checks of taped gradients."""

from __future__ import annotations

import numpy as np

from . import tensor as T


def gradcheck(fn, tensors, eps=1e-5, max_entries=64, seed=0):
    """Compare analytic and finite-difference gradients of a random projection of ``fn()``.

    The scalar checked is ``sum(fn() * W)`` with a fixed Gaussian ``W``, so
    every output element contributes. For tensors with more than
    ``max_entries`` elements a random subset of coordinates is checked.

    Returns:
        dict mapping a tensor's position (or name, when ``tensors`` is a
        dict) to ``|analytic - fd| / (|fd| + 1e-8)`` computed with L2 norms
        over the checked coordinates.
    """
    rng = np.random.default_rng(seed)
    named = tensors if isinstance(tensors, dict) else dict(enumerate(tensors))
    for t in named.values():
        if not t.requires_grad:
            raise ValueError("gradcheck: every checked tensor must require grad")
        t.zero_grad()
    T.reset_tape()
    out = fn()
    W = rng.standard_normal(out.shape)
    T.backward(T.sum(out * T.Tensor(W.astype(out.dtype))))

    def scalar():
        with T.no_grad():
            return float(np.sum(fn().data * W))

    errors = {}
    for key, t in named.items():
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
        analytic = t.grad.reshape(-1)[idx].astype(np.float64)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = scalar()
            flat[i] = orig - eps
            down = scalar()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * eps)
        errors[key] = float(np.linalg.norm(analytic - numeric) / (np.linalg.norm(numeric) + 1e-8))
    return errors


def max_error(errors) -> float:
    return max(errors.values()) if errors else 0.0
