"""
What the Laplace block can represent
====================================

The forward branch rebuilds each variate as a sum of exponentially
modulated cosines. Here the block alone is fitted to one damped cosine,
``exp(-2t) cos(12t + 0.5)`` on 96 points, and the synthesis parameters it
ends up using are printed next to the true ones.
"""

import numpy as np

from spectramba import tensor as T
from spectramba.laplace import LaplaceBlock
from spectramba.nn import Adam

t = np.linspace(0.0, 1.0, 96)
y = np.exp(-2 * t) * np.cos(12 * t + 0.5)
x = T.Tensor(y[None, None, :])

# 8 harmonics are plenty for a single mode and keep the fit quick
block = LaplaceBlock(96, 96, harmonics=8).initialize(0)
opt = Adam(block.parameters(), 3e-3)
for step in range(2000):
    T.reset_tape()
    opt.zero_grad()
    loss = T.mean(T.square(block(x) - x))
    T.backward(loss)
    opt.step()
    if step % 50 == 0 or loss.item() < 1e-4:
        print(f"step {step:>4}  mse {loss.item():.2e}")
    if loss.item() < 1e-4:
        break

with T.no_grad():
    spec = T.rfft(x)
    s = block.spectrum_scale
    p = block.project_params(T.ComplexSpectrum(spec.real * s, spec.imag * s))

# weight each harmonic by its peak amplitude to see which ones carry the signal
amp = np.abs(p.A.data[0, 0]).max(axis=0)
order = np.argsort(-amp)
print("\n harmonic  |A|max   alpha   omega    phi")
for h in order[:4]:
    print(f"{h:>9}  {amp[h]:6.3f}  {p.alpha.data[0, 0, h]:6.2f}  {p.omega.data[0, 0, h]:6.2f}  "
          f"{p.phi.data[0, 0, h]:6.2f}")
# the fit is not an identification: the learned time grid and the per-step
# amplitudes absorb decay and phase, so no single harmonic has to land on
# (alpha, omega, phi) = (-2, 12, 0.5)
print(f"learned grid runs from {p.t.data[0]:.3f} to {p.t.data[-1]:.3f} (started at 1e-4 .. 1)")
