"""
Ablation, noise robustness and latency at desk scale
====================================================

Three of the study harnesses on the bundled synthetic series
(``data/synthetic.csv``, 2000 rows x 7 variates). Small widths and few
epochs keep the whole script to a few minutes; the same studies are
available from the command line as ``spectramba ablate``, ``robustness``
and ``bench``.
"""

from pathlib import Path

import numpy as np

from spectramba import ModelConfig, load_csv, run_ablation, run_efficiency, run_robustness
from spectramba.experiments import paired_delta, run_once

table = load_csv(Path(__file__).resolve().parents[1] / "data" / "synthetic.csv")
cfg = ModelConfig(lookback=96, horizon=24, n_vars=7, d_model=32, e_layers=1, d_state=8, attn_dim=16,
                  max_epochs=6, patience=2)

# --- which components matter: every variant sees the same splits and seeds
variants = ["baseline", "no_fft_laplace_and_tcn", "no_attention", "minimal"]
abl = run_ablation(cfg, table, variants, seeds=(0, 1))
print(abl.to_text(), "\n")
for v in variants[1:]:
    print(f"{v:<24} paired mse change vs baseline {paired_delta(abl, v):+6.1f}%")

# --- gaussian input noise on the test windows of one trained baseline
model, _, _, _, (_, _, test, _) = run_once(cfg, table)
rob = run_robustness(model, test, seed=0)
print("\nnoise std   mse      change")
for r in rob.rows:
    print(f"{r['noise_std']:9.1f}   {r['mse']:.4f}   {r['mse_pct_change']:+6.1f}%")

# --- forward latency versus lookback, against naive attention over time
eff = run_efficiency(cfg.replace(d_model=64), lengths=(96, 192, 384, 768), n_iter=4, warmup=2, forward_iter=12)
print()
for line in eff.notes[2:]:
    print(line)
ms = {L: [r["forward_ms"] for r in eff.rows if r["lookback"] == L] for L in (96, 768)}
print(f"at L=768 the model needs {ms[768][0]:.1f} ms per batch, the reference {ms[768][1]:.1f} ms")
