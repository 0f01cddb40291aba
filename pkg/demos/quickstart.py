"""
Train a small forecaster on synthetic data
==========================================

Generate a few damped sinusoids, split them chronologically, train a
desk-sized model and forecast the next 24 steps. Runs in well under a minute.
"""

import numpy as np

from spectramba import ModelConfig, Forecaster, evaluate, make_windows, synth_damped_sinusoids, train
from spectramba.data import prepare_splits
from spectramba.experiments import TrainConfig

# three variates, 2000 hourly rows, light observation noise
table = synth_damped_sinusoids(3, 2000, seed=0, noise_std=0.05)
print("series", table.values.shape, "first stamp", table.timestamps[0])

# 70/10/20 split; the scaler is fit on the train segment only
L, P = 96, 24
train_t, val_t, test_t, scaler = prepare_splits(table, (0.7, 0.1, 0.2), L, P)
tr, va, te = (make_windows(t, L, P)[0] for t in (train_t, val_t, test_t))
print("windows train/val/test:", len(tr), len(va), len(te))

cfg = ModelConfig(lookback=L, horizon=P, n_vars=3, d_model=32, e_layers=1, d_state=8, attn_dim=16)
model = Forecaster(cfg)
print("parameters:", model.num_parameters())

model, hist = train(model, tr, va, TrainConfig(lr=1e-3, batch_size=32, max_epochs=5, patience=2),
                    on_epoch=lambda r: print(f"  epoch {r['epoch']} train {r['train_mse']:.4f} "
                                             f"val {r['val_mse']:.4f}"))
m = evaluate(model, te)
print(f"test mse {m.mse:.4f} mae {m.mae:.4f} (best epoch {hist.best_epoch})")

# a forecast is returned in the scaled space; undo the train-split scaling
window = te.inputs[-1:]
pred = scaler.inverse(model.forecast(window)[0])
truth = scaler.inverse(te.targets[-1])
print("step  predicted (variate 1)  actual")
for i in range(0, P, 4):
    print(f"{i + 1:>4}  {pred[i, 0]:>20.3f}  {truth[i, 0]:.3f}")

# persistence round trip
model.save("/tmp/quickstart.ckpt")
back, _ = Forecaster.load("/tmp/quickstart.ckpt")
assert np.array_equal(back.forecast(window), model.forecast(window))
