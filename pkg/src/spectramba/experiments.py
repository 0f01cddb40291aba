"""Training loop, metrics and the ablation / robustness / lookback / efficiency studies."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import TimeAttentionReference
from .data import (DataError, SeriesTable, WindowBatch, inject_noise, make_windows,
                   prepare_splits, split_sizes)
from .model import ModelConfig, Forecaster, apply_variant
from .nn import Adam, clip_grad_norm

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["variant", "horizon", "lookback", "seed", "mse", "mae", "ms_per_iter", "config_hash"]


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or activation."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    grad_clip: float = 0.0
    seed: int = 0
    max_steps: int = 0   # 0 = no step cap

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    @classmethod
    def from_model_config(cls, cfg: ModelConfig, **overrides) -> "TrainConfig":
        kw = dict(lr=cfg.lr, batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
                  patience=cfg.patience, grad_clip=cfg.grad_clip, seed=cfg.seed)
        kw.update(overrides)
        return cls(**kw)


@dataclass
class Metrics:
    mse: float
    mae: float
    count: int = 0

    def as_dict(self):
        return {"mse": self.mse, "mae": self.mae}


def compute_metrics(pred, truth) -> Metrics:
    """Mean squared and mean absolute error over every element."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise T.DimensionError(f"compute_metrics: prediction {pred.shape} vs truth {truth.shape}")
    err = pred - truth
    return Metrics(float(np.mean(err * err)), float(np.mean(np.abs(err))), err.size)


def predict(model: Forecaster, batch: WindowBatch, chunk=256) -> np.ndarray:
    outs = []
    for i in range(0, len(batch), chunk):
        marks = None if batch.marks is None else batch.marks[i:i + chunk]
        outs.append(model.forecast(batch.inputs[i:i + chunk], marks))
    return np.concatenate(outs)


def evaluate(model: Forecaster, batch: WindowBatch, chunk=256) -> Metrics:
    return compute_metrics(predict(model, batch, chunk), batch.targets)


@dataclass
class History:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0
    step_losses: list = field(default_factory=list)


def train_step(model, opt, batch: WindowBatch, grad_clip=0.0, step=0) -> float:
    """One optimizer step on MSE; returns the batch loss."""
    T.reset_tape()
    opt.zero_grad()
    try:
        pred = model(batch.inputs, batch.marks)
        diff = pred - T.Tensor(batch.targets.astype(pred.dtype))
        loss = T.mean(T.square(diff))
        T.backward(loss)
    except T.NonFiniteError as exc:
        T.reset_tape()
        raise DivergenceError(f"non-finite value at step {step}: {exc}") from exc
    if grad_clip > 0:
        clip_grad_norm(opt.params, grad_clip)
    opt.step()
    return loss.item()


def train(model: Forecaster, train_data: WindowBatch, val_data: WindowBatch | None = None,
          cfg: TrainConfig | None = None, on_epoch=None):
    """Adam on MSE with early stopping on validation MSE.

    The best-validation weights are restored before returning. Shuffling
    uses a Philox stream keyed by ``cfg.seed``, so runs are repeatable.

    Returns:
        ``(model, history)``.
    """
    cfg = cfg or TrainConfig()
    opt = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    hist = History()
    best, best_state, bad = np.inf, model.state_dict(), 0
    n = len(train_data)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            batch = train_data.take(order[i:i + cfg.batch_size])
            losses.append(train_step(model, opt, batch, cfg.grad_clip, hist.steps))
            hist.steps += 1
            if cfg.max_steps and hist.steps >= cfg.max_steps:
                break
        hist.step_losses.extend(losses)
        row = {"epoch": epoch, "train_mse": float(np.mean(losses))}
        if val_data is not None and len(val_data):
            try:
                m = evaluate(model, val_data)
            except T.NonFiniteError as exc:
                raise DivergenceError(f"non-finite validation output after step {hist.steps}: {exc}") from exc
            row.update(val_mse=m.mse, val_mae=m.mae)
            score = m.mse
        else:
            score = row["train_mse"]
        hist.epochs.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if score < best:
            best, best_state, bad = score, model.state_dict(), 0
            hist.best_epoch = epoch
        else:
            bad += 1
        if (cfg.patience and bad >= cfg.patience) or (cfg.max_steps and hist.steps >= cfg.max_steps):
            break
    model.load_state_dict(best_state)
    return model, hist


def fit_batch(model: Forecaster, batch: WindowBatch, steps: int, lr=1e-3, grad_clip=0.0, target=None) -> list:
    """Repeated optimizer steps on one fixed batch; returns the loss trace.

    With ``target`` set, stops as soon as the updated parameters score below
    it (a step's loss is measured before its update, so it is re-checked).
    """
    opt = Adam(model.parameters(), lr)
    losses = []
    for s in range(steps):
        losses.append(train_step(model, opt, batch, grad_clip, s))
        if target is not None and losses[-1] < target and evaluate(model, batch).mse < target:
            break
    return losses


# ------------------------------------------------------------------ reports


@dataclass
class ExperimentReport:
    """Rows of run results plus free-text protocol notes.

    Every row carries the columns in ``REPORT_COLUMNS``; studies may append
    extra columns (noise std, percent changes, latency, ...).
    """

    title: str
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    extra_columns: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)

    @property
    def columns(self):
        return REPORT_COLUMNS + [c for c in self.extra_columns if c not in REPORT_COLUMNS]

    def add(self, **row):
        for k in row:
            if k not in REPORT_COLUMNS and k not in self.extra_columns:
                self.extra_columns.append(k)
        self.rows.append(row)

    def column(self, name):
        return [r.get(name) for r in self.rows]

    def aggregate(self, keys=("variant", "horizon", "lookback"), values=("mse", "mae")):
        """Mean and standard deviation over seeds per group, in first-seen order."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(tuple(r.get(k) for k in keys), []).append(r)
        out = []
        for key, rs in groups.items():
            agg = dict(zip(keys, key))
            agg["n"] = len(rs)
            for v in values:
                arr = np.array([r[v] for r in rs], dtype=float)
                agg[f"{v}_mean"] = float(arr.mean())
                agg[f"{v}_std"] = float(arr.std())
            out.append(agg)
        return out

    def write_csv(self, path):
        cols = self.columns
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_cell(r.get(c)) for c in cols])

    def to_text(self) -> str:
        cols = self.columns
        cells = [cols] + [[_cell(r.get(c), text=True) for c in cols] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
        lines = [f"# {self.title}"] + [f"# {n}" for n in self.notes]
        for j, row in enumerate(cells):
            lines.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
            if j == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def write(self, directory, stem):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.write_csv(directory / f"{stem}.csv")
        (directory / f"{stem}.txt").write_text(self.to_text(), encoding="utf-8")


def _cell(v, text=False):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}" if text else repr(v)
    return str(v)


# ----------------------------------------------------------------- one run


def run_once(cfg: ModelConfig, table: SeriesTable, on_epoch=None, train_overrides=None):
    """Split, window, train and test one configuration.

    Returns ``(model, history, test_metrics, ms_per_iter, splits)``.
    """
    train_t, val_t, test_t, scaler = prepare_splits(
        table, (cfg.train_frac, cfg.val_frac, cfg.test_frac), cfg.lookback, cfg.horizon, cfg.global_scaling)
    win = lambda t: make_windows(t, cfg.lookback, cfg.horizon, cfg.stride, time_features=cfg.time_features)[0]
    tr, va, te = win(train_t), win(val_t), win(test_t)
    model = Forecaster(cfg)
    tcfg = TrainConfig.from_model_config(cfg, **(train_overrides or {}))
    t0 = time.perf_counter()
    model, hist = train(model, tr, va, tcfg, on_epoch)
    ms = 1000.0 * (time.perf_counter() - t0) / max(hist.steps, 1)
    test = evaluate(model, te)
    return model, hist, test, ms, (tr, va, te, scaler)


def run_ablation(base_cfg: ModelConfig, table: SeriesTable, variants, seeds=(0, 1, 2), horizons=None,
                 train_overrides=None) -> ExperimentReport:
    """Train every variant under identical data and seed grids.

    Rows carry ``delta_mse_pct``, the paired change of test MSE relative to
    the baseline run with the same seed and horizon (when a baseline is run).
    """
    variants = list(variants)
    if not variants:
        raise ValueError("run_ablation: no variants given")
    horizons = list(horizons or [base_cfg.horizon])
    rep = ExperimentReport("ablation", notes=[f"variants={','.join(variants)}", f"seeds={list(seeds)}"])
    order = (["baseline"] if "baseline" in variants else []) + [v for v in variants if v != "baseline"]
    base_mse = {}
    for variant in order:
        for h in horizons:
            for s in seeds:
                cfg = apply_variant(base_cfg.replace(horizon=h, seed=s), variant)
                _, hist, m, ms, _ = run_once(cfg, table, train_overrides=train_overrides)
                row = dict(variant=variant, horizon=h, lookback=cfg.lookback, seed=s, mse=m.mse, mae=m.mae,
                           ms_per_iter=ms, config_hash=cfg.config_hash(), epochs=len(hist.epochs))
                if variant == "baseline":
                    base_mse[(h, s)] = m.mse
                if (h, s) in base_mse:
                    row["delta_mse_pct"] = 100.0 * (m.mse - base_mse[(h, s)]) / base_mse[(h, s)]
                rep.add(**row)
                log.info("ablation %s h=%d seed=%d mse=%.5f", variant, h, s, m.mse)
    return rep


def paired_delta(report: ExperimentReport, variant, baseline="baseline") -> float:
    """Mean over (horizon, seed) pairs of the relative MSE change in percent."""
    base = {(r["horizon"], r["seed"]): r["mse"] for r in report.rows if r["variant"] == baseline}
    deltas = [100.0 * (r["mse"] - base[(r["horizon"], r["seed"])]) / base[(r["horizon"], r["seed"])]
              for r in report.rows if r["variant"] == variant and (r["horizon"], r["seed"]) in base]
    if not deltas:
        raise KeyError(f"no paired runs for {variant!r} vs {baseline!r}")
    return float(np.mean(deltas))


def run_robustness(model: Forecaster, test_data: WindowBatch, stds=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5), seed=0,
                   variant="baseline") -> ExperimentReport:
    """Evaluate with Gaussian input noise of increasing standard deviation.

    ``mse_pct_change = 100 * (mse - mse_0) / mse_0`` where ``mse_0`` is the
    same model's noise-free score; likewise for MAE.
    """
    cfg = model.cfg
    rep = ExperimentReport("robustness", notes=[
        "noise: gaussian, added to test inputs only, in the globally standardized scale",
        f"noise seed={seed}"])
    base = None
    for std in stds:
        m = evaluate(model, inject_noise(test_data, std, seed))
        if base is None:
            base = m if std == 0 else evaluate(model, test_data)
        rep.add(variant=variant, horizon=cfg.horizon, lookback=cfg.lookback, seed=cfg.seed, mse=m.mse, mae=m.mae,
                ms_per_iter=None, config_hash=cfg.config_hash(), noise_std=float(std),
                mse_pct_change=100.0 * (m.mse - base.mse) / base.mse,
                mae_pct_change=100.0 * (m.mae - base.mae) / base.mae)
    return rep


def run_lookback(cfg: ModelConfig, table: SeriesTable, lookbacks=(48, 96, 192, 336, 720), seeds=(0,),
                 train_overrides=None) -> ExperimentReport:
    """Train and test one model per lookback length (and seed)."""
    fr = (cfg.train_frac, cfg.val_frac, cfg.test_frac)
    sizes = split_sizes(len(table), fr)
    need = max(lookbacks) + cfg.horizon
    if min(sizes) < need:
        raise DataError(f"lookback study needs every split to hold {need} rows "
                        f"(max lookback {max(lookbacks)} + horizon {cfg.horizon}); split sizes are {sizes}")
    rep = ExperimentReport("lookback", notes=[f"lookbacks={list(lookbacks)}"])
    for L in lookbacks:
        for s in seeds:
            c = cfg.replace(lookback=L, seed=s)
            _, hist, m, ms, _ = run_once(c, table, train_overrides=train_overrides)
            rep.add(variant="baseline", horizon=c.horizon, lookback=L, seed=s, mse=m.mse, mae=m.mae,
                    ms_per_iter=ms, config_hash=c.config_hash(), epochs=len(hist.epochs))
    return rep


# --------------------------------------------------------------- efficiency


def _time_calls(fn, n_iter, warmup):
    times = []
    for i in range(n_iter):
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        if i >= warmup:
            times.append(1000.0 * dt)
    return np.array(times)


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def run_efficiency(cfg: ModelConfig, lengths=(96, 192, 384, 768), batch_size=8, n_iter=100, warmup=10,
                   forward_iter=None, reference=True, seed=0, reference_dim=16) -> ExperimentReport:
    """Wall-clock cost per training step and per forward pass versus lookback.

    Each configuration is timed for ``n_iter`` training steps and
    ``forward_iter`` forward passes; the first ``warmup`` of each are
    discarded. ``ms_per_iter`` is the mean step time, ``forward_ms`` the
    median forward time (robust to one-off stalls). Log-log slopes of
    ``forward_ms`` against ``L`` are stored in ``report.notes`` and on the
    report as ``slopes``. With ``reference=True`` a naive
    self-attention-over-time model is timed on the same inputs, in a
    separate pass after the model, as a quadratic contrast. Its width
    ``reference_dim`` is kept small so the ``L x L`` score matrix, not the
    ``L x d x d`` projections, dominates over the measured lengths.
    """
    forward_iter = forward_iter or n_iter
    if warmup >= min(n_iter, forward_iter):
        raise ValueError("warmup must be smaller than the iteration counts")
    rng = np.random.Generator(np.random.Philox(seed))
    rep = ExperimentReport("efficiency", notes=[
        f"timing: perf_counter, {n_iter} optimizer steps (mean) and {forward_iter} forward passes (median) "
        f"per length, first {warmup} discarded",
        f"batch_size={batch_size}, reference width={reference_dim}"])
    inputs = {}
    for L in lengths:
        c = cfg.replace(lookback=L)
        x = rng.standard_normal((batch_size, L, c.n_vars)).astype(c.dtype)
        y = rng.standard_normal((batch_size, c.horizon, c.n_vars))
        inputs[L] = x
        batch = WindowBatch(x, y, list(range(batch_size)))
        model = Forecaster(c)
        opt = Adam(model.parameters(), c.lr)
        step_ms = _time_calls(lambda: train_step(model, opt, batch), n_iter, warmup)
        fwd_ms = _time_calls(lambda: model.forecast(x), forward_iter, warmup)
        rep.add(variant="model", horizon=c.horizon, lookback=L, seed=c.seed, mse=None, mae=None,
                ms_per_iter=float(step_ms.mean()), config_hash=c.config_hash(),
                ms_per_iter_std=float(step_ms.std()), forward_ms=float(np.median(fwd_ms)),
                forward_ms_std=float(fwd_ms.std()), n_params=model.num_parameters())
    if reference:
        for L in lengths:
            c = cfg.replace(lookback=L)
            ref = TimeAttentionReference(c.n_vars, c.horizon, L, d_model=reference_dim,
                                         dtype=c.dtype).initialize(seed)
            x = T.Tensor(inputs[L])

            def ref_fwd():
                with T.no_grad():
                    ref(x)

            ref_ms = _time_calls(ref_fwd, forward_iter, warmup)
            rep.add(variant="time_attention_reference", horizon=c.horizon, lookback=L, seed=c.seed, mse=None,
                    mae=None, ms_per_iter=None, config_hash=c.config_hash(), forward_ms=float(np.median(ref_ms)),
                    forward_ms_std=float(ref_ms.std()), n_params=ref.num_parameters())
    rep.slopes, rep.ratios = {}, {}
    for k in ("model", "time_attention_reference"):
        ms = [r["forward_ms"] for r in rep.rows if r["variant"] == k]
        if ms:
            rep.slopes[k] = loglog_slope(lengths, ms)
            rep.ratios[k] = float(ms[-1] / ms[0])
            rep.notes.append(f"{k}: forward latency log-log slope vs L = {rep.slopes[k]:.3f}, "
                             f"t({lengths[-1]})/t({lengths[0]}) = {rep.ratios[k]:.2f}")
    return rep
