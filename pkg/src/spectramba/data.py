"""CSV ingestion, chronological splits, sliding windows, synthetic series, noise."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed, missing or too-short data."""


@dataclass
class SeriesTable:
    values: np.ndarray                 # [N, V]
    variate_names: list
    timestamps: list | None = None
    sampling_interval: str = ""
    components: list | None = field(default=None, repr=False)  # synthetic draws, when known

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be 2-D [N, V], got shape {self.values.shape}")
        if len(self.variate_names) != self.values.shape[1]:
            raise DataError(f"{len(self.variate_names)} names for {self.values.shape[1]} variates")
        bad = np.flatnonzero(~np.isfinite(self.values).all(axis=1))
        if bad.size:
            raise DataError(f"non-finite value in row {int(bad[0])}")

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def rows(self, start, stop) -> "SeriesTable":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return SeriesTable(self.values[start:stop], list(self.variate_names), ts, self.sampling_interval,
                           self.components)

    def with_values(self, values) -> "SeriesTable":
        return replace(self, values=np.asarray(values, dtype=np.float64))


@dataclass
class WindowBatch:
    inputs: np.ndarray        # [B, L, V]
    targets: np.ndarray       # [B, P, V]
    window_start_indices: list
    marks: np.ndarray | None = None   # [B, L, n_features], calendar features

    def __len__(self):
        return self.inputs.shape[0]

    def take(self, idx) -> "WindowBatch":
        idx = np.asarray(idx)
        marks = None if self.marks is None else self.marks[idx]
        return WindowBatch(self.inputs[idx], self.targets[idx],
                           [self.window_start_indices[i] for i in idx], marks)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_csv(path, value_columns=None, sampling_interval="") -> SeriesTable:
    """Read a header-first CSV.

    The first column is treated as a timestamp column when its first data
    cell is not numeric. ``value_columns`` selects columns by name; by
    default every non-timestamp column is used.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 1} has {len(r)} fields, header has {len(header)}")
    has_ts = not _is_number(body[0][0].strip())
    candidates = header[1:] if has_ts else header
    if value_columns is None:
        value_columns = candidates
    missing = [c for c in value_columns if c not in header]
    if missing:
        raise DataError(f"{path}: columns not found: {missing}")
    col_idx = [header.index(c) for c in value_columns]
    values = np.empty((len(body), len(col_idx)))
    for i, r in enumerate(body):
        for j, c in enumerate(col_idx):
            cell = r[c].strip()
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i + 1}, column {header[c]!r}: cannot parse {cell!r} as a number")
            if not math.isfinite(values[i, j]):
                raise DataError(f"{path}: row {i + 1}, column {header[c]!r}: non-finite value")
    timestamps = [r[0].strip() for r in body] if has_ts else None
    return SeriesTable(values, list(value_columns), timestamps, sampling_interval)


def save_csv(path, table: SeriesTable, float_format="%.17g"):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = (["date"] if table.timestamps is not None else []) + list(table.variate_names)
        w.writerow(head)
        for i, row in enumerate(table.values):
            cells = [float_format % v for v in row]
            if table.timestamps is not None:
                cells = [table.timestamps[i]] + cells
            w.writerow(cells)


def split_sizes(n: int, fractions=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    """Floor the train and validation sizes; the remainder goes to test."""
    if len(fractions) != 3 or min(fractions) <= 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n_train = int(math.floor(n * fractions[0] + 1e-9))
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split_chronological(table: SeriesTable, fractions=(0.7, 0.1, 0.2), min_len=0):
    """Contiguous train/val/test segments in time order."""
    sizes = split_sizes(len(table), fractions)
    for name, size in zip(("train", "val", "test"), sizes):
        if size < min_len:
            raise DataError(f"{name} segment has {size} rows; lookback + horizon needs at least {min_len}")
    a, b = sizes[0], sizes[0] + sizes[1]
    return table.rows(0, a), table.rows(a, b), table.rows(b, len(table))


@dataclass
class Scaler:
    """Per-variate standardization fitted on one segment."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, table: SeriesTable) -> "Scaler":
        std = table.values.std(axis=0)
        return cls(table.values.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, table: SeriesTable) -> SeriesTable:
        return table.with_values((table.values - self.mean) / self.std)

    def transform_array(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def inverse(self, x):
        return np.asarray(x) * self.std + self.mean


def prepare_splits(table: SeriesTable, fractions, lookback, horizon, global_scaling=True):
    """Split chronologically and, optionally, standardize with train-only statistics.

    Returns ``(train, val, test, scaler)``; ``scaler`` is None when scaling is off.
    """
    train, val, test = split_chronological(table, fractions, min_len=lookback + horizon)
    scaler = None
    if global_scaling:
        scaler = Scaler.fit(train)
        train, val, test = (scaler.transform(t) for t in (train, val, test))
    return train, val, test, scaler


def window_count(n, lookback, horizon, stride=1) -> int:
    return (n - lookback - horizon) // stride + 1


def make_windows(table: SeriesTable, lookback, horizon, stride=1, batch_size=None,
                 time_features=False) -> list[WindowBatch]:
    """Sliding ``(input, target)`` windows; targets start right after each input ends.

    With ``batch_size=None`` a single batch holds every window.
    """
    n = len(table)
    if n < lookback + horizon:
        raise DataError(f"series has {n} rows; lookback + horizon needs at least {lookback + horizon}")
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    starts = np.arange(window_count(n, lookback, horizon, stride)) * stride
    x_idx = starts[:, None] + np.arange(lookback)[None, :]
    y_idx = starts[:, None] + lookback + np.arange(horizon)[None, :]
    inputs = table.values[x_idx]
    targets = table.values[y_idx]
    marks = None
    if time_features:
        if table.timestamps is None:
            raise DataError("time features requested but the table has no timestamps")
        from .model import calendar_features
        marks = calendar_features(table.timestamps)[x_idx]
    whole = WindowBatch(inputs, targets, starts.tolist(), marks)
    if batch_size is None:
        return [whole]
    return [whole.take(np.arange(i, min(i + batch_size, len(whole))))
            for i in range(0, len(whole), batch_size)]


def concat_batches(batches) -> WindowBatch:
    marks = None
    if batches[0].marks is not None:
        marks = np.concatenate([b.marks for b in batches])
    return WindowBatch(np.concatenate([b.inputs for b in batches]),
                       np.concatenate([b.targets for b in batches]),
                       sum((list(b.window_start_indices) for b in batches), []), marks)


# ----------------------------------------------------------------- synthetic

SYNTH_COMPONENTS = 3


@dataclass
class SynthSpec:
    """Draw ranges for :func:`synth_damped_sinusoids`.

    Each variate is ``sum_j a_j * exp(-lam_j * ((t mod T_j) / T_j)) *
    cos(2 pi t / p_j + phi_j) + trend * t + noise``. Periods are integers.
    """

    amp: tuple = (0.5, 2.0)
    period: tuple = (12, 96)
    decay: tuple = (0.0, 3.0)
    transient_period: tuple = (96, 384)
    trend: tuple = (-1e-3, 1e-3)
    periods: tuple | None = None   # fixed periods for every variate, overrides ``period``


def synth_damped_sinusoids(n_vars, n_rows, seed, noise_std=0.0, spec: SynthSpec | None = None,
                           start="2020-01-01T00:00", step_minutes=60) -> SeriesTable:
    """Sum of recurring damped cosines per variate.

    Generator: numpy ``Philox`` (64-bit counter-based) keyed by ``seed``.
    Draw order per variate ``v`` (``j`` = 1..3), all from one stream:
    ``a_j`` uniform, ``p_j`` integer uniform inclusive, ``lam_j`` uniform,
    ``T_j`` integer uniform inclusive, ``phi_j`` uniform in [0, 2 pi), then
    ``trend`` uniform. Components are sorted by amplitude so ``p_1`` is the
    dominant period. Noise is drawn afterwards, as one ``[N, V]`` block of
    standard normals scaled by ``noise_std``.
    """
    spec = spec or SynthSpec()
    rng = np.random.Generator(np.random.Philox(seed))
    t = np.arange(n_rows, dtype=np.float64)
    values = np.zeros((n_rows, n_vars))
    meta = []
    for v in range(n_vars):
        comps = []
        for j in range(SYNTH_COMPONENTS):
            a = rng.uniform(*spec.amp)
            p = int(rng.integers(spec.period[0], spec.period[1], endpoint=True))
            if spec.periods is not None:
                p = int(spec.periods[j])
            lam = rng.uniform(*spec.decay)
            tp = int(rng.integers(spec.transient_period[0], spec.transient_period[1], endpoint=True))
            phi = rng.uniform(0.0, 2 * np.pi)
            comps.append((a, p, lam, tp, phi))
        trend = rng.uniform(*spec.trend)
        comps.sort(key=lambda c: -c[0])
        for a, p, lam, tp, phi in comps:
            values[:, v] += a * np.exp(-lam * ((t % tp) / tp)) * np.cos(2 * np.pi * t / p + phi)
        values[:, v] += trend * t
        meta.append(comps)
    if noise_std > 0:
        values += noise_std * rng.standard_normal((n_rows, n_vars))
    stamps = np.datetime64(start, "m") + np.arange(n_rows) * np.timedelta64(step_minutes, "m")
    timestamps = [str(s).replace("T", " ") for s in stamps]
    return SeriesTable(values, [f"var_{v + 1}" for v in range(n_vars)], timestamps,
                       f"{step_minutes} minutes", components=meta)


def inject_noise(batch: WindowBatch, std, seed) -> WindowBatch:
    """Gaussian noise on the inputs only; targets are left untouched."""
    if std < 0:
        raise ValueError(f"noise std must be >= 0, got {std}")
    if std == 0:
        return batch
    rng = np.random.Generator(np.random.Philox(seed))
    noisy = batch.inputs + std * rng.standard_normal(batch.inputs.shape)
    return WindowBatch(noisy, batch.targets, list(batch.window_start_indices), batch.marks)
