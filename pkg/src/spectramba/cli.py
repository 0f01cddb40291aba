"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import (DataError, Scaler, SynthSpec, WindowBatch, load_csv, make_windows, prepare_splits,
                   save_csv, synth_damped_sinusoids)
from .experiments import (DivergenceError, ExperimentReport, evaluate, run_ablation, run_efficiency,
                          run_lookback, run_once, run_robustness)
from .model import VARIANTS, ConfigError, Forecaster, ModelConfig, parse_override
from .tensor import DimensionError, NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class RunLog:
    """Plain-text log written next to a run's outputs (and echoed to stdout)."""

    def __init__(self, path, echo=True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = self.path.open("w", encoding="utf-8")
        self.echo = echo

    def __call__(self, msg):
        self.fh.write(msg + "\n")
        self.fh.flush()
        if self.echo:
            print(msg)

    def close(self):
        self.fh.close()


def _csv_list(typ):
    return lambda s: [typ(x) for x in s.split(",") if x.strip()]


def _build_parser():
    p = _Parser(prog="spectramba", description="FFT-Laplace / Mamba forecaster: training and studies")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, config=True, data=True):
        if config:
            sp.add_argument("-c", "--config", help="flat key = value config file")
            sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                            help="override a config key (repeatable; wins over the file)")
            sp.add_argument("--seed", type=int, help="shortcut for --set seed=N")
        if data:
            sp.add_argument("-d", "--data", required=True, help="CSV time series")
        sp.add_argument("-o", "--out", default="runs", help="output directory")

    sp = sub.add_parser("synth", help="write a synthetic damped-sinusoid CSV")
    sp.add_argument("--rows", type=int, default=2000)
    sp.add_argument("--variates", type=int, default=7)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--periods", type=_csv_list(int), help="fixed periods for the three components")
    sp.add_argument("-o", "--out", required=True, help="output CSV path")

    common(sub.add_parser("train", help="train a model and test it"))

    sp = sub.add_parser("evaluate", help="test metrics of a checkpoint on the data's test split")
    sp.add_argument("--checkpoint", required=True)
    common(sp, config=False)

    sp = sub.add_parser("predict", help="forecast from the last lookback rows of a CSV")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("-i", "--input", required=True)
    sp.add_argument("--all-windows", action="store_true",
                    help="forecast every non-overlapping lookback window instead of only the last")
    sp.add_argument("-o", "--out", required=True, help="output CSV path")

    sp = sub.add_parser("ablate", help="ablation study")
    common(sp)
    sp.add_argument("--variants", type=_csv_list(str), default=list(VARIANTS))
    sp.add_argument("--seeds", type=_csv_list(int), default=[0, 1, 2])
    sp.add_argument("--horizons", type=_csv_list(int))

    sp = sub.add_parser("robustness", help="noise robustness of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    common(sp, config=False)
    sp.add_argument("--stds", type=_csv_list(float), default=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    sp.add_argument("--noise-seed", type=int, default=0)

    sp = sub.add_parser("lookback", help="lookback-length study")
    common(sp)
    sp.add_argument("--lookbacks", type=_csv_list(int), default=[48, 96, 192, 336, 720])
    sp.add_argument("--seeds", type=_csv_list(int), default=[0])

    sp = sub.add_parser("bench", help="latency / training-step timing versus lookback")
    common(sp, data=False)
    sp.add_argument("--lengths", type=_csv_list(int), default=[96, 192, 384, 768])
    sp.add_argument("--iters", type=int, default=100)
    sp.add_argument("--warmup", type=int, default=10)
    sp.add_argument("--batch-size", type=int, default=8)
    return p


def resolve_config(args) -> ModelConfig:
    overrides = [parse_override(s) for s in args.set]
    if getattr(args, "seed", None) is not None:
        overrides.append(("seed", str(args.seed)))
    if args.config:
        return ModelConfig.load(args.config, overrides)
    return ModelConfig.from_pairs(overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_vars(cfg, table, path):
    if table.n_vars != cfg.n_vars:
        raise DataError(f"{path}: {table.n_vars} variates but config n_vars = {cfg.n_vars}")


def cmd_synth(args):
    spec = SynthSpec(periods=tuple(args.periods)) if args.periods else None
    table = synth_damped_sinusoids(args.variates, args.rows, args.seed, args.noise, spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_csv(args.out, table)
    print(f"wrote {args.rows} rows x {args.variates} variates to {args.out}")


def cmd_train(args):
    cfg = resolve_config(args)
    out = _out_dir(args)
    cfg.save(out / "config.txt")
    table = load_csv(args.data)
    _check_vars(cfg, table, args.data)
    runlog = RunLog(out / "run.log")
    runlog(f"config_hash {cfg.config_hash()}")

    def on_epoch(row):
        runlog("epoch {epoch} train_mse={train_mse!r} val_mse={val_mse!r} val_mae={val_mae!r}".format(
            **{"val_mse": None, "val_mae": None, **row}))

    try:
        model, hist, test, ms, (_, _, _, scaler) = run_once(cfg, table, on_epoch=on_epoch)
    finally:
        runlog.fh.flush()
    extras = {}
    if scaler is not None:
        extras = {"scale_mean": scaler.mean, "scale_std": scaler.std}
    model.save(out / "model.ckpt", extras)
    runlog(f"best_epoch {hist.best_epoch} steps {hist.steps} ms_per_iter {ms:.3f}")
    runlog(f"test mse={test.mse!r} mae={test.mae!r}")
    runlog(f"checkpoint {out / 'model.ckpt'} sha256 {checkpoint.file_hash(out / 'model.ckpt')}")
    runlog.close()
    rep = ExperimentReport("train")
    rep.add(variant="run", horizon=cfg.horizon, lookback=cfg.lookback, seed=cfg.seed, mse=test.mse, mae=test.mae,
            ms_per_iter=ms, config_hash=cfg.config_hash())
    rep.write(out, "metrics")


def _load_checkpoint(path):
    try:
        return Forecaster.load(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}")


def _test_split(model, data_path):
    cfg = model.cfg
    table = load_csv(data_path)
    _check_vars(cfg, table, data_path)
    _, _, test_t, _ = prepare_splits(table, (cfg.train_frac, cfg.val_frac, cfg.test_frac),
                                     cfg.lookback, cfg.horizon, cfg.global_scaling)
    return make_windows(test_t, cfg.lookback, cfg.horizon, cfg.stride, time_features=cfg.time_features)[0]


def cmd_evaluate(args):
    model, _ = _load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    model.cfg.save(out / "config.txt")
    m = evaluate(model, _test_split(model, args.data))
    print(f"test mse={m.mse!r} mae={m.mae!r}")
    rep = ExperimentReport("evaluate")
    rep.add(variant="run", horizon=model.cfg.horizon, lookback=model.cfg.lookback, seed=model.cfg.seed,
            mse=m.mse, mae=m.mae, ms_per_iter=None, config_hash=model.cfg.config_hash())
    rep.write(out, "evaluate")


def cmd_predict(args):
    model, extras = _load_checkpoint(args.checkpoint)
    cfg = model.cfg
    table = load_csv(args.input)
    _check_vars(cfg, table, args.input)
    if len(table) < cfg.lookback:
        raise DataError(f"{args.input}: has {len(table)} rows; the checkpoint needs at least "
                        f"{cfg.lookback} rows (lookback = {cfg.lookback})")
    values = table.values
    scaler = Scaler(extras["scale_mean"], extras["scale_std"]) if "scale_mean" in extras else None
    if scaler is not None:
        values = scaler.transform_array(values)
    n = len(table)
    starts = list(range(n % cfg.lookback, n - cfg.lookback + 1, cfg.lookback)) if args.all_windows \
        else [n - cfg.lookback]
    x = np.stack([values[s:s + cfg.lookback] for s in starts])
    marks = None
    if cfg.time_features:
        from .model import calendar_features
        if table.timestamps is None:
            raise DataError(f"{args.input}: time features need a timestamp column")
        feats = calendar_features(table.timestamps)
        marks = np.stack([feats[s:s + cfg.lookback] for s in starts])
    y = model.forecast(x, marks)
    if scaler is not None:
        y = scaler.inverse(y)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(",".join(["step"] + [f"variate_{v + 1}" for v in range(cfg.n_vars)]) + "\n")
        for w in range(y.shape[0]):
            for p in range(cfg.horizon):
                fh.write(",".join([str(p + 1)] + [repr(float(v)) for v in y[w, p]]) + "\n")
    print(f"wrote {y.shape[0]} window(s) x {cfg.horizon} steps to {args.out}")


def cmd_ablate(args):
    cfg = resolve_config(args)
    out = _out_dir(args)
    cfg.save(out / "config.txt")
    table = load_csv(args.data)
    _check_vars(cfg, table, args.data)
    rep = run_ablation(cfg, table, args.variants, args.seeds, args.horizons)
    rep.write(out, "ablation")
    print(rep.to_text())


def cmd_robustness(args):
    model, _ = _load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    model.cfg.save(out / "config.txt")
    rep = run_robustness(model, _test_split(model, args.data), args.stds, args.noise_seed)
    rep.write(out, "robustness")
    print(rep.to_text())


def cmd_lookback(args):
    cfg = resolve_config(args)
    out = _out_dir(args)
    cfg.save(out / "config.txt")
    table = load_csv(args.data)
    _check_vars(cfg, table, args.data)
    rep = run_lookback(cfg, table, args.lookbacks, args.seeds)
    rep.write(out, "lookback")
    print(rep.to_text())


def cmd_bench(args):
    cfg = resolve_config(args)
    out = _out_dir(args)
    cfg.save(out / "config.txt")
    rep = run_efficiency(cfg, args.lengths, args.batch_size, args.iters, args.warmup)
    rep.write(out, "efficiency")
    print(rep.to_text())


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate, "predict": cmd_predict,
            "ablate": cmd_ablate, "robustness": cmd_robustness, "lookback": cmd_lookback, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except (DataError, ConfigError, DimensionError, checkpoint.CheckpointError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
