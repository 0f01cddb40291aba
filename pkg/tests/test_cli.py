import csv
import re
import subprocess
import sys

import numpy as np
import pytest

from spectramba import checkpoint
from spectramba.cli import main
from spectramba.data import load_csv, save_csv

CFG = """\
lookback = 24
horizon = 8
n_vars = 3
d_model = 16
e_layers = 1
d_state = 4
attn_dim = 8
max_epochs = 2
batch_size = 64
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--rows", "400", "--variates", "3", "--seed", "1", "-o", str(root / "data.csv")]) == 0
    (root / "cfg.txt").write_text(CFG)
    assert main(["train", "-c", str(root / "cfg.txt"), "--set", "seed=1", "-d", str(root / "data.csv"),
                 "-o", str(root / "run")]) == 0
    return root


def logged_test_metrics(run_dir):
    m = re.search(r"^test mse=(\S+) mae=(\S+)$", (run_dir / "run.log").read_text(), re.M)
    return float(m.group(1)), float(m.group(2))


def test_train_outputs(workspace):
    run = workspace / "run"
    for name in ("config.txt", "run.log", "model.ckpt", "metrics.csv", "metrics.txt"):
        assert (run / name).exists(), name
    text = (run / "config.txt").read_text()
    assert "seed = 1" in text and "lookback = 24" in text
    assert re.search(r"^epoch 0 train_mse=", (run / "run.log").read_text(), re.M)


def test_deterministic_checkpoint(workspace):
    out = workspace / "run2"
    assert main(["train", "-c", str(workspace / "cfg.txt"), "--set", "seed=1", "-d", str(workspace / "data.csv"),
                 "-o", str(out)]) == 0
    assert checkpoint.file_hash(out / "model.ckpt") == checkpoint.file_hash(workspace / "run" / "model.ckpt")


def test_evaluate_matches_training_log(workspace, capsys):
    out = workspace / "eval"
    assert main(["evaluate", "--checkpoint", str(workspace / "run" / "model.ckpt"),
                 "-d", str(workspace / "data.csv"), "-o", str(out)]) == 0
    with (out / "evaluate.csv").open() as fh:
        row = list(csv.DictReader(fh))[0]
    mse, mae = logged_test_metrics(workspace / "run")
    assert abs(float(row["mse"]) - mse) <= 1e-9 and abs(float(row["mae"]) - mae) <= 1e-9
    assert (out / "config.txt").exists()


def test_predict_format(workspace):
    out = workspace / "pred.csv"
    assert main(["predict", "--checkpoint", str(workspace / "run" / "model.ckpt"),
                 "-i", str(workspace / "data.csv"), "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,variate_1,variate_2,variate_3"
    assert len(lines) == 1 + 8
    assert [l.split(",")[0] for l in lines[1:]] == [str(i) for i in range(1, 9)]
    assert np.isfinite(np.loadtxt(out, delimiter=",", skiprows=1)).all()


def test_predict_all_windows(workspace):
    out = workspace / "pred_all.csv"
    assert main(["predict", "--checkpoint", str(workspace / "run" / "model.ckpt"),
                 "-i", str(workspace / "data.csv"), "--all-windows", "-o", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + (400 // 24) * 8


def test_predict_short_input(workspace, capsys):
    table = load_csv(workspace / "data.csv")
    save_csv(workspace / "short.csv", table.rows(0, 12))
    code = main(["predict", "--checkpoint", str(workspace / "run" / "model.ckpt"),
                 "-i", str(workspace / "short.csv"), "-o", str(workspace / "x.csv")])
    assert code == 2
    assert "24 rows" in capsys.readouterr().err


def test_set_wins_and_unknown_key(workspace, capsys):
    out = workspace / "bad"
    code = main(["train", "-c", str(workspace / "cfg.txt"), "--set", "no_such_key=1",
                 "-d", str(workspace / "data.csv"), "-o", str(out)])
    assert code == 2 and "no_such_key" in capsys.readouterr().err


def test_variate_mismatch(workspace, capsys):
    code = main(["train", "-c", str(workspace / "cfg.txt"), "--set", "n_vars=7",
                 "-d", str(workspace / "data.csv"), "-o", str(workspace / "bad2")])
    assert code == 2 and "n_vars" in capsys.readouterr().err


def test_missing_data_file(workspace, capsys):
    code = main(["train", "-c", str(workspace / "cfg.txt"), "-d", str(workspace / "nope.csv"),
                 "-o", str(workspace / "bad3")])
    assert code == 2 and "nope.csv" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["train"], ["synth", "--rows", "many", "-o", "x"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_numeric_failure_exit_code(workspace, capsys):
    code = main(["train", "-c", str(workspace / "cfg.txt"), "--set", "lr=1e200", "--set", "max_epochs=3",
                 "-d", str(workspace / "data.csv"), "-o", str(workspace / "diverge")])
    assert code == 3
    assert "numeric failure" in capsys.readouterr().err


def test_robustness_and_bench(workspace):
    out = workspace / "studies"
    assert main(["robustness", "--checkpoint", str(workspace / "run" / "model.ckpt"),
                 "-d", str(workspace / "data.csv"), "-o", str(out)]) == 0
    with (out / "robustness.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["noise_std"]) for r in rows] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    assert main(["bench", "-c", str(workspace / "cfg.txt"), "--lengths", "24,48", "--iters", "12",
                 "--warmup", "10", "-o", str(out)]) == 0
    text = (out / "efficiency.txt").read_text()
    assert "log-log slope" in text and "time_attention_reference" in text


def test_ablate_and_lookback(workspace):
    out = workspace / "studies2"
    args = ["-c", str(workspace / "cfg.txt"), "--set", "max_epochs=1", "-d", str(workspace / "data.csv"),
            "-o", str(out)]
    assert main(["ablate", *args, "--variants", "baseline,minimal", "--seeds", "0"]) == 0
    assert main(["lookback", *args, "--lookbacks", "12,24"]) == 0
    with (out / "ablation.csv").open() as fh:
        assert [r["variant"] for r in csv.DictReader(fh)] == ["baseline", "minimal"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "spectramba", "synth", "--rows", "50", "--variates", "2",
                           "-o", str(tmp_path / "s.csv")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert load_csv(tmp_path / "s.csv").values.shape == (50, 2)
