"""Multivariate forecaster combining FFT-Laplace reconstruction, dilated causal
convolutions, a reversed selective state-space scan and spatial-temporal attention,
built on a small numpy autodiff core."""

from .data import (SeriesTable, WindowBatch, inject_noise, load_csv, make_windows, split_chronological,
                   synth_damped_sinusoids)
from .experiments import (ExperimentReport, Metrics, TrainConfig, compute_metrics, evaluate, run_ablation,
                          run_efficiency, run_lookback, run_robustness, train)
from .model import Forecaster, ModelConfig, apply_variant, denormalize, normalize
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"
