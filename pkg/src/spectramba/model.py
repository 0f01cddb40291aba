"""End-to-end forecaster: normalize, tokenize variates, encode, project, denormalize."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .attention import FFNTD, STAttention, TokenSelfAttention
from .laplace import FFT_NORMS, LaplaceBlock
from .nn import Linear, Module
from .ssm import MambaBlock, backward_branch
from .tcn import TCN
from .tensor import Tensor

N_TIME_FEATURES = 2
ATTENTION_KINDS = ("st", "self", "none")


class ConfigError(ValueError):
    """Invalid, unknown or inconsistent configuration."""


@dataclass
class ModelConfig:
    """Architecture, training and data hyperparameters for one run.

    Zero means "derive the default" for ``recon_len`` (model width),
    ``harmonics`` (reconstruction length), ``d_ff`` (twice the width),
    ``low_rank``/``fft_topk``/``grad_clip`` (disabled).
    """

    # shapes
    lookback: int = 96
    horizon: int = 96
    n_vars: int = 7
    d_model: int = 128
    e_layers: int = 2
    # forward branch
    recon_len: int = 0
    harmonics: int = 0
    low_rank: int = 0
    fft_topk: int = 0
    fft_norm: str = "ortho"
    tcn_layers: int = 2
    tcn_kernel: int = 3
    tcn_residual: bool = True
    tcn_depthwise: bool = True
    # backward branch
    d_state: int = 16
    ssm_conv: bool = True
    ssm_gate: bool = True
    ssm_zoh: bool = False
    # attention and refinement
    attn_dim: int = 64
    d_ff: int = 0
    # component switches
    use_forward_branch: bool = True
    use_fft_laplace: bool = True
    use_tcn: bool = True
    use_mamba: bool = True
    attention: str = "st"
    time_features: bool = False
    # numerics
    precision: str = "float64"
    norm_eps: float = 1e-5
    seed: int = 0
    # training
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    grad_clip: float = 0.0
    # data
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2
    global_scaling: bool = True
    stride: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("lookback", "horizon", "n_vars", "d_model", "e_layers", "tcn_layers",
                     "tcn_kernel", "d_state", "attn_dim", "batch_size", "stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("recon_len", "harmonics", "low_rank", "fft_topk", "d_ff", "max_epochs", "patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.low_rank and self.low_rank >= min(self.rec_len, self.n_harmonics):
            raise ConfigError(f"low_rank={self.low_rank} must be < min(recon_len, harmonics) = "
                              f"{min(self.rec_len, self.n_harmonics)}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")
        if self.fft_norm not in FFT_NORMS:
            raise ConfigError(f"fft_norm must be one of {FFT_NORMS}, got {self.fft_norm!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.d_ff and self.d_ff < self.d_model:
            raise ConfigError(f"d_ff={self.d_ff} must be >= d_model={self.d_model}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fr}")

    @property
    def rec_len(self) -> int:
        return self.recon_len or self.d_model

    @property
    def n_harmonics(self) -> int:
        return self.harmonics or self.rec_len

    @property
    def n_tokens(self) -> int:
        return self.n_vars + (N_TIME_FEATURES if self.time_features else 0)

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    # flat key = value text ------------------------------------------------

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @classmethod
    def from_pairs(cls, pairs, base: "ModelConfig | None" = None) -> "ModelConfig":
        """Build a config from ``(key, raw_value)`` pairs; later pairs win."""
        types = {f.name: f.type for f in fields(cls)}
        values = dataclasses.asdict(base) if base is not None else {}
        for key, raw in pairs:
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _parse(key, raw, types[key])
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc))

    @classmethod
    def from_text(cls, text: str, source="<config>") -> "ModelConfig":
        return cls.from_pairs(parse_pairs(text, source))

    @classmethod
    def load(cls, path, overrides=()) -> "ModelConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}")
        return cls.from_pairs(list(parse_pairs(text, str(path))) + list(overrides))

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")


def parse_pairs(text: str, source="<config>"):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override must be key=value, got {item!r}")
    k, v = item.split("=", 1)
    return k.strip(), v.strip()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(key, raw, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = str(raw).strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ}")


# ----------------------------------------------------------------- variants

VARIANTS = {
    "baseline": {},
    "no_fft_laplace": {"use_fft_laplace": False},
    "no_tcn": {"use_tcn": False},
    "no_fft_laplace_and_tcn": {"use_fft_laplace": False, "use_tcn": False},
    "self_attention": {"attention": "self"},
    "no_attention": {"attention": "none"},
    "minimal": {"use_forward_branch": False, "attention": "none"},
}


def apply_variant(cfg: ModelConfig, variant: str) -> ModelConfig:
    """Config with the ablation switches of ``variant`` applied."""
    try:
        changes = VARIANTS[variant]
    except KeyError:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return cfg.replace(**changes)


# ------------------------------------------------------------ normalization


@dataclass
class NormStats:
    mean: np.ndarray  # [B, 1, V]
    std: np.ndarray   # [B, 1, V]
    eps: float = 1e-5


def normalize(x, eps=1e-5):
    """Per-window, per-variate z-score over the lookback axis of ``[B, L, V]``.

    Standard deviations below ``eps`` are clamped to ``eps``; clamping keeps
    the wrapper exactly affine-equivariant for every non-degenerate window.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    mean = x.mean(axis=1, keepdims=True)
    std = np.maximum(x.std(axis=1, keepdims=True), eps)
    return (x - mean) / std, NormStats(mean, std, eps)


def denormalize(y, stats: NormStats):
    if isinstance(y, Tensor):
        return y * Tensor(stats.std.astype(y.dtype)) + Tensor(stats.mean.astype(y.dtype))
    return np.asarray(y) * stats.std + stats.mean


def calendar_features(timestamps) -> np.ndarray:
    """Hour-of-day and day-of-week scaled to [-0.5, 0.5], shape ``[N, 2]``."""
    ts = np.asarray(timestamps, dtype="datetime64[s]")
    hours = (ts - ts.astype("datetime64[D]")).astype("timedelta64[h]").astype(int)
    dow = (ts.astype("datetime64[D]").astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday
    return np.stack([hours / 23.0 - 0.5, dow / 6.0 - 0.5], axis=-1)


# ------------------------------------------------------------------- layers


class EncoderLayer(Module):
    """Forward branch + reversed Mamba branch, residual fusion, attention, FFN-TD."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        dt = cfg.dtype
        D, V = cfg.d_model, cfg.n_tokens
        self.cfg = cfg
        if cfg.use_forward_branch:
            width = D
            if cfg.use_fft_laplace:
                self.laplace = LaplaceBlock(D, cfg.rec_len, cfg.n_harmonics, cfg.low_rank or None,
                                            cfg.fft_topk or None,
                                            cfg.fft_norm, dtype=dt)
                width = cfg.rec_len
            if cfg.use_tcn:
                self.tcn = TCN(V, cfg.tcn_layers, cfg.tcn_kernel, cfg.tcn_residual, cfg.tcn_depthwise, dtype=dt)
            self.fw_proj = Linear(width, D, dtype=dt)
        if cfg.use_mamba:
            self.mamba = MambaBlock(D, cfg.d_state, cfg.ssm_conv, cfg.ssm_gate, cfg.ssm_zoh, dtype=dt)
        if cfg.attention == "st":
            self.attn = STAttention(V, D, cfg.attn_dim, dtype=dt)
        elif cfg.attention == "self":
            self.attn = TokenSelfAttention(D, dtype=dt)
        self.ffn = FFNTD(D, cfg.d_ff or None, dtype=dt)

    def forward_branch(self, h):
        r = h
        if self.cfg.use_fft_laplace:
            r = self.laplace(r)
        if self.cfg.use_tcn:
            r = self.tcn(r)
        return self.fw_proj(r)

    def fuse(self, h):
        out = h
        if self.cfg.use_forward_branch:
            out = out + self.forward_branch(h)
        if self.cfg.use_mamba:
            out = out + backward_branch(h, self.mamba)
        return out

    def forward(self, h):
        h = self.fuse(h)
        if self.cfg.attention != "none":
            h = self.attn(h)
        return self.ffn(h)


class Forecaster(Module):
    """Maps lookback windows ``[B, L, V]`` to forecasts ``[B, P, V]``.

    Parameters are initialized from ``cfg.seed`` with one random stream per
    named parameter.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dt = cfg.dtype
        self.embed = Linear(cfg.lookback, cfg.d_model, dtype=dt)
        self.layers = [EncoderLayer(cfg) for _ in range(cfg.e_layers)]
        self.proj = Linear(cfg.d_model, cfg.horizon, dtype=dt)
        self.initialize(cfg.seed)

    def check_input(self, x):
        cfg = self.cfg
        shape = tuple(np.shape(x.data if isinstance(x, Tensor) else x))
        if len(shape) != 3 or shape[1] != cfg.lookback or shape[2] != cfg.n_vars:
            raise ConfigError(f"forecast input must be [B, {cfg.lookback}, {cfg.n_vars}] "
                              f"(lookback {cfg.lookback}, {cfg.n_vars} variates), got {list(shape)}")

    def tokens(self, x_norm: np.ndarray, marks=None) -> Tensor:
        tok = np.swapaxes(x_norm, 1, 2)
        if self.cfg.time_features:
            if marks is None:
                raise ConfigError("time_features is on but no calendar marks were given")
            tok = np.concatenate([tok, np.swapaxes(np.asarray(marks), 1, 2)], axis=1)
        return Tensor(tok.astype(self.cfg.dtype))

    def encode(self, h: Tensor) -> Tensor:
        for layer in self.layers:
            h = layer(h)
        return h

    def forward(self, x, marks=None) -> Tensor:
        self.check_input(x)
        x_norm, stats = normalize(x, self.cfg.norm_eps)
        h = self.encode(self.embed(self.tokens(x_norm, marks)))
        y = self.proj(h)[:, : self.cfg.n_vars, :]
        return denormalize(T.transpose(y, (0, 2, 1)), stats)

    def forecast(self, x, marks=None) -> np.ndarray:
        with T.no_grad():
            return self.forward(x, marks).data

    # persistence ---------------------------------------------------------

    def save(self, path, extra=None):
        tensors = dict(self.state_dict())
        for k, v in (extra or {}).items():
            tensors[f"extra.{k}"] = v
        meta = {f"config.{f.name}": _fmt(getattr(self.cfg, f.name)) for f in fields(self.cfg)}
        checkpoint.save(path, tensors, meta)

    @classmethod
    def load(cls, path):
        """Return ``(model, extras)`` from a checkpoint file."""
        tensors, meta = checkpoint.load(path)
        pairs = [(k[len("config."):], v) for k, v in meta.items() if k.startswith("config.")]
        cfg = ModelConfig.from_pairs(pairs)
        model = cls(cfg)
        extras = {k[len("extra."):]: v for k, v in tensors.items() if k.startswith("extra.")}
        model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("extra.")})
        return model, extras


def parameter_groups(model: Module) -> dict:
    """Parameter count per top-level component kind (laplace, tcn, mamba, ...)."""
    groups: dict[str, int] = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        key = parts[2] if parts[0] == "layers" else parts[0]
        groups[key] = groups.get(key, 0) + p.size
    return groups
