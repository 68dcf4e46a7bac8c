"""Run configuration: flat ``section.key = value`` files with typed defaults."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields

from .evaluation import WalkForwardConfig
from .explain import AttributionConfig
from .model import ModelConfig
from .training import TrainConfig

OUT_ENV = "REGIMEKAN_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    path: str = ""
    delimiter: str = ","
    k: int = 8
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    test_fraction: float = 0.15


@dataclass
class ModelSection:
    n_regimes: int = 3
    hidden_dim: int = 64
    tau: float = 1.0
    d: int = 8
    n_basis: int = 8
    theta: float = 0.01
    margin: float = 1.0


@dataclass
class TrainSection:
    lr: float = 0.001
    weight_decay: float = 1e-5
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 15
    scheduler_factor: float = 0.7
    scheduler_patience: int = 7
    grad_clip_norm: float = 0.5
    huber_delta: float = 1.0
    lambda_contrastive: float = 0.01
    lambda_sparsity: float = 0.001
    lambda_orth: float = 0.01
    lambda_balance: float = 0.05
    warmup_balance: bool = True
    tune_sparsity: bool = False


@dataclass
class BacktestSection:
    train_len: int = 252
    test_len: int = 63
    n_windows: int = 0
    n_runs: int = 5
    rf: float = 0.0
    max_epochs: int = 100


@dataclass
class ExplainSection:
    n_samples: int = 100
    gamma: float = 0.9
    T: int = 30
    top_m: int = 3


@dataclass
class SimulateSection:
    kind: str = "markov"
    T: int = 1000
    mu: str = "0.002,0,-0.002"
    sigma: str = "0.005,0.02,0.01"
    persistence: float = 0.95
    gamma: float = 5.0
    c: float = 0.0


@dataclass
class RunConfig:
    seed: int = 0
    out: str = ""
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    backtest: BacktestSection = field(default_factory=BacktestSection)
    explain: ExplainSection = field(default_factory=ExplainSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)

    # -- conversion to module configs ------------------------------------------
    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig(input_dim=input_dim, seed=self.seed, **asdict(self.model))

    def train_config(self, **overrides) -> TrainConfig:
        t = asdict(self.train)
        t.pop("tune_sparsity")
        return TrainConfig(seed=self.seed, **(t | overrides))

    def walk_forward_config(self) -> WalkForwardConfig:
        b = self.backtest
        return WalkForwardConfig(train_len=b.train_len, test_len=b.test_len, n_windows=b.n_windows or None,
                                 n_runs=b.n_runs, val_fraction=self.data.val_fraction, rf=b.rf, seed=self.seed)

    def attribution_config(self) -> AttributionConfig:
        e = self.explain
        return AttributionConfig(n_samples=e.n_samples, gamma=e.gamma, T=e.T, top_m=e.top_m, seed=self.seed)

    def fractions(self) -> tuple[float, float, float]:
        d = self.data
        return (d.train_fraction, d.val_fraction, d.test_fraction)

    def echo(self) -> dict:
        """Effective settings for artifacts; the output directory is left out."""
        d = asdict(self)
        d.pop("out")
        return d


def _coerce(raw: str, current, key: str):
    kind = type(current)
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for '{key}': {raw!r} (expected {kind.__name__})") from None
    return text


def set_value(cfg: RunConfig, key: str, raw: str) -> None:
    parts = key.strip().split(".")
    target = cfg
    for p in parts[:-1]:
        if not hasattr(target, p) or not hasattr(getattr(target, p), "__dataclass_fields__"):
            raise ConfigError(f"unknown config key '{key}'")
        target = getattr(target, p)
    leaf = parts[-1]
    if leaf not in {f.name for f in fields(target)} or hasattr(getattr(target, leaf), "__dataclass_fields__"):
        raise ConfigError(f"unknown config key '{key}'")
    setattr(target, leaf, _coerce(raw, getattr(target, leaf), key))


def parse_text(text: str) -> list[tuple[str, str]]:
    pairs = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path: str | None = None, overrides: list[tuple[str, str]] | None = None) -> RunConfig:
    """Defaults, then the config file, then ``overrides`` (later wins)."""
    cfg = RunConfig()
    if path:
        try:
            with open(path) as fh:
                pairs = parse_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        for k, v in pairs:
            set_value(cfg, k, v)
    for k, v in overrides or []:
        set_value(cfg, k, v)
    if not cfg.out:
        cfg.out = os.environ.get(OUT_ENV, "out")
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = [f"seed = {cfg.seed}"]
    for section, values in cfg.echo().items():
        if isinstance(values, dict):
            lines += [f"{section}.{k} = {v}" for k, v in values.items()]
    return "\n".join(lines) + "\n"
