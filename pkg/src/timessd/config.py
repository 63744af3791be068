"""Flat ``key = value`` run configuration shared by the CLI subcommands.

File syntax: one ``key = value`` per line, ``#`` starts a comment, blank lines
are ignored.  Booleans accept true/false/1/0/yes/no.  Unknown keys are errors.
Command-line overrides (``--set key=value``) are applied after the file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .ssd import MODES
from .trainer import TrainConfig

ABLATIONS = ("none", "no_time", "no_ffn")


@dataclass
class RunConfig:
    # data
    data_dir: str = "data/processed"
    out_dir: str = "runs/default"
    # model
    max_len: int = 50
    d_model: int = 64
    expand: int = 2
    d_state: int = 32
    heads: int = 4
    d_conv: int = 4
    n_layers: int = 2
    dropout: float = 0.2
    chunk: int = 16
    mode: str = "exact-exp"
    ablation: str = "none"
    init_std: float = 0.02
    # training
    lr: float = 0.01
    batch: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    clip: float = 0.0
    eval_batch: int = 256
    mask_seen: bool = False

    def validate(self) -> "RunConfig":
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.train_config()
        self.model_config(1)
        return self

    def model_config(self, n_items: int) -> ModelConfig:
        return ModelConfig(
            n_items=n_items, max_len=self.max_len, d_model=self.d_model, expand=self.expand,
            d_state=self.d_state, heads=self.heads, d_conv=self.d_conv, n_layers=self.n_layers,
            dropout=self.dropout, chunk=self.chunk, mode=self.mode, init_std=self.init_std,
            no_time=self.ablation == "no_time", no_ffn=self.ablation == "no_ffn",
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch=self.batch, betas=(self.beta1, self.beta2), eps=self.eps,
                           epochs=self.epochs, patience=self.patience, seed=self.seed, clip=self.clip,
                           eval_batch=self.eval_batch, mask_seen=self.mask_seen)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind in ("bool", bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_pairs(pairs, source: str = "<overrides>") -> dict:
    out = {}
    for lineno, line in enumerate(pairs, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        values.update(parse_pairs(p.read_text(encoding="utf-8").splitlines(), str(p)))
    values.update(parse_pairs(overrides))
    return RunConfig(**values).validate()
