"""Training and run configuration as flat ``key = value`` text."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .encoder import ConfigError

ABLATION_FLAGS = ("no_expander", "no_local", "no_stick_prior", "no_kl_memberships", "no_kl_strengths")

# tuning grid; enforced only with strict_grid = true
GRID = {
    "lr": (1e-3, 5e-3),
    "weight_decay": (0.0, 1e-5, 1e-4),
    "d_exp": (6, 8, 10, 12),
    "layers": (3, 4, 5, 6),
    "heads": (4,),
    "hidden": (128, 256),
    "tau": (0.8, 1.0, 1.2),
    "tau_prior": (0.5,),
    "prior_a": (10.0,),
    "prior_b": (0.1,),
    "anneal_end": (60, 80),
    "epochs": (200,),
    "clip_norm": (5.0,),
}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-3
    dropout: float = 0.1
    weight_decay: float = 0.0
    d_exp: int = 8
    layers: int = 3
    heads: int = 4
    hidden: int = 128
    k: int = 10
    tau: float = 1.0
    tau_prior: float = 0.5
    prior_a: float = 10.0
    prior_b: float = 0.1
    anneal_end: int = 60
    epochs: int = 200
    clip_norm: float = 5.0
    neg_per_pos: int = 1
    batch_size: int = 0
    valid_negatives: int = 100
    taylor_terms: int = 10
    seed: int = 0
    no_expander: bool = False
    no_local: bool = False
    no_stick_prior: bool = False
    no_kl_memberships: bool = False
    no_kl_strengths: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def ablation(self) -> str:
        if self.no_expander and self.no_local:
            raise ConfigError("no_expander and no_local together leave only self-attention")
        return "no_expander" if self.no_expander else "no_local" if self.no_local else "full"

    def validate(self, strict_grid: bool = False) -> None:
        positive = ("lr", "d_exp", "layers", "heads", "hidden", "k", "tau", "tau_prior",
                    "prior_a", "prior_b", "anneal_end", "epochs", "clip_norm", "neg_per_pos",
                    "valid_negatives", "taylor_terms")
        for name in positive:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive, got {value!r}")
        if not 0.0 <= self.dropout <= 0.3:
            raise ConfigError(f"dropout must lie in [0, 0.3], got {self.dropout!r}")
        if self.weight_decay < 0 or self.batch_size < 0:
            raise ConfigError("weight_decay and batch_size must be non-negative")
        if self.d_exp % 2:
            raise ConfigError(f"d_exp must be even, got {self.d_exp}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if self.no_expander and self.no_local:
            raise ConfigError("no_expander and no_local cannot both be set")
        if strict_grid:
            for name, allowed in GRID.items():
                if getattr(self, name) not in allowed:
                    raise ConfigError(f"{name}={getattr(self, name)!r} outside grid {allowed}")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    edges: str = ""
    features: str = ""
    split_dir: str = ""
    hidden_pairs: str = ""
    checkpoint: str = ""
    split_train: float = 0.85
    split_valid: float = 0.05
    split_test: float = 0.10
    protocol: str = "uniform"
    n_neg_eval: int = 500
    heuristic: str = "RA"
    deterministic: bool = False
    strict_grid: bool = False
    syn_nodes: int = 100
    syn_communities: int = 10
    syn_mode: str = "inner_product"
    syn_sampling: str = "threshold"
    syn_bias: float = math.nan
    syn_hidden_frac: float = 0.15
    dims: int = 2
    exp_nodes: int = 1024
    exp_seeds: int = 100
    grad_step: float = 1e-5
    grad_threshold: float = 1e-5

    def __post_init__(self):
        if self.protocol not in ("uniform", "heart-approx"):
            raise ConfigError(f"protocol must be 'uniform' or 'heart-approx', got {self.protocol!r}")
        if self.heuristic not in ("CN", "AA", "RA"):
            raise ConfigError(f"heuristic must be CN, AA or RA, got {self.heuristic!r}")
        if self.syn_mode not in ("inner_product", "full_osbm"):
            raise ConfigError(f"syn_mode must be inner_product or full_osbm, got {self.syn_mode!r}")
        if self.syn_sampling not in ("bernoulli", "threshold"):
            raise ConfigError(f"syn_sampling must be bernoulli or threshold, got {self.syn_sampling!r}")
        for name in ("n_neg_eval", "syn_nodes", "syn_communities", "exp_nodes", "exp_seeds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 <= self.syn_hidden_frac < 1:
            raise ConfigError(f"syn_hidden_frac must lie in [0, 1), got {self.syn_hidden_frac}")
        if self.dims < 0:
            raise ConfigError(f"dims must be >= 0, got {self.dims}")
        if not (self.grad_step > 0 and self.grad_threshold > 0):
            raise ConfigError("grad_step and grad_threshold must be positive")
        self.train.validate(self.strict_grid)

    def with_updates(self, **values) -> "RunConfig":
        return from_mapping({**to_mapping(self), **{k: _fmt(v) for k, v in values.items()}})


def _train_fields():
    return {f.name: f for f in fields(TrainConfig)}


def _run_fields():
    return {f.name: f for f in fields(RunConfig) if f.name != "train"}


def all_keys() -> list[str]:
    return list(_train_fields()) + list(_run_fields())


def _coerce(key: str, kind, raw: str):
    text = raw.strip()
    kind = {"int": int, "float": float, "bool": bool, "str": str}.get(kind, kind)
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            value = float(text) if any(c in text for c in ".eE") else int(text)
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValueError(text)
                value = int(value)
            return value
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def from_mapping(values: dict[str, str]) -> RunConfig:
    tf, rf = _train_fields(), _run_fields()
    train_kw, run_kw = {}, {}
    for key, raw in values.items():
        if key in tf:
            train_kw[key] = _coerce(key, tf[key].type, raw)
        elif key in rf:
            run_kw[key] = _coerce(key, rf[key].type, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return RunConfig(train=TrainConfig(**train_kw), **run_kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def to_mapping(config: RunConfig) -> dict[str, str]:
    out = {name: _fmt(getattr(config.train, name)) for name in _train_fields()}
    out.update({name: _fmt(getattr(config, name)) for name in _run_fields()})
    return out


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        values[key] = value
    return values


def parse_config(path=None, overrides=()) -> RunConfig:
    """File values, then ``key=value`` overrides, then defaults for the rest."""
    values: dict[str, str] = {}
    if path:
        values.update(parse_lines(Path(path).read_text(encoding="utf-8"), str(path)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        values[key] = value
    return from_mapping(values)


def snapshot(config: RunConfig) -> str:
    """Every key with its effective value; parsing it back gives an equal config."""
    return "".join(f"{k} = {v}\n" for k, v in to_mapping(config).items())


def replace_train(config: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(config, train=dataclasses.replace(config.train, **changes))
