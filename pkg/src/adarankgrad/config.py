"""INI experiment configuration.

Every key has a default, so an empty section is valid. Example::

    [experiment]
    kind = train
    seed = 0
    steps = 2000

    [network]
    layer_dims = 32, 32, 32, 8

    [optimizer]
    name = adarankgrad
    alpha = 0.003

The environment variable ``ARGD_SEED`` overrides ``experiment.seed``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import optimizer
from .errors import ConfigError

KINDS = ("train", "dynamics", "ssrf-bench")
OPTIMIZERS = ("adarankgrad", "galore", "adam", "sgd")
SEED_ENV = "ARGD_SEED"


@dataclass(frozen=True)
class NetworkConfig:
    layer_dims: tuple[int, ...] = (32, 32, 32, 8)
    activation: str = "relu"
    loss: str = "mse"
    leaky_slope: float = 0.01


@dataclass(frozen=True)
class DataConfig:
    kind: str = "lowrank_regression"
    n_samples: int = 256
    rank: int = 4
    noise: float = 0.0
    separation: float = 4.0


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adarankgrad"
    hp: optimizer.Hyperparams = field(default_factory=optimizer.Hyperparams)
    galore_rank: int | None = None  # defaults to r_max
    galore_interval: int | None = 200
    baseline_rank: int | None = None  # for memory accounting; defaults to r_max


@dataclass(frozen=True)
class DynamicsConfig:
    n: int = 6
    m: int = 6
    n_terms: int = 2
    b_spectrum: tuple[float, ...] = (1.0, 2.0)
    c_spectrum: tuple[float, ...] | None = None  # None means C = I
    alpha: float = 0.01
    steps: int = 1500
    shared_eigenbasis: bool = True


@dataclass(frozen=True)
class BenchConfig:
    sizes: tuple[tuple[int, int], ...] = ((128, 128), (512, 512))
    ranks: tuple[int, ...] = (4, 8)
    repeats: int = 3
    decay: float = 0.7  # singular values decay as decay**i


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "train"
    seed: int = 0
    steps: int = 2000
    output_dir: str = "argd_out"
    network: NetworkConfig = NetworkConfig()
    data: DataConfig = DataConfig()
    optim: OptimizerConfig = OptimizerConfig()
    dynamics: DynamicsConfig = DynamicsConfig()
    bench: BenchConfig = BenchConfig()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


def _sizes(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in text.replace(" ", "").split(","):
        if item:
            n, m = item.lower().split("x")
            out.append((int(n), int(m)))
    return tuple(out)


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "inf") else int(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _section(parser: configparser.ConfigParser, name: str, cls, parsers: dict):
    if not parser.has_section(name):
        return cls()
    sec = parser[name]
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in sec.items():
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        kwargs[key] = parsers.get(key, str)(raw)
    return cls(**kwargs)


_HP_PARSERS = {
    f.name: {
        "int": int, "float": float, "str": str, "bool": _bool,
        "int | None": _optional_int,
    }[f.type]
    for f in dataclasses.fields(optimizer.Hyperparams)
}


def _optimizer_section(parser: configparser.ConfigParser) -> OptimizerConfig:
    if not parser.has_section("optimizer"):
        return OptimizerConfig()
    sec = dict(parser["optimizer"])
    name = sec.pop("name", "adarankgrad")
    if name not in OPTIMIZERS:
        raise ConfigError(f"[optimizer] name must be one of {OPTIMIZERS}, got {name!r}")
    extra = {}
    for key in ("galore_rank", "galore_interval", "baseline_rank"):
        if key in sec:
            extra[key] = _optional_int(sec.pop(key))
    hp_kwargs = {}
    for key, raw in sec.items():
        if key not in _HP_PARSERS:
            raise ConfigError(f"[optimizer] unknown key {key!r}")
        hp_kwargs[key] = _HP_PARSERS[key](raw)
    return OptimizerConfig(name=name, hp=optimizer.Hyperparams(**hp_kwargs), **extra)


def parse(text: str, env: dict | None = None) -> ExperimentConfig:
    """Parse INI text; raises ``ConfigError`` on any problem."""
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
        exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
        known = {"kind", "seed", "steps", "output_dir"}
        unknown = set(exp) - known
        if unknown:
            raise ConfigError(f"[experiment] unknown keys {sorted(unknown)}")
        for sec in parser.sections():
            if sec not in ("experiment", "network", "data", "optimizer", "dynamics", "bench"):
                raise ConfigError(f"unknown section [{sec}]")
        kind = exp.get("kind", "train")
        if kind not in KINDS:
            raise ConfigError(f"experiment kind must be one of {KINDS}, got {kind!r}")
        seed = int(exp.get("seed", 0))
        if env.get(SEED_ENV):
            seed = int(env[SEED_ENV])
        optim = _optimizer_section(parser)
        optim = dataclasses.replace(optim, hp=dataclasses.replace(optim.hp, seed=seed))
        cfg = ExperimentConfig(
            kind=kind,
            seed=seed,
            steps=int(exp.get("steps", 2000)),
            output_dir=exp.get("output_dir", "argd_out"),
            network=_section(parser, "network", NetworkConfig, {"layer_dims": _ints, "leaky_slope": float}),
            data=_section(parser, "data", DataConfig, {
                "n_samples": int, "rank": int, "noise": float, "separation": float,
            }),
            optim=optim,
            dynamics=_section(parser, "dynamics", DynamicsConfig, {
                "n": int, "m": int, "n_terms": int, "b_spectrum": _floats,
                "c_spectrum": lambda s: _floats(s) or None, "alpha": float, "steps": int,
                "shared_eigenbasis": _bool,
            }),
            bench=_section(parser, "bench", BenchConfig, {
                "sizes": _sizes, "ranks": _ints, "repeats": int, "decay": float,
            }),
        )
    except ConfigError:
        raise
    except (configparser.Error, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.steps < 1:
        raise ConfigError("steps must be positive")
    return cfg


def load(path, env: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse(text, env)
