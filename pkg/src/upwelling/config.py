"""Run configuration (JSON with sections forcing/plume/plant/env/net/train),
presets, and the run manifest."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any

from . import __version__
from .env import BioConfig, EnvConfig, RewardConfig
from .forcing import TideModelConfig, WeatherConfig
from .plant import CompressorConfig, EssConfig, PvConfig
from .plume import PlumeConstants


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ForcingSection:
    source: str = "synthetic"  # "synthetic" or "csv"
    train_csv: str | None = None
    eval_csv: str | None = None
    hours: int = 2880
    train_seeds: tuple[int, ...] = (2016, 2017, 2018)
    eval_seed: int = 2019
    eval_start: int = 0
    tide: TideModelConfig = TideModelConfig()
    weather: WeatherConfig = WeatherConfig()


@dataclass(frozen=True)
class PlumeSection:
    constants: PlumeConstants = PlumeConstants()
    spacing: float = 4.0
    farm_length: float = 120.0
    farm_width: float = 70.0


@dataclass(frozen=True)
class PlantSection:
    ess: EssConfig = EssConfig()
    pv: PvConfig = PvConfig()
    compressors: CompressorConfig = CompressorConfig()


@dataclass(frozen=True)
class EnvSection:
    episode: EnvConfig = EnvConfig()
    bio: BioConfig = BioConfig()
    reward: RewardConfig = RewardConfig()


@dataclass(frozen=True)
class NetSection:
    hidden: tuple[int, ...] = (64, 64)
    n_quantiles: int = 200


@dataclass(frozen=True)
class TrainSection:
    total_steps: int = 1_000_000
    batch: int = 32
    gamma: float = 0.99
    target_sync: int = 10_000
    eps_start: float = 1.0
    eps_end: float = 0.01
    anneal_fraction: float = 0.10
    algorithm: str = "proposed"
    seed: int = 0
    eval_every: int = 10_000
    buffer_capacity: int = 1_000_000
    warmup: int = 1_000
    lr: float = 0.00025
    kappa: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    forcing: ForcingSection = ForcingSection()
    plume: PlumeSection = PlumeSection()
    plant: PlantSection = PlantSection()
    env: EnvSection = EnvSection()
    net: NetSection = NetSection()
    train: TrainSection = TrainSection()

    def to_dict(self) -> dict:
        return _to_jsonable(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "")

    def with_overrides(self, overrides: dict) -> "RunConfig":
        return _build(RunConfig, _deep_merge(self.to_dict(), overrides), "")


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_jsonable(v) for v in obj]
    return obj


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if _has_defaults(cls) else None
        where = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, where)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _has_defaults(cls) -> bool:
    try:
        cls()
        return True
    except TypeError:
        return False


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return RunConfig.from_dict(data)


def desk_preset(seed: int = 0, algorithm: str = "proposed") -> RunConfig:
    """Laptop-scale run: 288-h episodes, 100k steps, narrower quantile head,
    target sync and evaluation windows scaled with the step budget."""
    return RunConfig().with_overrides(
        {
            "forcing": {"hours": 24 * 120},
            "env": {"episode": {"episode_hours": 288}},
            "net": {"n_quantiles": 32},
            "train": {
                "total_steps": 100_000,
                "target_sync": 1_000,
                "eval_every": 5_000,
                "buffer_capacity": 100_000,
                "seed": seed,
                "algorithm": algorithm,
            },
        }
    )


# ---------------------------------------------------------------------- manifest


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(out_dir, cfg: RunConfig, *, seed: int, beta: float, data_checksums: dict, extra: dict | None = None,
                   name: str = "manifest.json") -> dict:
    manifest = {
        "config": cfg.to_dict(),
        "seed": seed,
        "beta": beta,
        "code_version": __version__,
        "data_checksums": data_checksums,
        **(extra or {}),
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
