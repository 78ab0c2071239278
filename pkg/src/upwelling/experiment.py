"""Wiring from a RunConfig to forcing, environments, training runs and
held-out evaluations."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, replace

import numpy as np

from . import qnet
from .agent import Agent, TrainConfig, TrainingLog, layout_for, train
from .baseline import GreedyConfig, GreedyController
from .config import RunConfig, write_manifest
from .env import EpisodeMetrics, UpwellingEnv
from .forcing import ForcingSeries, NormStats, fit_normalizer, read_forcing, serialize_forcing_csv, synthetic_forcing
from .metrics import evaluate, metrics_document, write_metrics
from .plume import NozzleLayout


@dataclass(frozen=True)
class ForcingBundle:
    train: tuple[ForcingSeries, ...]
    eval: ForcingSeries
    checksums: dict


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def build_forcing(cfg: RunConfig, eval_csv: str | os.PathLike | None = None) -> ForcingBundle:
    """Training segments and the held-out evaluation series.

    ``eval_csv`` overrides whatever the config names for evaluation.
    """
    fc = cfg.forcing
    checksums: dict = {}
    if fc.source == "synthetic":
        train_parts = []
        for s in fc.train_seeds:
            series = synthetic_forcing(fc.hours, seed=s, tide=fc.tide, weather=fc.weather)
            checksums[f"synthetic:{s}"] = _digest(serialize_forcing_csv(series))
            train_parts.append(series)
    elif fc.source == "csv":
        if not fc.train_csv:
            raise ValueError("forcing.train_csv is required when forcing.source is 'csv'")
        paths = [fc.train_csv] if isinstance(fc.train_csv, str) else list(fc.train_csv)
        train_parts = []
        for p in paths:
            train_parts.append(read_forcing(p))
            checksums[os.path.basename(p)] = _file_digest(p)
    else:
        raise ValueError(f"unknown forcing source {fc.source!r}")

    eval_path = eval_csv or fc.eval_csv
    if eval_path:
        eval_series = read_forcing(eval_path)
        checksums["eval:" + os.path.basename(str(eval_path))] = _file_digest(eval_path)
    else:
        eval_series = synthetic_forcing(fc.hours, seed=fc.eval_seed, tide=fc.tide, weather=fc.weather)
        checksums[f"eval:synthetic:{fc.eval_seed}"] = _digest(serialize_forcing_csv(eval_series))
    return ForcingBundle(tuple(train_parts), eval_series, checksums)


def fit_stats(cfg: RunConfig, bundle: ForcingBundle) -> NormStats:
    ess = cfg.plant.ess
    return fit_normalizer(list(bundle.train), (ess.E_min, ess.E_max), cfg.env.episode.episode_hours)


def make_env(cfg: RunConfig, forcing, stats: NormStats | None = None, seed: int = 0) -> UpwellingEnv:
    p = cfg.plume
    layout = NozzleLayout(n_nozzles=cfg.plant.compressors.M, spacing=p.spacing, farm_length=p.farm_length,
                          farm_width=p.farm_width)
    return UpwellingEnv(
        forcing,
        ess=cfg.plant.ess,
        pv=cfg.plant.pv,
        compressors=cfg.plant.compressors,
        plume=p.constants,
        layout=layout,
        bio=cfg.env.bio,
        rewards=cfg.env.reward,
        config=cfg.env.episode,
        stats=stats,
        seed=seed,
    )


def train_config(cfg: RunConfig, seed: int | None = None) -> TrainConfig:
    t = cfg.train
    tc = TrainConfig(**{f: getattr(t, f) for f in TrainConfig.__dataclass_fields__})
    return tc if seed is None else replace(tc, seed=seed)


@dataclass
class TrainingRun:
    agent: Agent
    log: TrainingLog
    stats: NormStats
    bundle: ForcingBundle
    config: RunConfig
    beta: float


def run_training(cfg: RunConfig, seed: int | None = None, out_dir=None, callback=None) -> TrainingRun:
    """Train one agent. With ``out_dir`` the log, checkpoints and manifest are
    written there."""
    tc = train_config(cfg, seed)
    cfg = cfg.with_overrides({"train": {"seed": tc.seed}})
    bundle = build_forcing(cfg)
    stats = fit_stats(cfg, bundle)
    probe = make_env(cfg, list(bundle.train), stats)
    layout = layout_for(tc.algorithm, probe.n_actions, cfg.net.n_quantiles, cfg.net.hidden, probe.obs_dim)

    def factory(rng: np.random.Generator) -> UpwellingEnv:
        return make_env(cfg, list(bundle.train), stats, seed=int(rng.integers(2**63)))

    extra = {"norm": stats.to_dict(), "config": cfg.to_dict(), "beta": probe.beta}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    agent, log = train(factory, tc, layout, out_dir=out_dir, checkpoint_extra=extra, callback=callback)
    if out_dir is not None:
        with open(os.path.join(out_dir, "training_log.csv"), "w", encoding="utf-8") as fh:
            fh.write(log.to_csv())
        write_manifest(out_dir, cfg, seed=tc.seed, beta=probe.beta, data_checksums=bundle.checksums,
                       extra={"command": "train", "norm": stats.to_dict()})
    return TrainingRun(agent, log, stats, bundle, cfg, probe.beta)


def agent_policy(params, layout) -> callable:
    """Deterministic greedy policy over normalized features."""
    def policy(features):
        theta = qnet.forward(params, np.asarray(features, float)[None, :], layout)
        return int(np.argmax(qnet.q_values(theta)[0]))
    return policy


def evaluate_agent(cfg: RunConfig, params, layout, stats: NormStats, series: ForcingSeries,
                   start: int | None = None, name: str = "agent") -> tuple[EpisodeMetrics, UpwellingEnv, dict]:
    env = make_env(cfg, series, stats)
    start = cfg.forcing.eval_start if start is None else start
    metrics = evaluate(agent_policy(params, layout), env, start=start)
    return metrics, env, metrics_document(name, metrics, env)


def evaluate_greedy(cfg: RunConfig, series: ForcingSeries, f_min: float = 0.0, start: int | None = None,
                    name: str | None = None) -> tuple[EpisodeMetrics, UpwellingEnv, dict]:
    env = make_env(cfg, series)
    start = cfg.forcing.eval_start if start is None else start
    metrics = evaluate(GreedyController(env, GreedyConfig(f_min=f_min)), env, start=start)
    return metrics, env, metrics_document(name or f"greedy_fmin_{f_min:g}", metrics, env)


def load_trained(path) -> tuple[dict, object, NormStats, RunConfig]:
    """Parameters, layout, normalizer and config stored with a checkpoint."""
    params, layout, _, extra = qnet.load_checkpoint(path)
    if "norm" not in extra or "config" not in extra:
        raise ValueError(f"{path}: checkpoint lacks normalizer or config")
    return params, layout, NormStats.from_dict(extra["norm"]), RunConfig.from_dict(extra["config"])


def save_evaluation(out_path, doc: dict, env: UpwellingEnv, cfg: RunConfig, checksums: dict, extra=None) -> None:
    """Metrics JSON plus ``<stem>_trajectory.csv`` and ``<stem>.manifest.json`` beside it."""
    out_dir = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(out_dir, exist_ok=True)
    write_metrics(out_path, doc)
    stem = os.path.splitext(out_path)[0]
    with open(stem + "_trajectory.csv", "w", encoding="utf-8") as fh:
        fh.write(env.trajectory_csv())
    write_manifest(out_dir, cfg, seed=cfg.train.seed, beta=env.beta, data_checksums=checksums, extra=extra,
                   name=os.path.basename(stem) + ".manifest.json")
