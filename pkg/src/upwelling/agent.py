"""Replay memory, epsilon-greedy acting, Bellman targets and the training loop
for the dueling QR-DQN agent and its DQN/DDQN/QR-DQN ablations."""

from __future__ import annotations

import copy
import csv
import io
import math
import os
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import qnet
from .qnet import NetworkLayout

ALGORITHMS = ("proposed", "qrdqn", "ddqn", "dqn")
LOG_COLUMNS = ("step", "episode", "window_mean_reward", "window_safe_hours", "loss", "epsilon")


class NumericError(FloatingPointError):
    """Training produced a non-finite loss."""


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible generator for a named consumer of randomness."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class TrainConfig:
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

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if self.batch > self.buffer_capacity:
            raise ValueError("batch cannot exceed buffer capacity")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.total_steps < 0 or self.target_sync < 1 or self.eval_every < 1:
            raise ValueError("step counts must be positive")


def layout_for(algorithm: str, n_actions: int, n_quantiles: int = 200, hidden=(64, 64), input_dim: int = 6) -> NetworkLayout:
    """Network shape used by each algorithm variant."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return NetworkLayout(
        input_dim=input_dim,
        hidden=tuple(hidden),
        n_actions=n_actions,
        n_quantiles=n_quantiles if algorithm in ("proposed", "qrdqn") else 1,
        dueling=algorithm in ("proposed", "ddqn"),
    )


def epsilon_at(step: int, cfg: TrainConfig) -> float:
    horizon = cfg.anneal_fraction * cfg.total_steps
    if step >= horizon:
        return cfg.eps_end
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * step / horizon


def act(params, layout: NetworkLayout, s, eps: float, rng: np.random.Generator, mask=None) -> int:
    """Epsilon-greedy over mean quantiles; ties go to the lowest action."""
    allowed = np.arange(layout.n_actions) if mask is None else np.flatnonzero(mask)
    if rng.random() < eps:
        return int(allowed[rng.integers(0, allowed.size)])
    q = qnet.q_values(qnet.forward(params, s, layout))
    if mask is not None:
        q = np.where(mask, q, -np.inf)
    return int(np.argmax(q))


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions. Storage grows on demand."""

    def __init__(self, capacity: int, obs_dim: int = 6):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.size = 0
        self.cursor = 0
        self._alloc(min(capacity, 4096))

    def _alloc(self, n: int):
        old = getattr(self, "_s", None)
        s, s2 = np.zeros((n, self.obs_dim)), np.zeros((n, self.obs_dim))
        a, r, d = np.zeros(n, dtype=np.int64), np.zeros(n), np.zeros(n, dtype=bool)
        if old is not None:
            k = self.size
            s[:k], s2[:k], a[:k], r[:k], d[:k] = self._s[:k], self._s2[:k], self._a[:k], self._r[:k], self._d[:k]
        self._s, self._s2, self._a, self._r, self._d = s, s2, a, r, d

    def __len__(self) -> int:
        return self.size

    def push(self, s, a: int, r: float, s2, done: bool) -> None:
        if self.cursor >= self._s.shape[0]:
            self._alloc(min(self.capacity, 2 * self._s.shape[0]))
        i = self.cursor
        self._s[i], self._a[i], self._r[i], self._s2[i], self._d[i] = s, a, r, s2, done
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < batch:
            raise RuntimeError(f"cannot sample {batch} from {self.size} stored transitions")
        return rng.integers(0, self.size, size=batch)

    def sample(self, batch: int, rng: np.random.Generator) -> Batch:
        idx = self.indices(batch, rng)
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx])

    def contents(self) -> list[tuple]:
        """Stored transitions from oldest to newest."""
        start = self.cursor if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [(self._s[i].copy(), int(self._a[i]), float(self._r[i]), self._s2[i].copy(), bool(self._d[i]))
                for i in order]


def compute_targets(target_params, layout: NetworkLayout, batch: Batch, gamma: float) -> np.ndarray:
    """Distributional Bellman targets (B, N); constants for the optimizer."""
    theta_next = qnet.forward(target_params, batch.s2, layout)
    a_star = np.argmax(qnet.q_values(theta_next), axis=1)
    chosen = theta_next[np.arange(len(a_star)), a_star]
    live = (~batch.done).astype(float)[:, None]
    return batch.r[:, None] + gamma * live * chosen


def dqn_target(target_params, layout: NetworkLayout, batch: Batch, gamma: float) -> np.ndarray:
    q_next = qnet.q_values(qnet.forward(target_params, batch.s2, layout))
    return batch.r + gamma * (~batch.done) * q_next.max(axis=1)


def ddqn_target(online_params, target_params, layout: NetworkLayout, batch: Batch, gamma: float) -> np.ndarray:
    """Online net picks the next action, target net evaluates it."""
    a_star = np.argmax(qnet.q_values(qnet.forward(online_params, batch.s2, layout)), axis=1)
    q_next = qnet.q_values(qnet.forward(target_params, batch.s2, layout))
    return batch.r + gamma * (~batch.done) * q_next[np.arange(len(a_star)), a_star]


class Agent:
    def __init__(self, layout: NetworkLayout, cfg: TrainConfig, params=None):
        if cfg.algorithm in ("ddqn", "dqn") and layout.n_quantiles != 1:
            raise ValueError("scalar variants need a single-output head")
        self.layout = layout
        self.cfg = cfg
        self.params = params if params is not None else qnet.init_network(layout, rng_stream(cfg.seed, "init"))
        self.target = copy.deepcopy(self.params)
        self.optimizer = qnet.Adam(lr=cfg.lr)
        self.tau = qnet.tau_midpoints(layout.n_quantiles)

    def sync_target(self) -> None:
        self.target = {k: v.copy() for k, v in self.params.items()}

    def greedy(self, s, mask=None) -> int:
        return act(self.params, self.layout, s, 0.0, np.random.default_rng(0), mask)

    def targets(self, batch: Batch) -> np.ndarray:
        alg = self.cfg.algorithm
        if alg == "dqn":
            return dqn_target(self.target, self.layout, batch, self.cfg.gamma)[:, None]
        if alg == "ddqn":
            return ddqn_target(self.params, self.target, self.layout, batch, self.cfg.gamma)[:, None]
        return compute_targets(self.target, self.layout, batch, self.cfg.gamma)

    def loss_and_grads(self, batch: Batch):
        tgt = self.targets(batch)
        theta, acts = qnet.forward(self.params, batch.s, self.layout, cache=True)
        rows = np.arange(len(batch.a))
        taken = theta[rows, batch.a]
        if self.cfg.algorithm in ("ddqn", "dqn"):
            loss, g = qnet.huber_loss(taken[:, 0], tgt[:, 0], self.cfg.kappa)
            g = g[:, None]
        else:
            loss, g = qnet.quantile_huber_loss(taken, tgt, self.tau, self.cfg.kappa)
        g_theta = np.zeros_like(theta)
        g_theta[rows, batch.a] = g
        return loss, qnet.backward(self.params, acts, g_theta, self.layout)

    def train_step(self, batch: Batch) -> float:
        loss, grads = self.loss_and_grads(batch)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite loss {loss} at optimizer step {self.optimizer.step_count}")
        self.optimizer.step(self.params, grads)
        return loss


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=list)
    episode_ends: list[int] = field(default_factory=list)
    episode_rewards: list[float] = field(default_factory=list)
    episode_safe_hours: list[int] = field(default_factory=list)
    sync_steps: list[int] = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=LOG_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return out.getvalue()


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else float("nan")


def train(
    env_factory: Callable[[np.random.Generator], object],
    cfg: TrainConfig,
    layout: NetworkLayout,
    *,
    out_dir: str | os.PathLike | None = None,
    checkpoint_extra: dict | None = None,
    callback: Callable[[int, "Agent"], None] | None = None,
) -> tuple[Agent, TrainingLog]:
    """Run the training loop.

    ``env_factory`` receives the environment's random stream and returns a
    gym-style env with ``reset()``, ``step(a)``, ``n_actions`` and ``obs_dim``.
    An episode ends when the env reports ``done``; ``info['unsafe']`` marks an
    unsafe termination, which stops the safe-hours count.
    """
    env = env_factory(rng_stream(cfg.seed, "env"))
    explore = rng_stream(cfg.seed, "exploration")
    replay_rng = rng_stream(cfg.seed, "replay")
    agent = Agent(layout, cfg)
    buffer = ReplayBuffer(cfg.buffer_capacity, env.obs_dim)
    warmup = max(cfg.batch, cfg.warmup)
    log = TrainingLog()
    masking = bool(getattr(getattr(env, "config", None), "action_masking", False))

    def checkpoint(step: int):
        if out_dir is not None:
            qnet.save_checkpoint(os.path.join(out_dir, f"checkpoint_{step:08d}.json"), agent.params, layout, step,
                                 checkpoint_extra)

    checkpoint(0)
    win_rewards: list[float] = []
    win_safe: list[int] = []
    win_loss: list[float] = []
    episode = 0
    s = None
    ep_reward, ep_steps, ep_safe = 0.0, 0, 0
    for k in range(cfg.total_steps):
        if s is None:
            s = env.reset()
            episode += 1
            ep_reward, ep_steps, ep_safe = 0.0, 0, 0
        eps = epsilon_at(k, cfg)
        log.epsilons.append(eps)
        mask = env.feasible_actions() if masking else None
        a = act(agent.params, layout, s, eps, explore, mask)
        s2, r, done, info = env.step(a)
        buffer.push(s, a, r, s2, done)
        ep_reward += r
        ep_steps += 1
        if not info.get("unsafe", False):
            ep_safe += 1
        s = None if done else s2

        if buffer.size >= warmup:
            loss = agent.train_step(buffer.sample(cfg.batch, replay_rng))
            log.losses.append(loss)
            win_loss.append(loss)
        if (k + 1) % cfg.target_sync == 0:
            agent.sync_target()
            log.sync_steps.append(k + 1)
        if done:
            log.episode_ends.append(k + 1)
            log.episode_rewards.append(ep_reward)
            log.episode_safe_hours.append(ep_safe)
            win_rewards.append(ep_reward)
            win_safe.append(ep_safe)
        if (k + 1) % cfg.eval_every == 0:
            log.rows.append(
                {
                    "step": k + 1,
                    "episode": episode,
                    "window_mean_reward": _mean(win_rewards),
                    "window_safe_hours": _mean(win_safe),
                    "loss": _mean(win_loss),
                    "epsilon": eps,
                }
            )
            win_rewards, win_safe, win_loss = [], [], []
            checkpoint(k + 1)
            if callback is not None:
                callback(k + 1, agent)
    if cfg.total_steps % cfg.eval_every:
        checkpoint(cfg.total_steps)
    return agent, log
