"""Rule-based greedy controller: run as many compressors as the energy budget
allows whenever photosynthesis is worth supporting."""

from __future__ import annotations

from dataclasses import dataclass

from .env import BioConfig, Observation, photosynthetic_factor
from .plant import CompressorConfig, EssConfig, dispatch, injection_power, pv_power


@dataclass(frozen=True)
class GreedyConfig:
    f_min: float = 0.0  # values above 1 switch the controller off
    reserve: float = 4.0  # kWh kept above E_min; must outlast a night of essential load

    def __post_init__(self):
        if self.f_min < 0:
            raise ValueError("f_min must be non-negative")
        if self.reserve < 0:
            raise ValueError("reserve must be non-negative")


def greedy_policy(
    obs: Observation,
    g: float,
    cfg: GreedyConfig = GreedyConfig(),
    *,
    ess: EssConfig = EssConfig(),
    compressors: CompressorConfig = CompressorConfig(),
    bio: BioConfig = BioConfig(),
    essential_load: float = 0.2,
    dt: float = 1.0,
) -> int:
    """Largest compressor count the current period can afford, or 0 below f_min.

    Ignores tide and crossflow entirely.
    """
    if photosynthetic_factor(obs.I, obs.T, bio) < cfg.f_min:
        return 0
    floor = ess.E_min + cfg.reserve
    for m in range(compressors.M, 0, -1):
        res = dispatch(g, essential_load, injection_power(m, compressors), obs.E, ess, dt)
        if res.feasible and res.E_next >= floor:
            return m
    return 0


class GreedyController:
    """Adapter that drives an ``UpwellingEnv`` with the greedy rule."""

    def __init__(self, env, cfg: GreedyConfig = GreedyConfig()):
        self.env = env
        self.cfg = cfg

    def __call__(self, _features=None) -> int:
        env = self.env
        obs = env.observation
        g = pv_power(obs.I, env.pv, env.config.dt_hours)
        return greedy_policy(obs, g, self.cfg, ess=env.ess, compressors=env.compressors, bio=env.bio,
                             essential_load=env.config.essential_load, dt=env.config.dt_hours)
