"""The energy-management MDP: state, actions, photosynthesis, reward, and a
gym-style environment that ties the plant and plume models together."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .forcing import ForcingError, ForcingSeries, NormStats, normalize
from .plant import CompressorConfig, EssConfig, PvConfig, dispatch, injection_airflow, injection_power, pv_power
from .plume import NozzleLayout, PlumeConstants, PlumeStep, entrainment_coefficient, plume_flow_rate, transport_volume, virtual_displacement

TRAJECTORY_COLUMNS = ("step", "E", "I", "T", "Z", "u", "action", "q_kw", "V_m3", "f2", "reward", "wastage_kwh", "done")


@dataclass(frozen=True)
class Observation:
    E: float
    T: float
    I: float
    Z: float
    u: float
    t: float

    def to_array(self) -> np.ndarray:
        return np.array([self.E, self.T, self.I, self.Z, self.u, self.t])


@dataclass(frozen=True)
class BioConfig:
    I_s: float = 180.0
    T_opt: float = 10.0
    T_min: float = 0.0
    T_max: float = 20.0

    def __post_init__(self):
        if not self.T_min < self.T_opt < self.T_max or not self.I_s > 0:
            raise ValueError("need T_min < T_opt < T_max and I_s > 0")


@dataclass(frozen=True)
class RewardConfig:
    beta: Optional[float] = None  # None: calibrate from the plant
    idle_waste_penalty: float = -0.1
    terminal_penalty: float = 0.0


@dataclass(frozen=True)
class EnvConfig:
    episode_hours: int = 2880
    E_init: Optional[float] = None  # None: half of E_max
    essential_load: float = 0.2  # kW
    dt_hours: float = 1.0
    action_masking: bool = False


@dataclass
class EpisodeMetrics:
    total_air_m3: float = 0.0
    total_transport_m3: float = 0.0
    mean_photosynthetic_factor: float = 0.0
    total_wastage_kwh: float = 0.0
    total_efficiency: float = 0.0
    safe_hours: int = 0
    total_reward: float = 0.0
    active_steps: int = 0
    _f2_active_sum: float = field(default=0.0, repr=False)

    def record(self, action: int, air: float, volume: float, f2: float, wastage: float, reward: float, safe: bool):
        self.total_air_m3 += air
        self.total_transport_m3 += volume
        self.total_wastage_kwh += wastage
        self.total_efficiency += f2 * volume
        self.total_reward += reward
        if action > 0:
            self.active_steps += 1
            self._f2_active_sum += f2
            self.mean_photosynthetic_factor = self._f2_active_sum / self.active_steps
        if safe:
            self.safe_hours += 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_f2_active_sum")
        return d


def photosynthetic_factor(I: float, T: float, cfg: BioConfig = BioConfig()) -> float:
    """Light and temperature limitation of kelp photosynthesis, in [0, 1]."""
    if I < 0:
        raise ValueError("irradiance must be non-negative")
    T_x = cfg.T_min if T <= cfg.T_opt else cfg.T_max
    x = I / cfg.I_s
    return x * math.exp(1.0 - x - 2.3 * ((T - cfg.T_opt) / (T_x - cfg.T_opt)) ** 2)


def action_space(M: int) -> range:
    if M < 1:
        raise ValueError("need at least one compressor")
    return range(M + 1)


def select_active_nozzles(m: int, sign: int, layout: NozzleLayout) -> list[int]:
    """The ``m`` most upstream nozzles for a current flowing towards ``sign``."""
    if not 0 <= m <= layout.n_nozzles:
        raise ValueError(f"cannot activate {m} of {layout.n_nozzles} nozzles")
    order = range(layout.n_nozzles) if sign >= 0 else range(layout.n_nozzles - 1, -1, -1)
    return sorted(list(order)[:m])


def reward(action: int, volume: float, f2: float, cfg: RewardConfig, beta: float) -> float:
    if volume < 0:
        raise ValueError("transport volume must be non-negative")
    if action > 0 and volume == 0:
        return cfg.idle_waste_penalty
    return beta * f2 * volume


def calibrate_beta(k: PlumeConstants, comp: CompressorConfig, dt_hours: float = 1.0) -> float:
    """Scale that maps a full-power, fully retained period to a reward of 1."""
    Q = comp.Q0 / 3600.0
    qw = plume_flow_rate(Q, virtual_displacement(k.d0, entrainment_coefficient(Q, k)), k)
    return 1.0 / (comp.M * qw * 3600.0 * dt_hours)


@dataclass
class StepOutcome:
    observation: Observation
    reward: float
    done: bool
    unsafe: bool
    action: int
    q_kw: float
    air_m3: float
    volume: float
    f1: np.ndarray
    f2: float
    dispatch: object
    wastage: float


class UpwellingEnv:
    """Gym-style environment over a forcing series.

    ``reset`` and ``step`` return normalized feature vectors when ``stats`` is
    given, raw feature vectors otherwise; the raw state is always available as
    ``observation``.
    """

    obs_dim = 6

    def __init__(
        self,
        forcing: ForcingSeries | Sequence[ForcingSeries],
        *,
        ess: EssConfig = EssConfig(),
        pv: PvConfig = PvConfig(),
        compressors: CompressorConfig = CompressorConfig(),
        plume: PlumeConstants = PlumeConstants(),
        layout: NozzleLayout | None = None,
        bio: BioConfig = BioConfig(),
        rewards: RewardConfig = RewardConfig(),
        config: EnvConfig = EnvConfig(),
        stats: NormStats | None = None,
        seed: int = 0,
    ):
        self.segments = [forcing] if isinstance(forcing, ForcingSeries) else list(forcing)
        if not self.segments:
            raise ForcingError("no forcing segments")
        for seg in self.segments:
            if len(seg) < config.episode_hours:
                raise ForcingError(f"forcing has {len(seg)} records, episode needs {config.episode_hours}")
        self.forcing = self.segments[0]
        self.ess, self.pv, self.compressors = ess, pv, compressors
        self.plume = plume
        self.layout = layout or NozzleLayout(n_nozzles=compressors.M)
        if self.layout.n_nozzles != compressors.M:
            raise ValueError("one nozzle per compressor is required")
        self.bio, self.rewards, self.config = bio, rewards, config
        self.stats = stats
        self.beta = rewards.beta if rewards.beta is not None else calibrate_beta(plume, compressors, config.dt_hours)
        self.E_init = config.E_init if config.E_init is not None else ess.E_max / 2
        self.n_actions = compressors.M + 1
        self._seed = seed
        self._rng = np.random.default_rng(seed)
        self._started = False
        self.done = True

    # -- lifecycle -----------------------------------------------------------

    def reset(self, start: int | None = None, seed: int | None = None, segment: int | None = None) -> np.ndarray:
        """Start an episode. Without ``start`` a segment and window are drawn
        from the environment's generator."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        T = self.config.episode_hours
        if start is None:
            if segment is None:
                segment = int(self._rng.integers(0, len(self.segments))) if len(self.segments) > 1 else 0
            self.forcing = self.segments[segment]
            start = int(self._rng.integers(0, len(self.forcing) - T + 1))
        else:
            self.forcing = self.segments[segment or 0]
        if start < 0 or start + T > len(self.forcing):
            raise ForcingError("episode window does not fit in the forcing series")
        self.start = start
        self.t = 0
        self.E = float(self.E_init)
        self.xs_prev = np.zeros(self.layout.n_nozzles)
        prev = self.forcing[start - 1] if start > 0 else self.forcing[start]
        self.u_prev = prev.current_speed
        self.metrics = EpisodeMetrics()
        self.trajectory: list[dict] = []
        self.done = False
        self._started = True
        return self.features()

    def _record(self, k: int):
        return self.forcing[min(self.start + k, len(self.forcing) - 1)]

    @property
    def observation(self) -> Observation:
        r = self._record(self.t)
        return Observation(self.E, r.temperature, r.irradiance, r.tide_height, r.signed_current, float(self.t))

    def features(self) -> np.ndarray:
        obs = self.observation
        return normalize(obs, self.stats) if self.stats is not None else obs.to_array()

    def feasible_actions(self) -> np.ndarray:
        """Mask of compressor counts the battery can currently power."""
        g = pv_power(self._record(self.t).irradiance, self.pv, self.config.dt_hours)
        return np.array(
            [
                dispatch(g, self.config.essential_load, injection_power(m, self.compressors), self.E, self.ess,
                         self.config.dt_hours).feasible
                for m in range(self.n_actions)
            ]
        )

    def step(self, action: int):
        if not self._started or self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        m = int(action)
        if not 0 <= m < self.n_actions:
            raise ValueError(f"invalid action {action}")
        if self.config.action_masking:
            mask = self.feasible_actions()
            if not mask[m]:
                m = int(np.flatnonzero(mask[: m + 1]).max()) if mask[: m + 1].any() else 0
        dt = self.config.dt_hours
        rec = self._record(self.t)
        nxt = self.forcing[self.start + self.t + 1] if self.start + self.t + 1 < len(self.forcing) else rec

        q = injection_power(m, self.compressors)
        air = injection_airflow(m, self.compressors) * dt
        g = pv_power(rec.irradiance, self.pv, dt)
        res = dispatch(g, self.config.essential_load, q, self.E, self.ess, dt)
        f2 = photosynthetic_factor(rec.irradiance, rec.temperature, self.bio)

        active = select_active_nozzles(m, rec.current_dir, self.layout)
        rates = np.zeros(self.layout.n_nozzles)
        rates[active] = self.compressors.Q0 / 3600.0
        pstep = PlumeStep(
            air_rate=rates,
            u=rec.current_speed,
            u_prev=self.u_prev,
            sign=rec.current_dir,
            dir=int(nxt.current_dir != rec.current_dir),
            depth=rec.tide_height,
            xs_prev=self.xs_prev,
        )
        tr = transport_volume(pstep, self.layout, self.plume, active, dt * 3600.0)
        r = reward(m, tr.volume, f2, self.rewards, self.beta)

        unsafe = (not res.feasible) or res.E_next < self.ess.E_min
        self.t += 1
        done = unsafe or self.t >= self.config.episode_hours
        if unsafe:
            r += self.rewards.terminal_penalty
        E_before, self.E = self.E, res.E_next
        self.xs_prev = np.full(self.layout.n_nozzles, tr.xs)
        self.u_prev = rec.current_speed
        self.done = done

        self.metrics.record(m, air, tr.volume, f2, res.wastage, r, not unsafe)
        self.trajectory.append(
            {
                "step": self.t - 1,
                "E": E_before,
                "I": rec.irradiance,
                "T": rec.temperature,
                "Z": rec.tide_height,
                "u": rec.signed_current,
                "action": m,
                "q_kw": q,
                "V_m3": tr.volume,
                "f2": f2,
                "reward": r,
                "wastage_kwh": res.wastage,
                "done": done,
            }
        )
        outcome = StepOutcome(self.observation, r, done, unsafe, m, q, air, tr.volume, tr.f1, f2, res, res.wastage)
        return self.features(), r, done, {"outcome": outcome, "transport": tr, "unsafe": unsafe}

    def trajectory_csv(self) -> str:
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=TRAJECTORY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.trajectory:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return out.getvalue()
