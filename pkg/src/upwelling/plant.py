"""Electrical side of the system: battery kinetics, PV output, compressor load
and the per-period power-balance dispatch."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EssConfig:
    E_max: float = 86.4
    E_min: float = 4.0
    eta_c: float = 0.95
    eta_d: float = 0.95
    c_max: float = 40.0
    d_max: float = 40.0

    def __post_init__(self):
        if not self.E_max > self.E_min >= 0:
            raise ValueError("need E_max > E_min >= 0")
        if not (0 < self.eta_c <= 1 and 0 < self.eta_d <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if not (self.c_max > 0 and self.d_max > 0):
            raise ValueError("power limits must be positive")


@dataclass(frozen=True)
class PvConfig:
    P_AZ: float = 48.0
    K: float = 0.75

    def __post_init__(self):
        if not self.P_AZ > 0 or not 0 < self.K <= 1:
            raise ValueError("need P_AZ > 0 and K in (0, 1]")


@dataclass(frozen=True)
class CompressorConfig:
    M: int = 16
    p0: float = 1.0  # kW
    Q0: float = 6.0  # m3/h

    def __post_init__(self):
        if self.M < 1 or not self.p0 > 0 or not self.Q0 > 0:
            raise ValueError("need M >= 1 and positive p0, Q0")


@dataclass(frozen=True)
class DispatchResult:
    c: float
    d: float
    wastage: float
    E_next: float
    feasible: bool


def _check_count(m: int, cfg: CompressorConfig) -> None:
    if not 0 <= m <= cfg.M:
        raise ValueError(f"compressor count {m} outside [0, {cfg.M}]")


def injection_power(m: int, cfg: CompressorConfig = CompressorConfig()) -> float:
    _check_count(m, cfg)
    return m * cfg.p0


def injection_airflow(m: int, cfg: CompressorConfig = CompressorConfig()) -> float:
    """Total injected air, m3/h."""
    _check_count(m, cfg)
    return m * cfg.Q0


def pv_power(irradiance: float, cfg: PvConfig = PvConfig(), dt: float = 1.0) -> float:
    """Mean PV output (kW) over a period of ``dt`` hours."""
    if irradiance < 0:
        raise ValueError("irradiance must be non-negative")
    energy = irradiance * dt * cfg.P_AZ * cfg.K / 1000.0
    return energy / dt


def ess_step(E: float, c: float, d: float, cfg: EssConfig = EssConfig(), dt: float = 1.0) -> float:
    if c > 0 and d > 0:
        raise ValueError("simultaneous charge and discharge")
    return E + cfg.eta_c * c * dt - d * dt / cfg.eta_d


def dispatch(g: float, b: float, q: float, E: float, cfg: EssConfig = EssConfig(), dt: float = 1.0) -> DispatchResult:
    """Balance generation ``g`` against loads ``b + q`` through the battery.

    Surplus charges the battery up to its power and headroom limits and the
    rest is curtailed (kWh). A deficit is drawn from the battery; when the
    battery cannot cover it the result is flagged infeasible.
    """
    if b < 0 or q < 0:
        raise ValueError("loads must be non-negative")
    net = g - b - q
    if net >= 0:
        c = min(net, cfg.c_max, max(cfg.E_max - E, 0.0) / (cfg.eta_c * dt))
        E_next = min(ess_step(E, c, 0.0, cfg, dt), max(cfg.E_max, E))
        return DispatchResult(c, 0.0, (net - c) * dt, E_next, True)
    need = -net
    d = min(need, cfg.d_max, max(E - cfg.E_min, 0.0) * cfg.eta_d / dt)
    # headroom limits put E_next on the bound up to rounding; keep it there
    E_next = max(ess_step(E, 0.0, d, cfg, dt), min(cfg.E_min, E))
    return DispatchResult(0.0, d, 0.0, E_next, d == need)
