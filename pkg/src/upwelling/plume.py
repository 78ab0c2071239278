"""Bubble-entrained plume closures and per-period transport volume.

Units: air rates entering the entrainment coefficient and the outlet flow rate
are in m3/s; the rated air rate entering the empirical rise-height formula is
in m3/h (the constant 0.0006 only gives surface-reaching plumes at weak
crossflow under that reading).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REACHES_SURFACE = math.inf


@dataclass(frozen=True)
class PlumeConstants:
    H0: float = 10.4
    v_s: float = 0.3
    g: float = 9.81
    d0: float = 0.025
    delta_rho: float = 0.6
    surface_layer: float = 2.0
    u_slack: float = 1e-3
    rise_speed: float = 0.3  # characteristic plume rise speed for lateral drift

    def __post_init__(self):
        for name in ("H0", "v_s", "g", "d0", "delta_rho", "surface_layer", "u_slack", "rise_speed"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class NozzleLayout:
    n_nozzles: int = 16
    spacing: float = 4.0
    farm_length: float = 120.0
    farm_width: float = 70.0
    positions: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.n_nozzles < 1:
            raise ValueError("need at least one nozzle")
        if not self.positions:
            span = self.spacing * (self.n_nozzles - 1)
            first = 0.5 * (self.farm_length - span)
            object.__setattr__(
                self, "positions", tuple(first + k * self.spacing for k in range(self.n_nozzles))
            )
        pos = self.positions
        if len(pos) != self.n_nozzles:
            raise ValueError("positions must list every nozzle")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("nozzle positions must be strictly increasing")
        if pos[0] < 0 or pos[-1] > self.farm_length:
            raise ValueError("nozzles must lie inside the farm")

    def downstream_distance(self, sign: int) -> np.ndarray:
        """Distance from each nozzle to the farm edge the current flows towards."""
        pos = np.asarray(self.positions)
        return self.farm_length - pos if sign >= 0 else pos.copy()


@dataclass
class PlumeStep:
    """Conditions for one period. ``dir`` is 1 when the current reverses in
    the following period, else 0; ``xs_prev`` is last period's lateral drift
    per nozzle."""

    air_rate: np.ndarray  # m3/s per nozzle
    u: float
    u_prev: float
    sign: int
    dir: int
    depth: float
    xs_prev: np.ndarray


def entrainment_coefficient(Q: float, k: PlumeConstants = PlumeConstants()) -> float:
    if Q < 0:
        raise ValueError("air rate must be non-negative")
    return 0.082 * math.tanh((k.g * Q / k.H0) ** (1 / 3) / k.v_s) ** 0.375


def virtual_displacement(d0: float, alpha: float) -> float:
    if not alpha > 0:
        raise ZeroDivisionError("entrainment coefficient must be positive (compressor off?)")
    return d0 / (1.2 * alpha)


def plume_flow_rate(Q: float, dz: float, k: PlumeConstants = PlumeConstants()) -> float:
    """Outlet volume flow rate of the plume (m3/s)."""
    if Q <= 0 or dz <= 0:
        return 0.0
    return 0.06 * Q ** (1 / 3) * dz ** (5 / 3) * math.tanh((k.g * Q) ** (1 / 3) / (k.H0 * 0.25)) ** 0.375


def max_plume_height(alpha: float, Q0_rate: float, delta_rho: float, u_c: float, u_slack: float = 1e-3) -> float:
    """Maximum plume rise (m) under crossflow ``u_c``; ``Q0_rate`` in m3/h.

    Returns ``REACHES_SURFACE`` at slack water, where the closure diverges.
    """
    if not alpha > 0 or not delta_rho > 0:
        raise ValueError("alpha and delta_rho must be positive")
    u = abs(u_c)
    if u <= u_slack:
        return REACHES_SURFACE
    return 0.0006 * (alpha ** (-2 / 3) * Q0_rate ** (1 / 3)) ** 1.9 / (delta_rho**0.4 * u**1.1) - 0.4446


def lateral_displacement(u_c: float, rise_height: float, rise_speed: float = 0.3) -> float:
    """Drift of the plume while it climbs ``rise_height`` at ``rise_speed``."""
    if u_c < 0 or rise_height <= 0:
        raise ValueError("need u_c >= 0 and rise_height > 0")
    return u_c * rise_height / rise_speed


def _crossflow_raw(u, u_prev, dir_flag, x_aq, xd, xs, xs_prev, dt):
    """Unclamped crossflow retention expression; None where it is singular."""
    ut = abs(u) * dt
    d1 = xd - xs
    d2 = xd - xs_prev
    if ut == 0 or d1 == 0 or d2 == 0:
        return None
    try:
        ratio = abs(u_prev) / abs(u)
        return (d1 / ut) ** 2 * ((ut - xd) / d1 + ratio * (dir_flag * (x_aq - xd) / d2 + 0.5) + 0.5)
    except OverflowError:  # vanishingly small current
        return None


def crossflow_factor(
    step: PlumeStep,
    layout: NozzleLayout,
    i: int,
    dt: float = 3600.0,
    xs: float | None = None,
    k: PlumeConstants = PlumeConstants(),
) -> float:
    """Fraction of nozzle ``i``'s upwelled water retained over the farm, in [0, 1].

    ``xs`` is this period's lateral drift; when omitted it is recomputed from
    the step. Slack water and vanishing denominators give 1.
    """
    if step.u == 0:
        return 1.0
    if xs is None:
        xs = lateral_displacement(abs(step.u), step.depth - k.surface_layer, k.rise_speed)
    xd = float(layout.downstream_distance(step.sign)[i])
    raw = _crossflow_raw(step.u, step.u_prev, step.dir, layout.farm_length, xd, xs, float(step.xs_prev[i]), dt)
    if raw is None or not math.isfinite(raw):
        return 1.0
    return min(max(raw, 0.0), 1.0)


@dataclass
class TransportResult:
    volume: float
    per_nozzle: np.ndarray
    f1: np.ndarray
    z_max: float
    z_surface: float
    xs: float
    gate_open: bool


def transport_volume(
    step: PlumeStep,
    layout: NozzleLayout,
    k: PlumeConstants,
    active: np.ndarray | list[int],
    dt: float = 3600.0,
) -> TransportResult:
    """Bottom water delivered to the surface layer this period (m3).

    Nothing is delivered when the plume tops out below the surface layer; a
    nozzle whose plume drifts past its downstream farm edge contributes nothing.
    """
    n = layout.n_nozzles
    per = np.zeros(n)
    f1 = np.zeros(n)
    z_surface = step.depth - k.surface_layer
    speed = abs(step.u)
    xs = 0.0 if speed == 0 else lateral_displacement(speed, z_surface, k.rise_speed)
    active = list(active)
    if not active:
        return TransportResult(0.0, per, f1, math.nan, z_surface, xs, False)

    # every active nozzle is fed at the same rated rate in this model, but keep
    # the per-nozzle evaluation so heterogeneous rates remain possible
    xd = layout.downstream_distance(step.sign)
    z_max = math.inf
    gate = True
    for i in active:
        Q = float(step.air_rate[i])
        if Q <= 0:
            continue
        alpha = entrainment_coefficient(Q, k)
        zm = max_plume_height(alpha, Q * 3600.0, k.delta_rho, speed, k.u_slack)
        z_max = min(z_max, zm)
        if zm < z_surface:
            gate = False
    if not gate:
        return TransportResult(0.0, per, f1, z_max, z_surface, xs, False)

    for i in active:
        Q = float(step.air_rate[i])
        if Q <= 0 or xs > xd[i]:
            continue
        alpha = entrainment_coefficient(Q, k)
        qw = plume_flow_rate(Q, virtual_displacement(k.d0, alpha), k)
        f1[i] = crossflow_factor(step, layout, i, dt, xs=xs, k=k)
        per[i] = f1[i] * qw * dt
    return TransportResult(float(per.sum()), per, f1, z_max, z_surface, xs, True)
