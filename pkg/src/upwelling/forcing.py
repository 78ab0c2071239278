"""Environmental forcing: CSV ingestion, the simplified tide, synthetic weather,
and Z-score normalization of the six state features.

Feature order used everywhere in the package::

    0 E  stored energy (kWh)
    1 T  water temperature (degC)
    2 I  irradiance (W/m2)
    3 Z  tide height (m)
    4 u  signed current (m/s)
    5 t  hours since episode start
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterable, Sequence

import numpy as np

CSV_HEADER = (
    "timestamp",
    "irradiance_wm2",
    "temperature_c",
    "tide_height_m",
    "current_speed_ms",
    "current_dir",
)
FEATURES = ("E", "T", "I", "Z", "u", "t")
HOUR = timedelta(hours=1)
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


class ForcingError(ValueError):
    """Base class for malformed forcing data."""


class SchemaError(ForcingError):
    pass


class GapError(ForcingError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class RangeError(ForcingError):
    pass


class FetchError(RuntimeError):
    """Remote archive unreachable or returned something unusable."""


@dataclass(frozen=True)
class ForcingRecord:
    timestamp: datetime
    irradiance: float
    temperature: float
    tide_height: float
    current_speed: float
    current_dir: int

    def __post_init__(self):
        if not self.irradiance >= 0:
            raise RangeError(f"irradiance must be >= 0, got {self.irradiance}")
        if not self.current_speed >= 0:
            raise RangeError(f"current speed must be >= 0, got {self.current_speed}")
        if not self.tide_height > 0:
            raise RangeError(f"tide height must be > 0, got {self.tide_height}")
        if self.current_dir not in (-1, 1):
            raise RangeError(f"current_dir must be -1 or +1, got {self.current_dir}")

    @property
    def signed_current(self) -> float:
        return self.current_speed * self.current_dir


@dataclass(frozen=True)
class ForcingSeries:
    records: tuple[ForcingRecord, ...]
    source: str = "csv"

    def __post_init__(self):
        if not self.records:
            raise ForcingError("empty series")
        if self.source not in ("synthetic-tide", "csv"):
            raise ForcingError(f"unknown source {self.source!r}")
        for k in range(1, len(self.records)):
            if self.records[k].timestamp - self.records[k - 1].timestamp != HOUR:
                raise GapError(k + 1, "timestamps must advance by exactly one hour")

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, k):
        return self.records[k]

    def window(self, start: int, length: int) -> "ForcingSeries":
        if start < 0 or start + length > len(self.records):
            raise ForcingError(
                f"window [{start}, {start + length}) outside series of length {len(self)}"
            )
        return ForcingSeries(self.records[start : start + length], self.source)

    def columns(self) -> dict[str, np.ndarray]:
        return {
            "T": np.array([r.temperature for r in self.records]),
            "I": np.array([r.irradiance for r in self.records]),
            "Z": np.array([r.tide_height for r in self.records]),
            "u": np.array([r.signed_current for r in self.records]),
        }


@dataclass(frozen=True)
class TideModelConfig:
    height_min: float = 7.1
    height_max: float = 9.5
    speed_max: float = 0.25
    period: float = 12.42

    def __post_init__(self):
        if not self.height_max > self.height_min > 0:
            raise ValueError("need height_max > height_min > 0")
        if not self.speed_max > 0 or not self.period > 0:
            raise ValueError("speed_max and period must be positive")


# --------------------------------------------------------------------------- CSV


def _parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_forcing_csv(text: str | io.TextIOBase, tide: TideModelConfig | None = None) -> ForcingSeries:
    """Parse the hourly forcing CSV into a validated series.

    Rows whose three tide fields are all blank (a weather-only download) get
    the simplified tide, indexed by row.
    """
    tide = tide or TideModelConfig()
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("missing header") from None
    for col in CSV_HEADER:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    for col in header:
        if col not in CSV_HEADER:
            raise SchemaError(f"unknown column {col!r}")
    idx = {name: header.index(name) for name in CSV_HEADER}

    records = []
    for rowno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SchemaError(f"row {rowno}: expected {len(header)} fields, got {len(row)}")
        tide_fields = [row[idx[c]].strip() for c in CSV_HEADER[3:]]
        try:
            if not any(tide_fields):
                height, speed, sign = simplified_tide(float(len(records)), tide)
            else:
                height, speed, sign = float(tide_fields[0]), float(tide_fields[1]), int(tide_fields[2])
            rec = ForcingRecord(
                timestamp=_parse_timestamp(row[idx["timestamp"]]),
                irradiance=float(row[idx["irradiance_wm2"]]),
                temperature=float(row[idx["temperature_c"]]),
                tide_height=height,
                current_speed=speed,
                current_dir=sign,
            )
        except RangeError as exc:
            raise RangeError(f"row {rowno}: {exc}") from None
        except ValueError as exc:
            raise SchemaError(f"row {rowno}: {exc}") from None
        if records and rec.timestamp - records[-1].timestamp != HOUR:
            raise GapError(rowno, "timestamps must advance by exactly one hour")
        records.append(rec)
    if not records:
        raise ForcingError("empty series")
    return ForcingSeries(tuple(records), "csv")


def serialize_forcing_csv(series: ForcingSeries) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in series.records:
        writer.writerow(
            [
                r.timestamp.strftime(TIMESTAMP_FORMAT),
                repr(float(r.irradiance)),
                repr(float(r.temperature)),
                repr(float(r.tide_height)),
                repr(float(r.current_speed)),
                r.current_dir,
            ]
        )
    return out.getvalue()


def read_forcing(path: str | os.PathLike) -> ForcingSeries:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_forcing_csv(fh.read())


# ---------------------------------------------------------------------- synthetic


def simplified_tide(t: float, cfg: TideModelConfig = TideModelConfig()) -> tuple[float, float, int]:
    """Sinusoidal semi-diurnal tide: (height m, speed m/s, direction sign).

    High water at t = 0; the current is slack at high and low water.
    """
    mid = 0.5 * (cfg.height_min + cfg.height_max)
    amp = 0.5 * (cfg.height_max - cfg.height_min)
    phase = 2.0 * math.pi * t / cfg.period
    s = math.sin(phase)
    height = min(max(mid + amp * math.cos(phase), cfg.height_min), cfg.height_max)
    return height, cfg.speed_max * abs(s), 1 if s >= 0 else -1


@dataclass(frozen=True)
class WeatherConfig:
    """Clear-sky diurnal irradiance with daily cloudiness and a seasonal
    water-temperature ramp, roughly matching a Feb-Jun kelp season."""

    peak_irradiance: float = 850.0
    cloud_min: float = 0.35
    temp_start: float = 6.0
    temp_end: float = 18.0
    temp_diurnal: float = 0.8
    temp_noise: float = 0.3


def _day_length(day_of_year: int, lat_deg: float = 36.0) -> float:
    decl = math.radians(23.44) * math.sin(2 * math.pi * (284 + day_of_year) / 365.0)
    x = -math.tan(math.radians(lat_deg)) * math.tan(decl)
    return 24.0 / math.pi * math.acos(min(1.0, max(-1.0, x)))


def synthetic_forcing(
    hours: int,
    *,
    start: datetime = datetime(2019, 2, 1, tzinfo=timezone.utc),
    seed: int = 0,
    tide: TideModelConfig = TideModelConfig(),
    weather: WeatherConfig = WeatherConfig(),
) -> ForcingSeries:
    """Hourly series driven by the simplified tide and seeded synthetic weather."""
    if hours < 1:
        raise ForcingError("empty series")
    rng = np.random.default_rng(seed)
    n_days = hours // 24 + 2
    clouds = rng.uniform(weather.cloud_min, 1.0, size=n_days)
    noise = rng.normal(0.0, weather.temp_noise, size=n_days)
    records = []
    for k in range(hours):
        ts = start + k * HOUR
        day = k // 24
        hour = ts.hour + ts.minute / 60.0
        daylen = _day_length(ts.timetuple().tm_yday)
        sunrise = 12.0 - daylen / 2
        x = (hour + 0.5 - sunrise) / daylen
        irr = weather.peak_irradiance * clouds[day] * math.sin(math.pi * x) if 0 < x < 1 else 0.0
        frac = k / max(hours - 1, 1)
        temp = (
            weather.temp_start
            + (weather.temp_end - weather.temp_start) * frac
            + weather.temp_diurnal * math.sin(2 * math.pi * (hour - 9.0) / 24.0)
            + noise[day]
        )
        height, speed, sign = simplified_tide(float(k), tide)
        records.append(ForcingRecord(ts, float(max(irr, 0.0)), float(temp), height, speed, sign))
    return ForcingSeries(tuple(records), "synthetic-tide")


# ------------------------------------------------------------------ normalization


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    count: int = 0

    def __post_init__(self):
        if self.mean.shape != (6,) or self.std.shape != (6,):
            raise ValueError("NormStats needs six means and six deviations")
        if np.any(self.std < 0):
            raise ValueError("std must be non-negative")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "count": self.count}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), int(d.get("count", 0)))


def fit_normalizer(
    series: ForcingSeries | Sequence[ForcingSeries],
    ess_capacity_range: tuple[float, float],
    episode_hours: int,
) -> NormStats:
    """Moments of the state features.

    Forcing features use population moments of the series. Stored energy uses
    the moments of a uniform distribution over ``ess_capacity_range`` and time
    is scaled to [0, 1] by the episode length.
    """
    parts = [series] if isinstance(series, ForcingSeries) else list(series)
    count = sum(len(p) for p in parts)
    if count < 2:
        raise ForcingError("series too short to fit normalizer")
    e_min, e_max = ess_capacity_range
    cols = {k: np.concatenate([p.columns()[k] for p in parts]) for k in ("T", "I", "Z", "u")}
    mean = np.array(
        [0.5 * (e_min + e_max), cols["T"].mean(), cols["I"].mean(), cols["Z"].mean(), cols["u"].mean(), 0.0]
    )
    std = np.array(
        [(e_max - e_min) / math.sqrt(12.0), cols["T"].std(), cols["I"].std(), cols["Z"].std(), cols["u"].std(),
         float(episode_hours)]
    )
    return NormStats(mean, std, count)


def normalize(obs, stats: NormStats) -> np.ndarray:
    """Z-score features; zero-variance features map to 0. Accepts an
    Observation or an array of shape (..., 6)."""
    x = obs.to_array() if hasattr(obs, "to_array") else np.asarray(obs, dtype=float)
    safe = np.where(stats.std > 0, stats.std, 1.0)
    return np.where(stats.std > 0, (x - stats.mean) / safe, 0.0)


# --------------------------------------------------------------------- remote fetch

POWER_ENDPOINT = "https://power.larc.nasa.gov/api/temporal/hourly/point"


def fetch_power_archive(
    lat: float,
    lon: float,
    start: datetime,
    end: datetime,
    out_path: str | os.PathLike | None = None,
    *,
    opener=urllib.request.urlopen,
    timeout: float = 60.0,
) -> list[tuple[datetime, float, float]]:
    """Download hourly irradiance and air temperature from NASA POWER.

    Returns ``(timestamp, irradiance, temperature)`` rows. When ``out_path`` is
    given they are written in the forcing CSV schema with the tide columns left
    blank; the file is replaced atomically, so a failed fetch leaves any
    existing file untouched.
    """
    if end < start:
        raise ValueError("end must not precede start")
    if not (-90 <= lat <= 90 and -180 <= lon <= 180):
        raise ValueError("coordinates out of range")
    query = urllib.parse.urlencode(
        {
            "parameters": "ALLSKY_SFC_SW_DWN,T2M",
            "community": "RE",
            "latitude": lat,
            "longitude": lon,
            "start": start.strftime("%Y%m%d"),
            "end": end.strftime("%Y%m%d"),
            "format": "JSON",
            "time-standard": "UTC",
        }
    )
    try:
        with opener(f"{POWER_ENDPOINT}?{query}", timeout=timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        params = payload["properties"]["parameter"]
        irr, temp = params["ALLSKY_SFC_SW_DWN"], params["T2M"]
        rows = []
        for key in sorted(irr):
            ts = datetime.strptime(key, "%Y%m%d%H").replace(tzinfo=timezone.utc)
            i, t = float(irr[key]), float(temp[key])
            if i <= -999 or t <= -999:
                raise FetchError(f"archive fill value at {key}")
            rows.append((ts, i, t))
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        raise FetchError(f"transport failure: {exc}") from exc
    except (KeyError, ValueError, TypeError) as exc:
        raise FetchError(f"malformed response: {exc}") from exc
    if not rows:
        raise FetchError("archive returned no rows")

    if out_path is not None:
        out_path = os.fspath(out_path)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(out_path)), suffix=".part")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(CSV_HEADER)
                for ts, i, t in rows:
                    writer.writerow([ts.strftime(TIMESTAMP_FORMAT), repr(max(i, 0.0)), repr(t), "", "", ""])
            os.replace(tmp, out_path)
        except BaseException:
            os.unlink(tmp)
            raise
    return rows


def attach_tide(
    weather_rows: Iterable[tuple[datetime, float, float]],
    tide: TideModelConfig = TideModelConfig(),
) -> ForcingSeries:
    """Complete a weather-only fragment with the simplified tide."""
    records = []
    for k, (ts, irr, temp) in enumerate(weather_rows):
        height, speed, sign = simplified_tide(float(k), tide)
        records.append(ForcingRecord(ts, max(irr, 0.0), temp, height, speed, sign))
    return ForcingSeries(tuple(records), "synthetic-tide")
