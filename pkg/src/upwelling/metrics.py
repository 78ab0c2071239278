"""Episode evaluation and comparison tables."""

from __future__ import annotations

import csv
import io
import json
import os
from typing import Callable, Sequence

from .env import EpisodeMetrics, UpwellingEnv

TABLE_COLUMNS = (
    "name",
    "total_air_m3",
    "total_transport_m3",
    "mean_photosynthetic_factor",
    "total_wastage_kwh",
    "total_efficiency",
    "safe_hours",
    "total_reward",
    "improvement_pct",
)


def evaluate(policy: Callable, env: UpwellingEnv, start: int = 0, segment: int = 0) -> EpisodeMetrics:
    """Roll out one full episode with a deterministic ``policy(features) -> action``."""
    features = env.reset(start=start, segment=segment)
    while not env.done:
        features, _, _, _ = env.step(policy(features))
    return env.metrics


def metrics_document(name: str, metrics: EpisodeMetrics, env: UpwellingEnv) -> dict:
    """Metrics plus the identity of the evaluated window."""
    first = env.forcing[env.start]
    return {
        "name": name,
        "window": {
            "start": first.timestamp.isoformat(),
            "hours": env.config.episode_hours,
        },
        "metrics": metrics.to_dict(),
    }


def write_metrics(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def compare(docs: Sequence[dict], baseline: str | None = None) -> list[dict]:
    """Table rows with the percentage efficiency gain over ``baseline``
    (defaults to the first document)."""
    if not docs:
        raise ValueError("nothing to compare")
    windows = {json.dumps(d.get("window"), sort_keys=True) for d in docs}
    if len(windows) > 1:
        raise ValueError(f"runs were evaluated on different windows: {sorted(windows)}")
    names = [d["name"] for d in docs]
    if len(set(names)) != len(names):
        raise ValueError("run names must be unique")
    base_name = baseline if baseline is not None else names[0]
    if base_name not in names:
        raise ValueError(f"baseline {base_name!r} not among {names}")
    base = next(d for d in docs if d["name"] == base_name)["metrics"]["total_efficiency"]
    rows = []
    for d in docs:
        m = d["metrics"]
        eff = m["total_efficiency"]
        gain = 100.0 * (eff - base) / base if base else (0.0 if eff == base else float("inf"))
        rows.append({"name": d["name"], **{k: m[k] for k in TABLE_COLUMNS[1:-1]}, "improvement_pct": gain})
    return rows


def load_metrics(paths: Sequence[str | os.PathLike]) -> list[dict]:
    docs = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            docs.append(json.load(fh))
    return docs


def table_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return out.getvalue()
