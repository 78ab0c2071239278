"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 configuration, 4 data, 5 numeric
(including a failed gradient check), 6 remote fetch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import date

from . import qnet
from .agent import NumericError
from .config import ConfigError, RunConfig, desk_preset, load_config, sha256_text, write_manifest
from .forcing import FetchError, ForcingError, fetch_power_archive, read_forcing, serialize_forcing_csv, synthetic_forcing

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_FETCH = 0, 2, 3, 4, 5, 6


def _resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif getattr(args, "preset", None) == "desk":
        cfg = desk_preset()
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides({"train": {"seed": args.seed}})
    return cfg


def _train_one(cfg_dict: dict, seed: int, out_dir: str) -> str:
    from .experiment import run_training

    cfg = RunConfig.from_dict(cfg_dict)
    run_training(cfg, seed=seed, out_dir=out_dir)
    return out_dir


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        jobs = [(s, os.path.join(args.out, f"seed_{s}")) for s in seeds]
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
            for done in pool.map(_train_one, [cfg.to_dict()] * len(jobs), *zip(*jobs)):
                print(f"trained {done}")
        return EXIT_OK
    _train_one(cfg.to_dict(), cfg.train.seed, args.out)
    print(f"trained {args.out}")
    return EXIT_OK


def _eval_series(cfg: RunConfig, forcing_path):
    from .experiment import build_forcing

    if forcing_path:
        return read_forcing(forcing_path), {"eval:" + os.path.basename(forcing_path): _sha_file(forcing_path)}
    bundle = build_forcing(cfg)
    return bundle.eval, {k: v for k, v in bundle.checksums.items() if k.startswith("eval:")}


def _sha_file(path) -> str:
    import hashlib

    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def cmd_eval(args) -> int:
    from .experiment import evaluate_agent, load_trained, save_evaluation

    params, layout, stats, cfg = load_trained(args.checkpoint)
    series, checksums = _eval_series(cfg, args.forcing)
    checksums["checkpoint"] = _sha_file(args.checkpoint)
    _, env, doc = evaluate_agent(cfg, params, layout, stats, series, args.start, name=args.name or "agent")
    save_evaluation(args.out, doc, env, cfg, checksums, extra={"command": "eval", "start": env.start})
    print(json.dumps(doc["metrics"], sort_keys=True))
    return EXIT_OK


def cmd_baseline(args) -> int:
    from .experiment import evaluate_greedy, save_evaluation

    cfg = _resolve_config(args)
    series, checksums = _eval_series(cfg, args.forcing)
    _, env, doc = evaluate_greedy(cfg, series, args.fmin, args.start, name=args.name)
    save_evaluation(args.out, doc, env, cfg, checksums,
                    extra={"command": "baseline", "policy": args.policy, "f_min": args.fmin, "start": env.start})
    print(json.dumps(doc["metrics"], sort_keys=True))
    return EXIT_OK


def cmd_compare(args) -> int:
    from .metrics import compare, load_metrics, table_csv

    docs = load_metrics(args.metrics)
    rows = compare(docs, args.baseline)
    text = json.dumps(rows, indent=2) + "\n" if args.out and args.out.endswith(".json") else table_csv(rows)
    if args.out:
        out_dir = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(out_dir, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        stem = os.path.splitext(os.path.basename(args.out))[0]
        checksums = {os.path.basename(p): _sha_file(p) for p in args.metrics}
        write_manifest(out_dir, RunConfig(), seed=0, beta=None, data_checksums=checksums,
                       extra={"command": "compare", "baseline": args.baseline or docs[0]["name"]},
                       name=stem + ".manifest.json")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    """Write a synthetic-tide forcing series in the CSV schema."""
    cfg = _resolve_config(args)
    fc = cfg.forcing
    hours = args.hours or fc.hours
    seed = fc.eval_seed if args.seed is None else args.seed
    series = synthetic_forcing(hours, seed=seed, tide=fc.tide, weather=fc.weather)
    text = serialize_forcing_csv(series)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    stem = os.path.splitext(os.path.basename(args.out))[0]
    write_manifest(out_dir, cfg, seed=seed, beta=None, data_checksums={os.path.basename(args.out): sha256_text(text)},
                   extra={"command": "simulate", "hours": hours}, name=stem + ".manifest.json")
    print(f"wrote {hours} hourly records to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    err = qnet.gradient_check(seed=args.seed, cases=args.cases)
    print(f"max relative error {err:.3e}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_manifest(args.out, RunConfig(), seed=args.seed, beta=None, data_checksums={},
                       extra={"command": "gradcheck", "cases": args.cases, "max_relative_error": err})
    return EXIT_OK if err < 1e-4 else EXIT_NUMERIC


def cmd_fetch(args) -> int:
    fetch_power_archive(args.lat, args.lon, args.start, args.end, args.out)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    stem = os.path.splitext(os.path.basename(args.out))[0]
    write_manifest(out_dir, RunConfig(), seed=0, beta=None,
                   data_checksums={os.path.basename(args.out): _sha_file(args.out)},
                   extra={"command": "fetch-power", "lat": args.lat, "lon": args.lon,
                          "start": args.start.isoformat(), "end": args.end.isoformat()},
                   name=stem + ".manifest.json")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="upwelling", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--preset", choices=("paper", "desk"), default="paper",
                       help="defaults to start from when no --config is given")

    p = sub.add_parser("train", help="train an agent")
    with_config(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated seeds run concurrently into OUT/seed_<s>/")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one episode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--forcing", help="forcing CSV (default: the held-out series named by the checkpoint's config)")
    p.add_argument("--start", type=int, help="first hour of the episode window")
    p.add_argument("--name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="evaluate the rule-based controller")
    with_config(p)
    p.add_argument("--policy", choices=("greedy",), default="greedy")
    p.add_argument("--fmin", type=float, default=0.0)
    p.add_argument("--forcing")
    p.add_argument("--start", type=int)
    p.add_argument("--name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline, seed=None)

    p = sub.add_parser("compare", help="tabulate metric files against a baseline")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--baseline", help="run name of the baseline row (default: first file)")
    p.add_argument("--out", help=".csv or .json")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="write a synthetic-tide forcing CSV")
    with_config(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--hours", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the network gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fetch-power", help="download hourly irradiance and temperature")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--start", type=date.fromisoformat, required=True)
    p.add_argument("--end", type=date.fromisoformat, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FetchError as exc:
        print(f"fetch error: {exc}", file=sys.stderr)
        return EXIT_FETCH
    except (ForcingError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
