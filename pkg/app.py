"""
Command-line entry point.

    python app.py run                 seeded batch of coupled runs plus summaries
    python app.py sweep-thresholds    replay heatmaps over (t2c_t, s2c_t)
    python app.py sweep-arrivals      mean vehicle count over arrival rates
    python app.py compare-placement   Metro/Cloud x HD/AV comparison
    python app.py analyze RUN_DIR     re-run analysis on existing logs

Exit codes: 0 success, 1 configuration or missing input, 2 runtime failure.
"""
import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from config import RunConfig, config, detector_params, load_run_config
from sim.analysis import (Footprints, SweepInputs, aggregate_reports, alerts_frame, collisions_frame, hmi_delta,
                          read_alerts, read_collisions, read_trajectories, summarize, threshold_sweep,
                          trajectories_frame)
from sim.detector import Detector
from sim.errors import ConfigError, MissingLogsError
from sim.mobility import ArrivalConfig, World, find_knee, generate_arrivals, stability_sweep
from sim.netmodel import LatencyProfile, ReactionProfile, latency_profile, reaction_profile, run_coupled
from sim.scenario import Scenario, load_scenario
from utils.logger import get_logger, timer
from utils.run_store import (ALERT_LOG, COLLISION_LOG, META_FILE, SUMMARY_FILE, TRAJECTORY_LOG, RunStore,
                             run_name)

# Set up logging
logger = get_logger("main_app")

PLACEMENTS = ("metro", "cloud")
REACTIONS = ("hd", "av")


def condition_label(latency: LatencyProfile, reaction: ReactionProfile) -> str:
    return f"{latency.name.capitalize()}-{reaction.name.upper()}"


def footprints(scenario: Scenario) -> Footprints:
    return Footprints(length=scenario.vehicle.length, width=scenario.vehicle.width,
                      radius=scenario.pedestrian.radius)


def build_world(cfg: RunConfig, seed: int, scenario: Scenario) -> World:
    arrivals = generate_arrivals(ArrivalConfig(cfg.lambda_v, cfg.lambda_p, seed), cfg.duration, scenario)
    return World(scenario, arrivals, dt=cfg.dt)


def write_summary(store: RunStore, summary) -> None:
    store.write_json(SUMMARY_FILE, summary.report)
    for name, table in summary.tables.items():
        store.write_table(f"{name}.csv", table)
    store.write_table("classified_collisions.csv", summary.collisions)
    store.write_table("classified_alerts.csv", summary.alerts)


def run_one(cfg: RunConfig, seed: int, root: Path) -> Dict[str, Any]:
    """One seeded coupled run written to its own directory; returns the summary report"""
    scenario = load_scenario(cfg.scenario)
    store = RunStore(root, run_name(seed, cfg.latency.name, cfg.reaction.name))
    try:
        store.create()
        world = build_world(cfg, seed, scenario)
        detector = Detector(cfg.detector) if cfg.alerts_enabled else None
        result = run_coupled(world, detector, cfg.latency, cfg.reaction, cfg.duration,
                             closed_loop=cfg.closed_loop, cam_decimation=cfg.cam_decimation,
                             trajectory_decimation=cfg.trajectory_decimation, jitter_seed=seed)

        collision_records = [c.to_record() for c in result.collisions]
        store.write_jsonl(TRAJECTORY_LOG, result.trajectories)
        store.write_jsonl(COLLISION_LOG, collision_records)
        store.write_jsonl(ALERT_LOG, result.alerts)

        dims = footprints(scenario)
        meta = {
            "seed": seed,
            "scenario": str(cfg.scenario),
            "duration": cfg.duration,
            "dt": cfg.dt,
            "end_time": result.end_time,
            "arrivals": {"lambda_v": cfg.lambda_v, "lambda_p": cfg.lambda_p},
            "latency": asdict(cfg.latency),
            "reaction": asdict(cfg.reaction),
            "detector": asdict(cfg.detector),
            "max_decel": scenario.vehicle.max_decel,
            "footprints": asdict(dims),
            "alerts_enabled": cfg.alerts_enabled,
            "closed_loop": cfg.closed_loop,
            "cam_decimation": cfg.cam_decimation,
            "stats": result.stats,
        }
        store.write_json(META_FILE, meta)

        summary = summarize(collisions_frame(collision_records), alerts_frame(result.alerts),
                            trajectories_frame(result.trajectories), cfg.detector, cfg.latency, cfg.reaction,
                            scenario.vehicle.max_decel, dims,
                            meta={"seed": seed, "condition": condition_label(cfg.latency, cfg.reaction)})
        write_summary(store, summary)
        logger.debug("Run files", store.get_stats())
        logger.info("Run written", {"seed": seed, "path": str(store.path), **summary.report["totals"]})
        return summary.report
    except BaseException:
        store.discard()
        raise


def _run_seed(args) -> Dict[str, Any]:
    cfg, seed, root = args
    return run_one(cfg, seed, root)


def run_batch(cfg: RunConfig, root: Path) -> List[Dict[str, Any]]:
    """All seeds of `cfg` in seed order, in a process pool when MAX_WORKERS > 1.

    If any seed fails, every run directory this batch created is removed.
    """
    jobs = [(cfg, seed, root) for seed in cfg.seeds]
    created = [store for store in (RunStore(root, run_name(seed, cfg.latency.name, cfg.reaction.name))
                                   for seed in cfg.seeds) if not store.path.exists()]
    try:
        if config.MAX_WORKERS > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=config.MAX_WORKERS) as pool:
                return list(pool.map(_run_seed, jobs))
        return [_run_seed(job) for job in jobs]
    except BaseException:
        discarded = sum(store.discard() for store in created)
        logger.warning("Batch failed, run directories removed", {"seeds": cfg.seeds, "discarded": discarded})
        raise


def cmd_run(cfg: RunConfig) -> int:
    root = Path(cfg.output_dir)
    timer.start("cmd_run")
    reports = run_batch(cfg, root)
    batch = RunStore(root).create()
    batch.write_table("aggregate.csv", aggregate_reports(reports))
    batch.write_json("batch.json", {"config": cfg.to_dict(), "seeds": cfg.seeds,
                                    "performance": timer.get_performance_summary()})
    timer.end("cmd_run", {"seeds": len(cfg.seeds), "out": str(root)})
    return 0


def load_logs(run_dir: Path) -> Dict[str, Any]:
    store = RunStore(run_dir)
    store.require_logs()
    return {
        "store": store,
        "meta": store.read_json(META_FILE),
        "trajectories": read_trajectories(store.file(TRAJECTORY_LOG)),
        "collisions": read_collisions(store.file(COLLISION_LOG)),
        "alerts": read_alerts(store.file(ALERT_LOG)),
    }


def cmd_sweep_thresholds(cfg: RunConfig, run_dir: Optional[Path] = None) -> int:
    """Heatmaps from a prior run's logs, or from a fresh open-loop run of the first seed"""
    if run_dir is None:
        fresh = replace(cfg, seeds=cfg.seeds[:1], closed_loop=False, alerts_enabled=False)
        root = Path(cfg.output_dir) / "threshold_sweep"
        run_one(fresh, fresh.seeds[0], root)
        run_dir = root / run_name(fresh.seeds[0], fresh.latency.name, fresh.reaction.name)

    logs = load_logs(run_dir)
    meta = logs["meta"]
    if meta.get("closed_loop"):
        logger.warning("Replaying a closed-loop run; recorded trajectories include reactions",
                       {"run_dir": str(run_dir)})
    inputs = SweepInputs(
        trajectories=logs["trajectories"],
        collisions=logs["collisions"],
        params=detector_params(meta["detector"]),
        latency=LatencyProfile(**meta["latency"]),
        reaction=ReactionProfile(**meta["reaction"]),
        max_decel=float(meta["max_decel"]),
        end_time=float(meta["end_time"]),
    )
    matrices = threshold_sweep(inputs, cfg.sweep.t2c_grid, cfg.sweep.s2c_grid, workers=config.MAX_WORKERS)
    store = logs["store"]
    for kind, tables in matrices.items():
        for metric, matrix in tables.items():
            store.write_table(f"sweep_{kind.value}_{metric}.csv", matrix, index=True)
    logger.info("Threshold sweep written",
                {"run_dir": str(run_dir), "cells": len(cfg.sweep.t2c_grid) * len(cfg.sweep.s2c_grid)})
    return 0


def cmd_sweep_arrivals(cfg: RunConfig) -> int:
    scenario = load_scenario(cfg.scenario)
    table = stability_sweep(cfg.sweep.lambda_v_grid, cfg.sweep.lambda_p_set, cfg.sweep.stability_duration,
                            cfg.seeds, scenario, dt=cfg.sweep.stability_dt, workers=config.MAX_WORKERS)
    knees = [{"lambda_p": lp, "knee_lambda_v": find_knee(part["lambda_v"].tolist(), part["mean_count"].tolist())}
             for lp, part in table.groupby("lambda_p", sort=True)]
    store = RunStore(Path(cfg.output_dir) / "arrival_sweep").create()
    store.write_table("stability.csv", table)
    store.write_table("knees.csv", pd.DataFrame(knees, columns=["lambda_p", "knee_lambda_v"]))
    logger.info("Arrival sweep written", {"rows": len(table), "path": str(store.path)})
    return 0


def cmd_compare_placement(cfg: RunConfig) -> int:
    """Same seeds under every placement and reaction profile, side by side"""
    root = Path(cfg.output_dir) / "placement"
    columns: Dict[str, pd.Series] = {}
    for placement in PLACEMENTS:
        for reaction in REACTIONS:
            condition = replace(cfg, latency=latency_profile(placement), reaction=reaction_profile(reaction))
            label = condition_label(condition.latency, condition.reaction)
            aggregate = aggregate_reports(run_batch(condition, root))
            columns[label] = aggregate.set_index("metric")["mean"]
            RunStore(root).create().write_table(f"aggregate_{label}.csv", aggregate)

    store = RunStore(root).create()
    store.write_table("comparison.csv", pd.DataFrame(columns).rename_axis("metric"), index=True)

    deltas = []
    for reaction in REACTIONS:
        for seed in cfg.seeds:
            metro = read_alerts(RunStore(root, run_name(seed, "metro", reaction)).file(ALERT_LOG))
            cloud = read_alerts(RunStore(root, run_name(seed, "cloud", reaction)).file(ALERT_LOG))
            delta = hmi_delta(metro, cloud)
            delta.insert(0, "reaction", reaction)
            delta.insert(0, "seed", seed)
            deltas.append(delta)
    store.write_table("td_delta.csv", pd.concat(deltas, ignore_index=True))
    logger.info("Placement comparison written", {"conditions": list(columns), "path": str(store.path)})
    return 0


def cmd_analyze(run_dir: Path, profile: Optional[str] = None, reaction: Optional[str] = None) -> int:
    """Summarize existing logs, optionally under other latency/reaction profiles"""
    logs = load_logs(run_dir)
    meta = logs["meta"]
    latency = latency_profile(profile) if profile else LatencyProfile(**meta["latency"])
    reaction_p = reaction_profile(reaction) if reaction else ReactionProfile(**meta["reaction"])
    summary = summarize(logs["collisions"], logs["alerts"], logs["trajectories"], detector_params(meta["detector"]),
                        latency, reaction_p, float(meta["max_decel"]), Footprints(**meta["footprints"]),
                        meta={"seed": meta.get("seed"), "condition": condition_label(latency, reaction_p)},
                        logged_delay=not (profile or reaction))
    store = RunStore(run_dir, f"analysis_{latency.name}_{reaction_p.name}").create()
    write_summary(store, summary)
    logger.info("Analysis written", {"path": str(store.path), **summary.report["totals"]})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.py", description="Edge collision-detection simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML run config (default scenarios/run.yaml)")
    common.add_argument("--seed", type=int, default=None, help="run a single seed")
    common.add_argument("--duration", type=float, default=None, help="simulated seconds per run")
    common.add_argument("--profile", default=None, help="latency preset: metro or cloud")
    common.add_argument("--reaction", default=None, help="reaction preset: hd or av")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--no-alerts", action="store_true", help="run without the detection server")
    common.add_argument("--open-loop", action="store_true",
                        help="log alerts without letting drivers react (post-processing runs)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="seeded batch of coupled runs")
    sweep = sub.add_parser("sweep-thresholds", parents=[common], help="replay heatmaps over thresholds")
    sweep.add_argument("--run-dir", type=Path, default=None, help="existing run directory to replay")
    sub.add_parser("sweep-arrivals", parents=[common], help="vehicle count over arrival rates")
    sub.add_parser("compare-placement", parents=[common], help="Metro/Cloud x HD/AV comparison")
    analyze = sub.add_parser("analyze", parents=[common], help="re-run analysis on existing logs")
    analyze.add_argument("run_dir", type=Path)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            return cmd_analyze(args.run_dir, args.profile, args.reaction)
        cfg = load_run_config(args.config).with_overrides(
            seed=args.seed, duration=args.duration, profile=args.profile, reaction=args.reaction,
            out=args.out, no_alerts=args.no_alerts, open_loop=args.open_loop)
        logger.info("Starting", {"command": args.command, "seeds": cfg.seeds, "latency": cfg.latency.name,
                                 "reaction": cfg.reaction.name, **config.get_config_summary()})
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep-thresholds":
            return cmd_sweep_thresholds(cfg, args.run_dir)
        if args.command == "sweep-arrivals":
            return cmd_sweep_arrivals(cfg)
        return cmd_compare_placement(cfg)
    except (ConfigError, MissingLogsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
