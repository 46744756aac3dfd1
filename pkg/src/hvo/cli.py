"""Command-line interface: runs, sweeps, map generation, ratio optimization.

Exit codes: 0 success, 1 configuration/validation error, 2 infeasible
mission or ratio range, 3 sweep with failed rows. Diagnostics go to stderr;
artifacts are deterministic for identical inputs (including --seed and
--jobs).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, architectures, ems, maps, mission
from .errors import (
    AllInfeasible,
    DeadEnd,
    HvoError,
    InvalidArgument,
    MissionInfeasible,
    NoFeasibleRatio,
    ParseError,
    ValidationError,
)

log = logging.getLogger("hvo")

_RPM = np.pi / 30.0


def _setup_logging():
    logging.basicConfig(
        level=os.environ.get("HVO_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _data_path(name: str):
    return resources.files("hvo.data") / name


def _load_mission_arg(path_str: str) -> mission.MissionProfile:
    path = Path(path_str)
    if not path.exists():
        raise InvalidArgument(f"mission file not found: {path}")
    return mission.load_mission(path)


def _dp_config(args) -> ems.DpConfig:
    cfg = ems.DpConfig(
        soc_nodes=args.soc_nodes,
        alpha_nodes=args.alpha_nodes,
        phi_nodes=args.phi_nodes,
        engine_speed_nodes=args.engine_speed_nodes,
        soc0=args.soc0,
        jobs=args.jobs,
    ).validated()
    if cfg.soc_nodes < 51:
        print(
            f"warning: SOC grid of {cfg.soc_nodes} nodes is coarse; expect degraded accuracy",
            file=sys.stderr,
        )
    return cfg


def _add_common_run_args(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="plant configuration JSON")
    p.add_argument("--mission", required=True, help="mission CSV")
    p.add_argument("--cost", choices=["emissions", "fuel"], default="emissions")
    p.add_argument("--mu", default="0.5", help="trade-off factor (emissions cost)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="DP worker thread cap")
    p.add_argument("--soc-nodes", type=int, default=201, dest="soc_nodes")
    p.add_argument("--alpha-nodes", type=int, default=41, dest="alpha_nodes")
    p.add_argument("--phi-nodes", type=int, default=41, dest="phi_nodes")
    p.add_argument("--engine-speed-nodes", type=int, default=25, dest="engine_speed_nodes")
    p.add_argument("--soc0", type=float, default=0.6)


def cmd_run(args) -> int:
    plant = architectures.load_plant(args.config)
    profile = _load_mission_arg(args.mission)
    cfg = _dp_config(args)
    mu = float(args.mu) if args.cost == "emissions" else None
    spec = ems.CostSpec.for_plant(plant, args.cost, mu)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = ems.run_architecture(plant, profile, spec, cfg)
    except (MissionInfeasible, AllInfeasible, DeadEnd) as exc:
        print(f"error: mission infeasible for this plant: {exc}", file=sys.stderr)
        return 2

    ems.write_report_json(report, out / "report.json")
    ems.write_report_csv([report], out / "report.csv")
    if report.trajectory is not None:
        ems.write_trajectory_csv(report, profile, out / "trajectory.csv")
        if args.verify:
            ems.verify_trajectory(report, plant, profile, spec, cfg)
            print("verify: open-loop re-simulation matches the rolled-out trajectory")
    else:
        steps = ems.simulate_conventional(plant, profile)
        ems.write_conventional_trajectory_csv(steps, profile, out / "trajectory.csv")
    print(",".join(str(v) for v in ems.report_csv_row(report)))
    return 0


def cmd_sweep(args) -> int:
    plant = architectures.load_plant(args.config)
    profile = _load_mission_arg(args.mission)
    cfg = _dp_config(args)
    mus = [float(s) for s in str(args.mu).split(",") if s.strip() != ""]
    if not mus:
        raise InvalidArgument("empty mu list")
    for mu in mus:
        if not (0.0 <= mu <= 1.0):
            raise InvalidArgument(f"mu={mu} outside [0, 1]")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = 0
    for mu in mus:
        spec = ems.CostSpec.for_plant(plant, "emissions", mu)
        try:
            report = ems.run_architecture(plant, profile, spec, cfg)
            rows.append((mu, report, None))
        except (MissionInfeasible, AllInfeasible, DeadEnd) as exc:
            failures += 1
            rows.append((mu, None, str(exc)))
            log.error("sweep mu=%s failed: %s", mu, exc)

    import csv as _csv

    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(ems.CSV_HEADER + ["error"])
        for mu, report, err in rows:
            if report is None:
                writer.writerow(["", "emissions", repr(mu), "", "", "", "", err])
            else:
                writer.writerow(ems.report_csv_row(report) + [""])
    with open(out / "sweep_plot.csv", "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["mu", "nox_gph", "hc_gph"])
        for mu, report, _ in rows:
            if report is not None:
                writer.writerow([repr(mu), repr(report.nox_gph), repr(report.hc_gph)])
    for mu, report, err in rows:
        if report is not None:
            print(",".join(str(v) for v in ems.report_csv_row(report)))
        else:
            print(f"mu={mu}: FAILED ({err})")
    return 3 if failures else 0


def cmd_genmaps(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    if args.kind == "engine":
        mapset = maps.generate_engine_maps(
            displacement_l=float(spec["displacement_l"]),
            rated_power=float(spec["rated_power_kw"]) * 1e3,
            omega_rated=float(spec["rated_speed_rpm"]) * _RPM,
            torque_peak=float(spec["peak_torque_nm"]),
            omega_torque_peak=float(spec["peak_torque_speed_rpm"]) * _RPM,
            omega_idle=float(spec["idle_speed_rpm"]) * _RPM,
        )
        maps.save_maps(mapset, args.out)
        rated_w = maps.envelope_max_power(mapset)
        w_rated = mapset.omega_max
        bsfc = maps.bsfc_at(mapset, w_rated, mapset.rated_power / w_rated)
        print(f"engine maps written to {args.out}")
        print(f"rated power: {rated_w / 1e3:.1f} kW")
        print(f"peak torque: {mapset.torque_max.values.max():.0f} N m")
        print(f"BSFC at rated point: {bsfc:.1f} g/kWh")
    else:
        mapset = maps.generate_em_map(
            rated_power=float(spec["rated_power_kw"]) * 1e3,
            omega_max=float(spec["max_speed_rads"]),
            omega_base=float(spec["base_speed_rads"]),
        )
        maps.save_maps(mapset, args.out)
        print(f"e-machine map written to {args.out}")
        print(f"rated power: {mapset.rated_power / 1e3:.1f} kW")
        print(f"peak efficiency: {mapset.efficiency.values.max():.3f}")
    return 0


def cmd_optratio(args) -> int:
    profile = _load_mission_arg(args.mission)
    if args.em_map:
        mapset = maps.load_maps(args.em_map)
        if not isinstance(mapset, maps.EmMapSet):
            raise InvalidArgument(f"{args.em_map} is not an e-machine map file")
    else:
        mapset = maps.generate_em_map(147e3, 320.0, 157.0)
    motor = architectures.EMachine(mapset, inertia=args.motor_inertia)
    ratios = np.arange(args.ratio_min, args.ratio_max + 1e-9, args.ratio_step)
    result = architectures.optimize_transmission_ratio(profile, motor, ratios)
    print("ratio,mean_efficiency,feasible")
    for tau, eff, ok in result.table:
        print(f"{tau:.3f},{'' if eff is None else f'{eff:.6f}'},{int(ok)}")
    print(f"best ratio: {result.best_ratio:.3f} (mean efficiency {result.best_efficiency:.4f})")
    return 0


def cmd_synthmission(args) -> int:
    profile = mission.synthesize_demo_mission(seed=args.seed)
    mission.save_mission(profile, args.out)
    st = mission.mission_stats(profile)
    print(f"mission written to {args.out}: {len(profile)} samples at {profile.dt} s")
    print(f"mean power {st.mean_power / 1e3:.1f} kW, max {st.max_power / 1e3:.1f} kW")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hvo",
        description="Hybrid vessel powertrain simulation and DP energy management",
    )
    parser.add_argument("--version", action="version", version=f"hvo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate/optimize one plant over a mission")
    _add_common_run_args(p)
    p.add_argument("--verify", action="store_true",
                   help="re-simulate the optimal controls open loop and check consistency")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="emissions trade-off sweep over mu values")
    _add_common_run_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("genmaps", help="generate engine or e-machine maps")
    p.add_argument("--kind", choices=["engine", "em"], default="engine")
    p.add_argument("--spec", required=True, help="JSON map specification")
    p.add_argument("--out", required=True, help="output map JSON path")
    p.set_defaults(func=cmd_genmaps)

    p = sub.add_parser("optratio", help="transmission ratio sweep for motor efficiency")
    p.add_argument("--mission", required=True)
    p.add_argument("--em-map", default=None, help="e-machine map JSON (default: bundled motor)")
    p.add_argument("--ratio-min", type=float, default=3.5)
    p.add_argument("--ratio-max", type=float, default=5.0)
    p.add_argument("--ratio-step", type=float, default=0.1)
    p.add_argument("--motor-inertia", type=float, default=0.45)
    p.set_defaults(func=cmd_optratio)

    p = sub.add_parser("synthmission", help="write the synthetic demo mission CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synthmission)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NoFeasibleRatio,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ValidationError, InvalidArgument, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except HvoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
