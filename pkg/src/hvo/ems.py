"""Cost functions and experiment drivers for the energy management study.

The running cost is either an emissions trade-off
``mu * nox/nox_max + (1 - mu) * hc/hc_max`` or normalized fuel alone; the
normalizers are the engine map maxima of the plant under study. Experiments
wrap the DP solver: single runs, trade-off factor sweeps, and the
three-architecture comparison.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _fastdp, dp
from .architectures import (
    ConventionalPlant,
    ParallelPlant,
    SeriesPlant,
    architecture_of,
    conventional_step,
    make_parallel_evaluator,
    make_series_evaluator,
)
from .components import StepResult
from .errors import InvalidArgument, MissionInfeasible
from .maps import Grid2D
from .mission import MissionProfile

DIESEL_DENSITY = 0.835  # kg/l


@dataclass(frozen=True)
class CostSpec:
    """Running-cost definition plus the rate normalizers of the plant's engine."""

    kind: str  # "emissions" or "fuel"
    mu: float | None
    nox_max: float  # kg/s
    hc_max: float  # kg/s
    fuel_max: float  # kg/s

    def __post_init__(self):
        if self.kind not in ("emissions", "fuel"):
            raise InvalidArgument(f"unknown cost kind {self.kind!r}")
        if self.kind == "emissions":
            if self.mu is None or not (0.0 <= self.mu <= 1.0):
                raise InvalidArgument("mu must lie in [0, 1] for the emissions cost")
        if min(self.nox_max, self.hc_max, self.fuel_max) <= 0:
            raise InvalidArgument("normalizers must be positive")

    @staticmethod
    def for_plant(plant, kind: str = "emissions", mu: float | None = 0.5) -> "CostSpec":
        m = plant.engine.maps
        return CostSpec(kind=kind, mu=mu if kind == "emissions" else None,
                        nox_max=m.m_dot_nox_max, hc_max=m.m_dot_hc_max, fuel_max=m.m_dot_f_max)


def stage_cost(step: StepResult, spec: CostSpec) -> float:
    """Dimensionless running cost of a feasible step (engine-off steps cost 0)."""
    if spec.kind == "fuel":
        return step.fuel_rate / spec.fuel_max
    return spec.mu * step.nox_rate / spec.nox_max + (1.0 - spec.mu) * step.hc_rate / spec.hc_max


def cost_grid(engine_maps, spec: CostSpec) -> Grid2D:
    """Merged engine-map grid whose bilinear interpolant equals stage_cost."""
    if spec.kind == "fuel":
        values = engine_maps.fuel.values / spec.fuel_max
    else:
        values = (
            spec.mu * engine_maps.nox.values / spec.nox_max
            + (1.0 - spec.mu) * engine_maps.hc.values / spec.hc_max
        )
    return Grid2D(engine_maps.fuel.x_axis, engine_maps.fuel.y_axis, values)


@dataclass(frozen=True)
class DpConfig:
    """Grid sizes and solver knobs; defaults match the study configuration."""

    soc_nodes: int = 201
    alpha_nodes: int = 41
    alpha_min: float = -6.0  # charge-side split bound; engine envelope binds first
    phi_nodes: int = 41
    engine_speed_nodes: int = 25
    soc0: float = 0.6
    terminal_weight: float | None = None  # None: 250 * n_stages * dt
    jobs: int | None = None

    def validated(self) -> "DpConfig":
        for name in ("soc_nodes", "alpha_nodes", "phi_nodes", "engine_speed_nodes"):
            n = getattr(self, name)
            if not (2 <= n <= 10_000):
                raise InvalidArgument(f"{name}={n} outside the sane range [2, 10000]")
        if not (-20.0 <= self.alpha_min <= 0.0):
            raise InvalidArgument("alpha_min must lie in [-20, 0]")
        return self

    def alpha_axis(self) -> np.ndarray:
        """Asymmetric split-coefficient grid: coarse on the charge side
        (alpha < 0, where the engine envelope binds long before the grid
        edge), fine on the assist side [0, 1]."""
        n_pos = max(self.alpha_nodes // 2 + 1, 2)
        n_neg = self.alpha_nodes - n_pos
        if self.alpha_min == 0.0 or n_neg == 0:
            return np.linspace(0.0, 1.0, self.alpha_nodes)
        neg = np.linspace(self.alpha_min, 0.0, n_neg, endpoint=False)
        return np.concatenate([neg, np.linspace(0.0, 1.0, n_pos)])


@dataclass
class RunReport:
    architecture: str
    cost_kind: str
    mu: float | None
    fuel_lph: float
    nox_gph: float
    hc_gph: float
    dsoc: float
    soc0: float | None = None
    duration_s: float = 0.0
    fuel_kg: float = 0.0
    nox_g: float = 0.0
    hc_g: float = 0.0
    objective: float | None = None  # interpolated V at the initial state
    trajectory: dp.Trajectory | None = None


def _totals_from_steps(steps: Sequence[StepResult], dt: float):
    fuel = sum(s.fuel_rate for s in steps) * dt
    nox = sum(s.nox_rate for s in steps) * dt
    hc = sum(s.hc_rate for s in steps) * dt
    return fuel, nox, hc


def simulate_conventional(plant: ConventionalPlant, mission: MissionProfile):
    """Straight quasi-static simulation; no control freedom, no state."""
    n_stages = len(mission) - 1
    omega_dot = mission.omega_dot()
    steps = []
    for k in range(n_stages):
        step = conventional_step(mission.omega[k], mission.torque[k], omega_dot[k], plant)
        if not step.feasible:
            raise MissionInfeasible(f"conventional plant infeasible at stage {k}: {step.reason}")
        steps.append(step)
    return steps


def _hybrid_problem(plant, mission: MissionProfile, spec: CostSpec, cfg: DpConfig):
    if mission.dt is None:
        raise InvalidArgument("DP requires a uniformly sampled mission (resample first)")
    dt = mission.dt
    n_stages = len(mission) - 1
    batt = plant.battery
    soc_axis = np.linspace(batt.soc_min, batt.soc_max, cfg.soc_nodes)
    cgrid = cost_grid(plant.engine.maps, spec)
    weight = cfg.terminal_weight if cfg.terminal_weight is not None else 250.0 * n_stages * dt
    soc0 = cfg.soc0

    def terminal(state):
        return dp.terminal_soc_penalty(state[0], soc0, weight)

    def cost_fn(step):
        return stage_cost(step, spec)

    if isinstance(plant, ParallelPlant):
        alpha_axis = cfg.alpha_axis()
        evaluate, detail = make_parallel_evaluator(
            plant, mission, cost_fn, dt, window_barrier=dp.WINDOW_BARRIER
        )
        backward, eval_controls = _fastdp.parallel_backend(plant, mission, soc_axis, alpha_axis, cgrid, dt)
        return dp.DpProblem(
            state_axes=(soc_axis,),
            control_axes=(alpha_axis,),
            n_stages=n_stages,
            evaluate=evaluate,
            terminal_cost=terminal,
            evaluate_controls=eval_controls,
            backward_stage=backward,
            detail=detail,
        ), (soc0,)
    if isinstance(plant, SeriesPlant):
        phi_axis = np.linspace(-1.0, 1.0, cfg.phi_nodes)
        m = plant.engine.maps
        omega_axis = np.concatenate(
            [[0.0], np.linspace(m.omega_idle, m.omega_max, cfg.engine_speed_nodes - 1)]
        )
        evaluate, detail = make_series_evaluator(
            plant, mission, cost_fn, dt, phi_off=float(phi_axis[0]),
            window_barrier=dp.WINDOW_BARRIER,
        )
        backward, eval_controls = _fastdp.series_backend(
            plant, mission, soc_axis, phi_axis, omega_axis, cgrid, dt
        )
        return dp.DpProblem(
            state_axes=(soc_axis, omega_axis),
            control_axes=(phi_axis, omega_axis),
            n_stages=n_stages,
            evaluate=evaluate,
            terminal_cost=terminal,
            evaluate_controls=eval_controls,
            backward_stage=backward,
            detail=detail,
        ), (soc0, 0.0)
    raise InvalidArgument(f"no DP problem for plant type {type(plant).__name__}")


def run_architecture(plant, mission: MissionProfile, spec: CostSpec, cfg: DpConfig = DpConfig()) -> RunReport:
    """Simulate (conventional) or optimize (hybrids) one plant over a mission."""
    cfg = cfg.validated()
    arch = architecture_of(plant)
    dt = mission.dt
    if dt is None:
        raise InvalidArgument("mission must be uniformly sampled")
    n_stages = len(mission) - 1
    hours = n_stages * dt / 3600.0

    if isinstance(plant, ConventionalPlant):
        steps = simulate_conventional(plant, mission)
        fuel, nox, hc = _totals_from_steps(steps, dt)
        return RunReport(
            architecture=arch,
            cost_kind=spec.kind,
            mu=spec.mu,
            fuel_lph=fuel / DIESEL_DENSITY / hours,
            nox_gph=nox * 1e3 / hours,
            hc_gph=hc * 1e3 / hours,
            dsoc=0.0,
            soc0=None,
            duration_s=n_stages * dt,
            fuel_kg=fuel,
            nox_g=nox * 1e3,
            hc_g=hc * 1e3,
        )

    _fastdp.set_jobs(cfg.jobs)
    problem, x0 = _hybrid_problem(plant, mission, spec, cfg)
    solution = dp.solve_backward(problem)
    trajectory = dp.rollout(problem, solution, x0)
    batt = plant.battery
    soc_path = trajectory.states[:, 0]
    if soc_path.min() < batt.soc_min - 1e-9 or soc_path.max() > batt.soc_max + 1e-9:
        raise MissionInfeasible(
            f"optimal trajectory left the SOC window [{batt.soc_min}, {batt.soc_max}]"
        )
    fuel, nox, hc = _totals_from_steps(trajectory.step_results, dt)
    dsoc = float(trajectory.states[-1, 0] - cfg.soc0)
    objective = dp.interp_value(solution.value[0], problem.state_axes, x0)
    return RunReport(
        architecture=arch,
        cost_kind=spec.kind,
        mu=spec.mu,
        fuel_lph=fuel / DIESEL_DENSITY / hours,
        nox_gph=nox * 1e3 / hours,
        hc_gph=hc * 1e3 / hours,
        dsoc=dsoc,
        soc0=cfg.soc0,
        duration_s=n_stages * dt,
        fuel_kg=fuel,
        nox_g=nox * 1e3,
        hc_g=hc * 1e3,
        objective=float(objective),
        trajectory=trajectory,
    )


def mu_sweep(plant, mission: MissionProfile, mus: Sequence[float], cfg: DpConfig = DpConfig()):
    """Independent emissions-cost runs for each trade-off factor, input order."""
    if len(mus) == 0:
        raise InvalidArgument("mu list must not be empty")
    reports = []
    for mu in mus:
        spec = CostSpec.for_plant(plant, "emissions", float(mu))
        reports.append(run_architecture(plant, mission, spec, cfg))
    return reports


def compare_architectures(plants: dict, mission: MissionProfile, kind: str = "emissions",
                          mu: float | None = 0.5, cfg: DpConfig = DpConfig()):
    """Run every plant under one cost definition; returns reports in input order."""
    reports = []
    for name, plant in plants.items():
        spec = CostSpec.for_plant(plant, kind, mu)
        report = run_architecture(plant, mission, spec, cfg)
        report.architecture = name
        reports.append(report)
    return reports


def format_comparison(reports) -> str:
    lines = [f"{'architecture':<14} {'fuel l/h':>9} {'NOx g/h':>9} {'HC g/h':>8} {'dSOC':>8}"]
    for r in reports:
        lines.append(
            f"{r.architecture:<14} {r.fuel_lph:>9.2f} {r.nox_gph:>9.1f} {r.hc_gph:>8.2f} {r.dsoc:>8.4f}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Serialization

CSV_HEADER = ["arch", "cost_kind", "mu", "fuel_lph", "nox_gph", "hc_gph", "dsoc"]


def report_csv_row(report: RunReport):
    return [
        report.architecture,
        report.cost_kind,
        "" if report.mu is None else repr(float(report.mu)),
        repr(float(report.fuel_lph)),
        repr(float(report.nox_gph)),
        repr(float(report.hc_gph)),
        repr(float(report.dsoc)),
    ]


def write_report_csv(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in reports:
            writer.writerow(report_csv_row(r))


def load_report_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise InvalidArgument(f"{path}: unexpected report header {header}")
        rows = []
        for row in reader:
            rows.append(
                {
                    "arch": row[0],
                    "cost_kind": row[1],
                    "mu": None if row[2] == "" else float(row[2]),
                    "fuel_lph": float(row[3]),
                    "nox_gph": float(row[4]),
                    "hc_gph": float(row[5]),
                    "dsoc": float(row[6]),
                }
            )
    return rows


def report_to_dict(report: RunReport) -> dict:
    return {
        "architecture": report.architecture,
        "cost_kind": report.cost_kind,
        "mu": report.mu,
        "fuel_lph": report.fuel_lph,
        "nox_gph": report.nox_gph,
        "hc_gph": report.hc_gph,
        "dsoc": report.dsoc,
        "soc0": report.soc0,
        "duration_s": report.duration_s,
        "fuel_kg": report.fuel_kg,
        "nox_g": report.nox_g,
        "hc_g": report.hc_g,
        "objective": report.objective,
    }


def write_report_json(report: RunReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_trajectory_csv(report: RunReport, mission: MissionProfile, path) -> None:
    """Per-stage trajectory dump; columns depend on the architecture."""
    arch = report.architecture
    traj = report.trajectory
    if traj is None:
        raise InvalidArgument("no trajectory on this report; use the conventional writer")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        control_name = {"parallel": "alpha", "series": "phi"}.get(arch, "u")
        writer.writerow(["k", "t", "soc", "omega_eng", control_name,
                         "fuel_rate", "nox_rate", "hc_rate", "P_b"])
        for k, step in enumerate(traj.step_results):
            writer.writerow([
                k,
                repr(float(mission.t[k])),
                repr(float(traj.states[k, 0])),
                repr(float(step.engine_point[0])),
                repr(float(traj.controls[k, 0])),
                repr(float(step.fuel_rate)),
                repr(float(step.nox_rate)),
                repr(float(step.hc_rate)),
                repr(float(step.battery_power)),
            ])


def write_conventional_trajectory_csv(steps, mission: MissionProfile, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "t", "soc", "omega_eng", "fuel_rate", "nox_rate", "hc_rate", "P_b"])
        for k, step in enumerate(steps):
            writer.writerow([
                k,
                repr(float(mission.t[k])),
                "",
                repr(float(step.engine_point[0])),
                repr(float(step.fuel_rate)),
                repr(float(step.nox_rate)),
                repr(float(step.hc_rate)),
                "",
            ])


def load_trajectory_csv(path):
    """Read a trajectory CSV back into column arrays (blank fields -> nan)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {name: [] for name in header}
        for row in reader:
            for name, cell in zip(header, row):
                cols[name].append(np.nan if cell == "" else float(cell))
    return {name: np.asarray(vals) for name, vals in cols.items()}


def verify_trajectory(report: RunReport, plant, mission: MissionProfile, spec: CostSpec,
                      cfg: DpConfig, atol: float = 1e-9) -> bool:
    """Re-simulate the rolled-out control sequence open loop and compare states."""
    traj = report.trajectory
    if traj is None:
        raise InvalidArgument("nothing to verify for a conventional run")
    dt = mission.dt
    if isinstance(plant, ParallelPlant):
        _, detail = make_parallel_evaluator(plant, mission, lambda s: 0.0, dt)
    else:
        _, detail = make_series_evaluator(plant, mission, lambda s: 0.0, dt, phi_off=-1.0)
    state = tuple(traj.states[0])
    for k in range(traj.controls.shape[0]):
        step = detail(k, state, tuple(traj.controls[k]))
        if not step.feasible:
            raise MissionInfeasible(f"verification step {k} infeasible: {step.reason}")
        logged = traj.step_results[k]
        if abs(step.fuel_rate - logged.fuel_rate) > atol or abs(step.soc_next - (
                traj.states[k + 1, 0])) > atol:
            raise MissionInfeasible(f"verification mismatch at stage {k}")
        if isinstance(plant, SeriesPlant):
            state = (step.soc_next, traj.states[k + 1, 1])
        else:
            state = (step.soc_next,)
    return True
