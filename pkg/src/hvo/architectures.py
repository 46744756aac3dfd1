"""Powertrain compositions: conventional, parallel hybrid, series hybrid.

Each plant composes immutable component models; each step function is a pure
map from (mission sample, state, control) to a StepResult, which is exactly
the interface the DP solver consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import maps as maps_mod
from .components import (
    BatteryPack,
    EMachine,
    Engine,
    Generator,
    StepResult,
    TorqueCoupling,
    Transmission,
    battery_from_current_factor,
    battery_from_power,
    em_power,
    engine_evaluate,
    generator_evaluate,
    transmission_input,
)
from .errors import InvalidArgument, NoFeasibleRatio, ParseError
from .mission import MissionProfile

_RPM = math.pi / 30.0


@dataclass(frozen=True, eq=False)
class ConventionalPlant:
    transmission: Transmission
    engine: Engine


@dataclass(frozen=True, eq=False)
class ParallelPlant:
    transmission: Transmission
    coupling: TorqueCoupling
    engine: Engine
    emachine: EMachine
    battery: BatteryPack
    aux_load_w: float = 2000.0


@dataclass(frozen=True, eq=False)
class SeriesPlant:
    transmission: Transmission
    coupling: TorqueCoupling
    motor: EMachine
    engine: Engine
    generator: Generator
    battery: BatteryPack
    aux_load_w: float = 2000.0
    engine_off_tol_w: float = 100.0


def conventional_step(omega_prop, torque_prop, omega_dot_prop, plant: ConventionalPlant) -> StepResult:
    """Engine speed and torque follow directly from the propeller load."""
    omega_eng, torque_eng = transmission_input(omega_prop, torque_prop, omega_dot_prop, plant.transmission)
    rates = engine_evaluate(omega_eng, torque_eng, plant.engine)
    if not rates.feasible:
        return StepResult.infeasible(f"engine_{rates.reason}")
    return StepResult(
        feasible=True,
        fuel_rate=rates.fuel,
        nox_rate=rates.nox,
        hc_rate=rates.hc,
        engine_point=(omega_eng, torque_eng),
    )


def parallel_step(omega_prop, torque_prop, omega_dot_prop, soc, alpha, plant: ParallelPlant, dt) -> StepResult:
    """Torque-split step: the e-machine takes alpha of the transmission torque.

    alpha < 0 loads the engine above demand and charges the battery
    (load-point shifting); negative residual engine torque is uncredited
    engine braking, so the reported points always balance exactly.
    """
    if not (-20.0 <= alpha <= 1.0 + 1e-12):
        raise InvalidArgument(f"alpha {alpha!r} outside [-20, 1]")
    tr = plant.transmission
    omega_tran, torque_tran = transmission_input(omega_prop, torque_prop, omega_dot_prop, tr)
    omega_dot_tran = omega_dot_prop * tr.tau

    tau_tc = plant.coupling.tau
    omega_em = omega_tran * tau_tc
    omega_dot_em = omega_dot_tran * tau_tc
    torque_em = alpha * torque_tran / tau_tc + plant.emachine.inertia * omega_dot_em

    omega_eng = omega_tran
    torque_eng = (1.0 - alpha) * torque_tran + plant.engine.inertia * omega_dot_tran

    em = em_power(omega_em, torque_em, plant.emachine)
    if not em.feasible:
        return StepResult.infeasible(f"emachine_{em.reason}")
    rates = engine_evaluate(omega_eng, torque_eng, plant.engine)
    if not rates.feasible:
        return StepResult.infeasible(f"engine_{rates.reason}")
    p_load = em.p_el + plant.aux_load_w
    bat = battery_from_power(p_load, soc, plant.battery, dt)
    if not bat.feasible:
        return StepResult.infeasible(f"battery_{bat.reason}")
    return StepResult(
        feasible=True,
        fuel_rate=rates.fuel,
        nox_rate=rates.nox,
        hc_rate=rates.hc,
        battery_power=bat.p_b,
        battery_current=bat.i_b,
        engine_point=(omega_eng, torque_eng),
        em_point=(omega_em, torque_em),
        p_em_el=em.p_el,
        soc_next=bat.soc_next,
    )


def series_step(omega_prop, torque_prop, omega_dot_prop, state, control, plant: SeriesPlant, dt) -> StepResult:
    """Series step: current factor drives the battery, engine speed is free.

    The gen-set covers whatever the motor and auxiliaries draw beyond the
    battery contribution. With the engine commanded off the battery must
    match the load within the configured tolerance.
    """
    soc, omega_eng_prev = state
    phi, omega_eng = control
    tr = plant.transmission
    omega_tran, torque_tran = transmission_input(omega_prop, torque_prop, omega_dot_prop, tr)
    omega_mot = omega_tran
    torque_mot = torque_tran + plant.motor.inertia * omega_dot_prop * tr.tau

    mot = em_power(omega_mot, torque_mot, plant.motor)
    if not mot.feasible:
        return StepResult.infeasible(f"motor_{mot.reason}")
    p_load = mot.p_el + plant.aux_load_w

    bat = battery_from_current_factor(phi, soc, plant.battery, dt)
    if not bat.feasible:
        return StepResult.infeasible(f"battery_{bat.reason}")
    p_gen_el = p_load - bat.p_b

    if omega_eng == 0.0:
        if abs(p_gen_el) > plant.engine_off_tol_w:
            return StepResult.infeasible("engine_off_power_mismatch")
        return StepResult(
            feasible=True,
            battery_power=bat.p_b,
            battery_current=bat.i_b,
            engine_point=(0.0, 0.0),
            em_point=(omega_mot, torque_mot),
            gen_point=(0.0, 0.0),
            p_em_el=mot.p_el,
            p_gen_el=p_gen_el,
            soc_next=bat.soc_next,
        )

    tau_tc = plant.coupling.tau
    omega_gen = omega_eng * tau_tc
    gen = generator_evaluate(p_gen_el, omega_gen, plant.generator)
    if not gen.feasible:
        return StepResult.infeasible(f"generator_{gen.reason}")

    omega_dot_eng = (omega_eng - omega_eng_prev) / dt
    omega_dot_gen = omega_dot_eng * tau_tc
    # The generator spins tau_tc times faster than the engine, so its torque
    # and inertia refer to the engine shaft multiplied by tau_tc (power
    # conservation across the lossless coupling).
    torque_eng = tau_tc * (gen.torque + plant.generator.inertia * omega_dot_gen) \
        + plant.engine.inertia * omega_dot_eng
    rates = engine_evaluate(omega_eng, torque_eng, plant.engine)
    if not rates.feasible:
        return StepResult.infeasible(f"engine_{rates.reason}")
    return StepResult(
        feasible=True,
        fuel_rate=rates.fuel,
        nox_rate=rates.nox,
        hc_rate=rates.hc,
        battery_power=bat.p_b,
        battery_current=bat.i_b,
        engine_point=(omega_eng, torque_eng),
        em_point=(omega_mot, torque_mot),
        gen_point=(omega_gen, gen.torque),
        p_em_el=mot.p_el,
        p_gen_el=p_gen_el,
        soc_next=bat.soc_next,
    )


# ---------------------------------------------------------------------------
# Scalar DP evaluator factories (the contract the solver consumes)


def _window_relaxed(plant):
    """Plant copy whose battery accepts any SOC; the DP applies the window
    as a steep cost barrier instead of a hard cut (see dp.WINDOW_BARRIER)."""
    from dataclasses import replace

    return replace(plant, battery=plant.battery.with_window(0.0, 1.0))


def make_parallel_evaluator(plant: ParallelPlant, mission: MissionProfile, cost_fn, dt,
                            window_barrier: float = 0.0):
    """Scalar stage evaluator for the parallel plant.

    Returns (evaluate, detail); evaluate maps (k, (soc,), (alpha,)) to
    (next_state, stage_cost, feasible) with stage cost = cost_fn(step) * dt.
    With window_barrier > 0 the battery SOC window becomes a soft barrier:
    violating transitions are clamped to the window and surcharged.
    """
    omega = mission.omega
    torque = mission.torque
    omega_dot = mission.omega_dot()
    soc_lo, soc_hi = plant.battery.soc_min, plant.battery.soc_max
    sim_plant = _window_relaxed(plant) if window_barrier > 0 else plant

    def detail(k, state, control) -> StepResult:
        return parallel_step(omega[k], torque[k], omega_dot[k], state[0], control[0], sim_plant, dt)

    def evaluate(k, state, control):
        step = detail(k, state, control)
        if not step.feasible:
            return None, math.inf, False
        soc_next = step.soc_next
        cost = cost_fn(step) * dt
        if window_barrier > 0:
            cost += window_barrier * (max(0.0, soc_lo - soc_next) + max(0.0, soc_next - soc_hi))
            soc_next = min(max(soc_next, soc_lo), soc_hi)
        return (soc_next,), cost, True

    return evaluate, detail


def make_series_evaluator(plant: SeriesPlant, mission: MissionProfile, cost_fn, dt,
                          phi_off=-1.0, window_barrier: float = 0.0):
    """Scalar stage evaluator for the series plant.

    The control tuple is (phi, omega_eng). The single engine-off control is
    encoded as (phi_off, 0): the battery command is then replaced by the
    exact load-matching current so the gen-set balance closes within the
    engine-off tolerance; any other (phi, 0) pair is infeasible. With
    window_barrier > 0 the SOC window becomes a soft cost barrier.
    """
    omega = mission.omega
    torque = mission.torque
    omega_dot = mission.omega_dot()
    soc_lo, soc_hi = plant.battery.soc_min, plant.battery.soc_max
    sim_plant = _window_relaxed(plant) if window_barrier > 0 else plant
    batt = sim_plant.battery

    def _control_for(k, state, control):
        phi, omega_eng = control
        if omega_eng != 0.0:
            return control
        if phi != phi_off:
            return None
        tr = plant.transmission
        omega_tran, torque_tran = transmission_input(omega[k], torque[k], omega_dot[k], tr)
        torque_mot = torque_tran + plant.motor.inertia * omega_dot[k] * tr.tau
        mot = em_power(omega_tran, torque_mot, plant.motor)
        if not mot.feasible:
            return None
        bat = battery_from_power(mot.p_el + plant.aux_load_w, state[0], batt, dt)
        if not bat.feasible:
            return None
        phi_match = bat.i_b / batt.i_lim_dis if bat.i_b >= 0 else bat.i_b / abs(batt.i_lim_ch)
        if not (-1.0 <= phi_match <= 1.0):
            return None
        return (phi_match, 0.0)

    def detail(k, state, control) -> StepResult:
        ctrl = _control_for(k, state, control)
        if ctrl is None:
            return StepResult.infeasible("engine_off_unavailable")
        return series_step(omega[k], torque[k], omega_dot[k], state, ctrl, sim_plant, dt)

    def evaluate(k, state, control):
        step = detail(k, state, control)
        if not step.feasible:
            return None, math.inf, False
        soc_next = step.soc_next
        cost = cost_fn(step) * dt
        if window_barrier > 0:
            cost += window_barrier * (max(0.0, soc_lo - soc_next) + max(0.0, soc_next - soc_hi))
            soc_next = min(max(soc_next, soc_lo), soc_hi)
        return (soc_next, control[1]), cost, True

    return evaluate, detail


# ---------------------------------------------------------------------------
# Transmission ratio optimization (series motor matching)


@dataclass(frozen=True)
class RatioSweepResult:
    best_ratio: float
    best_efficiency: float
    table: list  # (ratio, mean_efficiency or None, feasible)


def optimize_transmission_ratio(
    mission: MissionProfile,
    motor: EMachine,
    ratios,
    eta_tran: float = 0.97,
    inertia_tran: float = 0.45,
) -> RatioSweepResult:
    """Pick the transmission ratio maximizing energy-weighted motor efficiency.

    Every mission sample is mapped to a motor operating point; ratios that
    push any sample outside the motor envelope are rejected outright.
    """
    ratios = [float(r) for r in ratios]
    if not ratios or any(r <= 0 for r in ratios):
        raise InvalidArgument("candidate ratios must be positive")
    if len(mission) == 0:
        raise InvalidArgument("empty mission")

    omega_dot = mission.omega_dot()
    table = []
    best = None
    m = motor.maps
    for tau in ratios:
        tr = Transmission(tau, eta_tran, inertia_tran)
        k = -np.sign(mission.torque) * np.sign(mission.omega)
        omega_mot = mission.omega * tau
        torque_mot = (mission.torque / tau) * eta_tran**k \
            + (inertia_tran + motor.inertia) * omega_dot * tau
        feasible = (
            np.all(omega_mot <= m.omega_max * (1.0 + 1e-9))
            and np.all(torque_mot <= m.torque_sup(omega_mot) + 1e-9)
            and np.all(torque_mot >= m.torque_inf(omega_mot) - 1e-9)
        )
        if not feasible:
            table.append((tau, None, False))
            continue
        t_query = np.clip(torque_mot, m.efficiency.y_axis[0], m.efficiency.y_axis[-1])
        eta = maps_mod.interp2_many(m.efficiency, omega_mot, t_query)
        weights = np.abs(omega_mot * torque_mot)
        total = weights.sum()
        mean_eff = float((weights * eta).sum() / total) if total > 0 else float(eta.mean())
        table.append((tau, mean_eff, True))
        if best is None or mean_eff > best[1]:
            best = (tau, mean_eff)
    if best is None:
        raise NoFeasibleRatio("no candidate ratio keeps the motor inside its envelope")
    return RatioSweepResult(best_ratio=best[0], best_efficiency=best[1], table=table)


# ---------------------------------------------------------------------------
# Plant configuration files


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ParseError(f"plant config: missing '{key}' in {where}")
    return cfg[key]


def _build_transmission(cfg: dict) -> Transmission:
    return Transmission(
        tau=float(_require(cfg, "speed_ratio", "transmission")),
        eta=float(cfg.get("efficiency", 0.97)),
        inertia=float(cfg.get("inertia_kgm2", 0.0)),
    )


def _build_engine(cfg: dict) -> Engine:
    ref_power = float(cfg.get("reference_rated_power_kw", cfg["rated_power_kw"])) * 1e3
    mapset = maps_mod.generate_engine_maps(
        displacement_l=float(_require(cfg, "displacement_l", "engine")),
        rated_power=ref_power,
        omega_rated=float(_require(cfg, "rated_speed_rpm", "engine")) * _RPM,
        torque_peak=float(_require(cfg, "peak_torque_nm", "engine")),
        omega_torque_peak=float(_require(cfg, "peak_torque_speed_rpm", "engine")) * _RPM,
        omega_idle=float(_require(cfg, "idle_speed_rpm", "engine")) * _RPM,
    )
    rated = float(_require(cfg, "rated_power_kw", "engine")) * 1e3
    if rated != ref_power:
        mapset = maps_mod.scale_engine_maps(mapset, rated)
    return Engine(mapset, inertia=float(cfg.get("inertia_kgm2", 0.0)))


def _build_em_mapset(cfg: dict, where: str):
    return maps_mod.generate_em_map(
        rated_power=float(_require(cfg, "rated_power_kw", where)) * 1e3,
        omega_max=float(_require(cfg, "max_speed_rads", where)),
        omega_base=float(_require(cfg, "base_speed_rads", where)),
    )


def _build_battery(cfg: dict) -> BatteryPack:
    return BatteryPack(
        energy_kwh=float(cfg.get("energy_kwh", 70.0)),
        series_cells=int(cfg.get("series_cells", 109)),
        cell_capacity_ah=float(cfg.get("cell_capacity_ah", 35.0)),
        discharge_c_rate=float(cfg.get("discharge_c_rate", 3.0)),
        charge_c_rate=float(cfg.get("charge_c_rate", 2.0)),
        eta_c_discharge=float(cfg.get("eta_c_discharge", 1.0)),
        eta_c_charge=float(cfg.get("eta_c_charge", 0.98)),
        soc_min=float(cfg.get("soc_min", 0.4)),
        soc_max=float(cfg.get("soc_max", 0.8)),
    )


def build_plant(cfg: dict):
    """Build a plant from a parsed configuration dictionary."""
    arch = _require(cfg, "architecture", "top level")
    if arch == "conventional":
        return ConventionalPlant(
            transmission=_build_transmission(_require(cfg, "transmission", "config")),
            engine=_build_engine(_require(cfg, "engine", "config")),
        )
    if arch == "parallel":
        em_cfg = _require(cfg, "emachine", "config")
        return ParallelPlant(
            transmission=_build_transmission(_require(cfg, "transmission", "config")),
            coupling=TorqueCoupling(float(_require(_require(cfg, "torque_coupling", "config"), "speed_ratio", "torque_coupling"))),
            engine=_build_engine(_require(cfg, "engine", "config")),
            emachine=EMachine(_build_em_mapset(em_cfg, "emachine"), inertia=float(em_cfg.get("inertia_kgm2", 0.0))),
            battery=_build_battery(cfg.get("battery", {})),
            aux_load_w=float(cfg.get("aux_load_kw", 2.0)) * 1e3,
        )
    if arch == "series":
        mot_cfg = _require(cfg, "motor", "config")
        gen_cfg = _require(cfg, "generator", "config")
        return SeriesPlant(
            transmission=_build_transmission(_require(cfg, "transmission", "config")),
            coupling=TorqueCoupling(float(_require(_require(cfg, "torque_coupling", "config"), "speed_ratio", "torque_coupling"))),
            motor=EMachine(_build_em_mapset(mot_cfg, "motor"), inertia=float(mot_cfg.get("inertia_kgm2", 0.0))),
            engine=_build_engine(_require(cfg, "engine", "config")),
            generator=Generator(_build_em_mapset(gen_cfg, "generator"), inertia=float(gen_cfg.get("inertia_kgm2", 0.0))),
            battery=_build_battery(cfg.get("battery", {})),
            aux_load_w=float(cfg.get("aux_load_kw", 2.0)) * 1e3,
            engine_off_tol_w=float(cfg.get("engine_off_power_tol_w", 100.0)),
        )
    raise ParseError(f"unknown architecture {arch!r}")


def load_plant(path):
    """Load and build a plant from a JSON configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot parse plant config {path}: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"cannot read plant config {path}: {exc}") from exc
    return build_plant(cfg)


def architecture_of(plant) -> str:
    return {
        ConventionalPlant: "conventional",
        ParallelPlant: "parallel",
        SeriesPlant: "series",
    }[type(plant)]
