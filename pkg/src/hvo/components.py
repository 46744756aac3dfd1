"""Quasi-static component models.

Every operation is a pure function returning a small result object with an
explicit feasibility flag; infeasibility is a value, never an exception, so
the DP solver can sweep millions of candidate operating points.

Sign conventions: battery current is positive when discharging and decreases
SOC; electrical machine power is positive when drawing from the DC bus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InvalidArgument
from .maps import EmMapSet, EngineMapSet, interp2

# LiFePO4-style cell characteristics over SOC, interpolated with a
# shape-preserving (monotone) cubic spline and scaled to pack level.
_CELL_SOC = np.array([0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
_CELL_VOC = np.array([2.80, 3.05, 3.18, 3.24, 3.27, 3.29, 3.30, 3.32, 3.34, 3.38, 3.45])  # V
_CELL_RES = np.array([5.2, 3.8, 3.1, 2.75, 2.6, 2.5, 2.5, 2.55, 2.65, 2.8, 3.1]) * 1e-3  # ohm


@dataclass(frozen=True)
class Transmission:
    tau: float  # speed ratio, > 0
    eta: float  # efficiency in (0, 1]
    inertia: float  # kg*m^2, referred to the input shaft

    def __post_init__(self):
        if self.tau <= 0 or not (0 < self.eta <= 1) or self.inertia < 0:
            raise InvalidArgument("bad transmission parameters")


@dataclass(frozen=True)
class TorqueCoupling:
    tau: float  # speed ratio, > 0

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidArgument("torque coupling ratio must be positive")


@dataclass(frozen=True)
class Engine:
    maps: EngineMapSet
    inertia: float  # kg*m^2

    def __post_init__(self):
        if self.inertia < 0:
            raise InvalidArgument("engine inertia must be nonnegative")


@dataclass(frozen=True)
class EMachine:
    maps: EmMapSet
    inertia: float  # kg*m^2

    def __post_init__(self):
        if self.inertia < 0:
            raise InvalidArgument("e-machine inertia must be nonnegative")


@dataclass(frozen=True)
class Generator:
    """Generator characterized over (speed, electrical torque = P_el/omega)."""

    maps: EmMapSet
    inertia: float  # kg*m^2

    def __post_init__(self):
        if self.inertia < 0:
            raise InvalidArgument("generator inertia must be nonnegative")


class BatteryPack:
    """Equivalent-series-resistance battery with SOC-dependent v_oc and R_eq."""

    def __init__(
        self,
        energy_kwh: float = 70.0,
        series_cells: int = 109,
        cell_capacity_ah: float = 35.0,
        discharge_c_rate: float = 3.0,
        charge_c_rate: float = 2.0,
        eta_c_discharge: float = 1.00,
        eta_c_charge: float = 0.98,
        soc_min: float = 0.4,
        soc_max: float = 0.8,
    ):
        if min(energy_kwh, series_cells, cell_capacity_ah, discharge_c_rate, charge_c_rate) <= 0:
            raise InvalidArgument("battery sizing parameters must be positive")
        if not (0 <= soc_min < soc_max <= 1):
            raise InvalidArgument("bad SOC window")
        self.energy_kwh = float(energy_kwh)
        self.series_cells = int(series_cells)
        v_nominal = series_cells * 3.2  # V, LiFePO4 nominal
        capacity_ah = energy_kwh * 1e3 / v_nominal
        self.capacity_as = capacity_ah * 3600.0  # A*s
        n_parallel = capacity_ah / cell_capacity_ah  # fractional scaling is fine
        self._voc = PchipInterpolator(_CELL_SOC, _CELL_VOC * series_cells)
        self._req = PchipInterpolator(_CELL_SOC, _CELL_RES * series_cells / n_parallel)
        self.i_lim_dis = discharge_c_rate * capacity_ah  # A, positive
        self.i_lim_ch = -charge_c_rate * capacity_ah  # A, negative
        self.eta_c_discharge = float(eta_c_discharge)
        self.eta_c_charge = float(eta_c_charge)
        self.soc_min = float(soc_min)
        self.soc_max = float(soc_max)

    def v_oc(self, soc):
        return self._voc(soc)

    def r_eq(self, soc):
        return self._req(soc)

    def with_window(self, soc_min: float, soc_max: float) -> "BatteryPack":
        """Copy of this pack with a different SOC window (curves shared)."""
        clone = BatteryPack.__new__(BatteryPack)
        clone.__dict__.update(self.__dict__)
        clone.soc_min = float(soc_min)
        clone.soc_max = float(soc_max)
        return clone


# ---------------------------------------------------------------------------
# Result records


@dataclass(frozen=True)
class EngineRates:
    feasible: bool
    reason: str | None
    fuel: float = 0.0  # kg/s
    nox: float = 0.0
    hc: float = 0.0


@dataclass(frozen=True)
class EmResult:
    feasible: bool
    reason: str | None
    p_el: float = 0.0  # W, positive drawing from the bus
    eta: float = 0.0


@dataclass(frozen=True)
class BatteryResult:
    feasible: bool
    reason: str | None
    i_b: float = 0.0  # A, positive discharging
    p_b: float = 0.0  # W, terminal power delivered to the bus
    soc_next: float = 0.0


@dataclass(frozen=True)
class GenResult:
    feasible: bool
    reason: str | None
    torque: float = 0.0  # N*m, mechanical
    eta: float = 0.0


@dataclass(frozen=True)
class StepResult:
    """Outcome of one quasi-static plant evaluation over an interval."""

    feasible: bool
    reason: str | None = None
    fuel_rate: float = 0.0  # kg/s
    nox_rate: float = 0.0  # kg/s
    hc_rate: float = 0.0  # kg/s
    battery_power: float = 0.0  # W, positive discharging
    battery_current: float = 0.0  # A
    engine_point: tuple = (0.0, 0.0)  # (rad/s, N*m), torque signed as demanded
    em_point: tuple = (0.0, 0.0)  # e-machine or traction motor point
    gen_point: tuple | None = None  # series generator point (rad/s, N*m)
    p_em_el: float = 0.0  # W, machine electrical power
    p_gen_el: float = 0.0  # W, generator electrical output
    soc_next: float | None = None

    @staticmethod
    def infeasible(reason: str) -> "StepResult":
        return StepResult(feasible=False, reason=reason)


# ---------------------------------------------------------------------------
# Operations


def transmission_input(omega_prop, torque_prop, omega_dot_prop, tr: Transmission):
    """Propeller-side load referred to the transmission input shaft.

    The efficiency exponent k = -sgn(T)*sgn(omega) makes losses oppose the
    power flow in both directions; sgn(0) = 0 leaves the factor at 1 for
    zero torque or speed.
    """
    omega_tran = omega_prop * tr.tau
    k = -np.sign(torque_prop) * np.sign(omega_prop)
    torque_tran = (torque_prop / tr.tau) * tr.eta**k + tr.inertia * omega_dot_prop * tr.tau
    return omega_tran, torque_tran


def engine_evaluate(omega, torque, eng: Engine) -> EngineRates:
    """Fuel and emission rates at an engine point, or the violated bound.

    Negative demanded torque is treated as uncredited engine braking: the
    maps are queried at zero torque (idle fuel) and the point stays feasible.
    """
    m = eng.maps
    tol = 1e-9 * m.omega_max
    if omega < m.omega_idle - tol:
        return EngineRates(False, "below_idle_speed")
    if omega > m.omega_max + tol:
        return EngineRates(False, "above_max_speed")
    omega = min(max(omega, m.omega_idle), m.omega_max)
    t_lim = float(m.torque_max(omega))
    if torque > t_lim * (1.0 + 1e-9):
        return EngineRates(False, "above_torque_limit")
    q = min(max(torque, 0.0), t_lim)
    return EngineRates(
        True,
        None,
        fuel=interp2(m.fuel, omega, q),
        nox=interp2(m.nox, omega, q),
        hc=interp2(m.hc, omega, q),
    )


def em_power(omega, torque, em: EMachine) -> EmResult:
    """Electrical power of an e-machine at a mechanical operating point."""
    m = em.maps
    if omega < 0 or omega > m.omega_max * (1.0 + 1e-9):
        return EmResult(False, "above_max_speed")
    sup = float(m.torque_sup(omega))
    inf = float(m.torque_inf(omega))
    tol = 1e-9 * max(abs(sup), 1.0)
    if torque > sup + tol or torque < inf - tol:
        return EmResult(False, "outside_torque_envelope")
    eta = interp2(m.efficiency, omega, min(max(torque, m.efficiency.y_axis[0]), m.efficiency.y_axis[-1]))
    p_mech = torque * omega
    p_el = p_mech / eta if p_mech >= 0 else eta * p_mech
    return EmResult(True, None, p_el=p_el, eta=eta)


def battery_current_from_power(v_oc, r_eq, p_b):
    """Root of v_oc*i - R*i^2 = p_b on the stable branch; None if unreachable."""
    disc = v_oc * v_oc - 4.0 * r_eq * p_b
    if disc < 0:
        return None
    return (v_oc - math.sqrt(disc)) / (2.0 * r_eq)


def _soc_update(i_b, soc, batt: BatteryPack, dt):
    eta = batt.eta_c_discharge if i_b > 0 else batt.eta_c_charge
    return soc - eta * i_b * dt / batt.capacity_as


def battery_from_power(p_b, soc, batt: BatteryPack, dt) -> BatteryResult:
    """Battery current and next SOC for a requested terminal power."""
    v = float(batt.v_oc(soc))
    r = float(batt.r_eq(soc))
    i_b = battery_current_from_power(v, r, p_b)
    if i_b is None:
        return BatteryResult(False, "voltage_limit")
    if i_b > batt.i_lim_dis * (1.0 + 1e-12) or i_b < batt.i_lim_ch * (1.0 + 1e-12):
        return BatteryResult(False, "current_limit")
    soc_next = _soc_update(i_b, soc, batt, dt)
    if not (batt.soc_min - 1e-12 <= soc_next <= batt.soc_max + 1e-12):
        return BatteryResult(False, "soc_window")
    return BatteryResult(True, None, i_b=i_b, p_b=float(p_b), soc_next=soc_next)


def battery_from_current_factor(phi, soc, batt: BatteryPack, dt) -> BatteryResult:
    """Battery response to a normalized current command phi in [-1, 1]."""
    if not (-1.0 - 1e-12 <= phi <= 1.0 + 1e-12):
        raise InvalidArgument(f"current factor {phi!r} outside [-1, 1]")
    i_b = phi * batt.i_lim_dis if phi >= 0 else phi * abs(batt.i_lim_ch)
    v = float(batt.v_oc(soc))
    r = float(batt.r_eq(soc))
    p_b = v * i_b - r * i_b * i_b
    soc_next = _soc_update(i_b, soc, batt, dt)
    if not (batt.soc_min - 1e-12 <= soc_next <= batt.soc_max + 1e-12):
        return BatteryResult(False, "soc_window")
    return BatteryResult(True, None, i_b=i_b, p_b=p_b, soc_next=soc_next)


def generator_evaluate(p_gen_el, omega_gen, gen: Generator) -> GenResult:
    """Mechanical generator torque delivering a requested electrical power.

    The efficiency table is addressed by electrical torque p/omega rather
    than mechanical torque; omega = 0 is only valid at zero power.
    """
    if p_gen_el == 0.0:
        return GenResult(True, None, torque=0.0, eta=1.0)
    if omega_gen <= 0:
        return GenResult(False, "zero_speed_with_power")
    m = gen.maps
    if omega_gen > m.omega_max * (1.0 + 1e-9):
        return GenResult(False, "above_max_speed")
    t_el = p_gen_el / omega_gen
    sup = float(m.torque_sup(omega_gen))
    inf = float(m.torque_inf(omega_gen))
    tol = 1e-9 * max(abs(sup), 1.0)
    if t_el > sup + tol or t_el < inf - tol:
        return GenResult(False, "outside_torque_envelope")
    eta = interp2(m.efficiency, omega_gen, min(max(t_el, m.efficiency.y_axis[0]), m.efficiency.y_axis[-1]))
    if p_gen_el >= 0:
        torque = p_gen_el / (eta * omega_gen)
    else:
        torque = eta * p_gen_el / omega_gen
    return GenResult(True, None, torque=torque, eta=eta)
