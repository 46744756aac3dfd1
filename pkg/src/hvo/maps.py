"""Gridded engine and electric-machine characteristic maps.

The engine maps are synthetic: a Willans-line fuel model plus parametric
specific-emission shapes, sized to match a target envelope (rated power,
peak torque, idle/rated speeds). They stand in for proprietary test-bench
maps while preserving the qualitative structure an energy-management
optimizer exploits: fuel monotone in torque, a NOx hot zone at high load
and mid-high speed, an HC hot zone at low load and low speed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, OutOfRange, ParseError

LHV_DIESEL = 42.5e6  # J/kg, lower heating value
_SEC_PER_KWH = 3.6e6  # J per kWh

# Willans-line calibration: indicated efficiency factor and friction losses.
_EFF_PEAK = 0.468  # indicated efficiency factor at mid speed
_EFF_DROOP = 0.035  # quadratic droop toward the speed range ends
_FMEP_A = 0.45e5  # Pa, speed-independent friction mean effective pressure
_FMEP_B = 0.85e5  # Pa, quadratic FMEP coefficient at rated speed

# Specific-emission shape parameters, g/kWh over (speed fraction, load fraction).
_NOX_BASE, _NOX_AMP = 1.2, 8.3
_NOX_U0, _NOX_V0, _NOX_SU, _NOX_SV = 0.70, 0.90, 0.24, 0.26
_HC_BASE, _HC_AMP = 0.22, 4.6
_HC_U0, _HC_V0, _HC_SU, _HC_SV = 0.10, 0.08, 0.22, 0.28


@dataclass(frozen=True)
class Curve1D:
    """Piecewise-linear curve y(x) on strictly ascending breakpoints."""

    x_axis: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_axis, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or y.shape != x.shape:
            raise InvalidArgument("curve axis/values shape mismatch")
        if x.size < 2 or np.any(np.diff(x) <= 0):
            raise InvalidArgument("curve axis must be strictly ascending")
        if not np.all(np.isfinite(y)):
            raise InvalidArgument("curve values must be finite")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x_axis", x)
        object.__setattr__(self, "values", y)

    def __call__(self, x):
        return np.interp(x, self.x_axis, self.values)


@dataclass(frozen=True)
class Grid2D:
    """Rectilinear table over (x_axis, y_axis); values[i, j] = f(x_i, y_j)."""

    x_axis: np.ndarray  # speed breakpoints, rad/s, strictly ascending
    y_axis: np.ndarray  # torque breakpoints, N*m, strictly ascending
    values: np.ndarray  # shape (len(x_axis), len(y_axis))

    def __post_init__(self):
        x = np.asarray(self.x_axis, dtype=float)
        y = np.asarray(self.y_axis, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or y.ndim != 1 or x.size < 2 or y.size < 2:
            raise InvalidArgument("grid axes must be 1-D with at least 2 points")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise InvalidArgument("grid axes must be strictly ascending")
        if v.shape != (x.size, y.size):
            raise InvalidArgument(
                f"values shape {v.shape} does not match axes ({x.size}, {y.size})"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("grid values must be finite")
        for arr in (x, y, v):
            arr.flags.writeable = False
        object.__setattr__(self, "x_axis", x)
        object.__setattr__(self, "y_axis", y)
        object.__setattr__(self, "values", v)


def interp2(grid: Grid2D, x: float, y: float) -> float:
    """Bilinear interpolation, exact at grid nodes.

    Raises OutOfRange for queries outside the axis bounding box; envelope
    feasibility is the caller's concern, not the interpolator's.
    """
    xa, ya, v = grid.x_axis, grid.y_axis, grid.values
    if x < xa[0] or x > xa[-1] or y < ya[0] or y > ya[-1]:
        raise OutOfRange(
            f"query ({x:g}, {y:g}) outside grid box "
            f"[{xa[0]:g}, {xa[-1]:g}] x [{ya[0]:g}, {ya[-1]:g}]"
        )
    i = min(int(np.searchsorted(xa, x, side="right")) - 1, xa.size - 2)
    j = min(int(np.searchsorted(ya, y, side="right")) - 1, ya.size - 2)
    i = max(i, 0)
    j = max(j, 0)
    fx = (x - xa[i]) / (xa[i + 1] - xa[i])
    fy = (y - ya[j]) / (ya[j + 1] - ya[j])
    v00, v01 = v[i, j], v[i, j + 1]
    v10, v11 = v[i + 1, j], v[i + 1, j + 1]
    return (
        v00 * (1.0 - fx) * (1.0 - fy)
        + v10 * fx * (1.0 - fy)
        + v01 * (1.0 - fx) * fy
        + v11 * fx * fy
    )


def interp2_many(grid: Grid2D, x, y) -> np.ndarray:
    """Vectorized bilinear interpolation over array queries."""
    xa, ya, v = grid.x_axis, grid.y_axis, grid.values
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x < xa[0]) or np.any(x > xa[-1]) or np.any(y < ya[0]) or np.any(y > ya[-1]):
        raise OutOfRange("vectorized query outside grid box")
    i = np.clip(np.searchsorted(xa, x, side="right") - 1, 0, xa.size - 2)
    j = np.clip(np.searchsorted(ya, y, side="right") - 1, 0, ya.size - 2)
    fx = (x - xa[i]) / (xa[i + 1] - xa[i])
    fy = (y - ya[j]) / (ya[j + 1] - ya[j])
    return (
        v[i, j] * (1.0 - fx) * (1.0 - fy)
        + v[i + 1, j] * fx * (1.0 - fy)
        + v[i, j + 1] * (1.0 - fx) * fy
        + v[i + 1, j + 1] * fx * fy
    )


@dataclass(frozen=True)
class EngineMapSet:
    """Fuel and pollutant rate maps plus the torque/speed envelope."""

    fuel: Grid2D  # kg/s
    nox: Grid2D  # kg/s
    hc: Grid2D  # kg/s
    torque_max: Curve1D  # N*m over rad/s
    loss_power: Curve1D  # W over rad/s, Willans friction losses
    omega_idle: float  # rad/s
    omega_max: float  # rad/s
    rated_power: float  # W
    displacement_l: float
    m_dot_f_max: float  # kg/s, map maximum inside the envelope
    m_dot_nox_max: float
    m_dot_hc_max: float


@dataclass(frozen=True)
class EmMapSet:
    """Electric machine efficiency map and operating envelope."""

    efficiency: Grid2D  # dimensionless in (0, 1]
    torque_sup: Curve1D  # N*m, upper torque limit over speed
    torque_inf: Curve1D  # N*m, lower (negative) torque limit over speed
    omega_max: float  # rad/s
    rated_power: float  # W


def _efficiency_factor(omega, omega_lo, omega_hi):
    s = (2.0 * np.asarray(omega, dtype=float) - (omega_lo + omega_hi)) / (omega_hi - omega_lo)
    return _EFF_PEAK * (1.0 - _EFF_DROOP * s * s)


def _friction_loss(omega, displacement_l, omega_rated):
    # FMEP model for a four-stroke engine: P_loss = fmep * V_d * omega / (4*pi)
    omega = np.asarray(omega, dtype=float)
    fmep = _FMEP_A + _FMEP_B * (omega / omega_rated) ** 2
    return fmep * (displacement_l * 1e-3) * omega / (4.0 * math.pi)


def _specific_nox(u, v):
    return _NOX_BASE + _NOX_AMP * np.exp(
        -((u - _NOX_U0) ** 2 / (2.0 * _NOX_SU**2) + (v - _NOX_V0) ** 2 / (2.0 * _NOX_SV**2))
    )


def _specific_hc(u, v):
    return _HC_BASE + _HC_AMP * np.exp(
        -((u - _HC_U0) ** 2 / (2.0 * _HC_SU**2) + (v - _HC_V0) ** 2 / (2.0 * _HC_SV**2))
    )


def _envelope_axis(omega_idle, omega_max, knots, n=129):
    axis = np.linspace(omega_idle, omega_max, n)
    extra = [w for w in knots if omega_idle < w < omega_max]
    return np.unique(np.concatenate([axis, np.asarray(extra, dtype=float)]))


def generate_engine_maps(
    displacement_l: float,
    rated_power: float,
    omega_rated: float,
    torque_peak: float,
    omega_torque_peak: float,
    omega_idle: float,
    n_speed: int = 33,
    n_torque: int = 33,
) -> EngineMapSet:
    """Build a synthetic engine map set matching the given envelope.

    Fuel follows a Willans line: fuel power = (brake power + losses) / e(speed),
    so fuel is strictly increasing in torque at fixed speed and positive at
    zero load. Specific NOx peaks at high load and mid-high speed, specific HC
    at low load and low speed; the two hot zones are disjoint by construction.
    The torque envelope rises linearly to the peak-torque plateau and follows
    the rated-power hyperbola up to maximum (= rated) speed.
    """
    if min(displacement_l, rated_power, omega_rated, torque_peak, omega_torque_peak, omega_idle) <= 0:
        raise InvalidArgument("engine map parameters must be positive")
    if not (omega_idle < omega_torque_peak < omega_rated):
        raise InvalidArgument("require omega_idle < omega_torque_peak < omega_rated")
    omega_cap = rated_power / torque_peak  # speed where rated power caps the plateau
    if not (omega_torque_peak < omega_cap <= omega_rated):
        raise InvalidArgument("torque peak cannot sustain rated power before rated speed")

    omega_max = omega_rated  # electronically limited at rated speed

    def t_max(omega):
        omega = np.asarray(omega, dtype=float)
        low = 0.75 * torque_peak + 0.25 * torque_peak * (omega - omega_idle) / (
            omega_torque_peak - omega_idle
        )
        flat = np.full_like(omega, torque_peak)
        high = rated_power / np.maximum(omega, omega_cap)
        out = np.where(omega < omega_torque_peak, low, np.where(omega <= omega_cap, flat, high))
        return out

    env_axis = _envelope_axis(omega_idle, omega_max, (omega_torque_peak, omega_cap))
    torque_max = Curve1D(env_axis, t_max(env_axis))
    loss_curve = Curve1D(env_axis, _friction_loss(env_axis, displacement_l, omega_rated))

    speed = np.linspace(omega_idle, omega_max, n_speed)
    torque = np.linspace(0.0, torque_peak, n_torque)
    ww, tt = np.meshgrid(speed, torque, indexing="ij")

    p_brake = ww * tt  # W
    p_loss = _friction_loss(ww, displacement_l, omega_rated)
    eff = _efficiency_factor(ww, omega_idle, omega_max)
    fuel = (p_brake + p_loss) / (eff * LHV_DIESEL)  # kg/s

    u = (ww - omega_idle) / (omega_max - omega_idle)
    v = np.clip(tt / t_max(ww), 0.0, 1.25)
    p_equiv = p_brake + p_loss  # W, positive everywhere
    nox = _specific_nox(u, v) * p_equiv / _SEC_PER_KWH * 1e-3  # g/kWh * W -> kg/s
    hc = _specific_hc(u, v) * p_equiv / _SEC_PER_KWH * 1e-3

    mask = tt <= t_max(ww) * (1.0 + 1e-12)
    return EngineMapSet(
        fuel=Grid2D(speed, torque, fuel),
        nox=Grid2D(speed, torque, nox),
        hc=Grid2D(speed, torque, hc),
        torque_max=torque_max,
        loss_power=loss_curve,
        omega_idle=float(omega_idle),
        omega_max=float(omega_max),
        rated_power=float(rated_power),
        displacement_l=float(displacement_l),
        m_dot_f_max=float(fuel[mask].max()),
        m_dot_nox_max=float(nox[mask].max()),
        m_dot_hc_max=float(hc[mask].max()),
    )


def scale_engine_maps(maps: EngineMapSet, new_rated_power: float) -> EngineMapSet:
    """Rescale an engine map set to a new rated power at unchanged speed range.

    The torque axis and envelope scale by the power ratio and the rate maps
    scale linearly, which preserves brake-specific fuel/emission values at
    matching (speed, normalized load) points exactly.
    """
    if new_rated_power <= 0:
        raise InvalidArgument("new rated power must be positive")
    r = new_rated_power / maps.rated_power

    def scale_grid(g: Grid2D) -> Grid2D:
        return Grid2D(g.x_axis, g.y_axis * r, g.values * r)

    return EngineMapSet(
        fuel=scale_grid(maps.fuel),
        nox=scale_grid(maps.nox),
        hc=scale_grid(maps.hc),
        torque_max=Curve1D(maps.torque_max.x_axis, maps.torque_max.values * r),
        loss_power=Curve1D(maps.loss_power.x_axis, maps.loss_power.values * r),
        omega_idle=maps.omega_idle,
        omega_max=maps.omega_max,
        rated_power=float(new_rated_power),
        displacement_l=maps.displacement_l * r,
        m_dot_f_max=maps.m_dot_f_max * r,
        m_dot_nox_max=maps.m_dot_nox_max * r,
        m_dot_hc_max=maps.m_dot_hc_max * r,
    )


def generate_em_map(
    rated_power: float,
    omega_max: float,
    omega_base: float,
    n_speed: int = 33,
    n_torque: int = 33,
    peak_efficiency: float = 0.963,
    eff_speed_frac: float = 0.55,
    eff_torque_frac: float = 0.50,
) -> EmMapSet:
    """Build a synthetic e-machine efficiency map with a two-region envelope.

    Constant torque below base speed, constant power above; the negative
    envelope mirrors the positive one. Efficiency peaks above 0.94 at mid
    speed and mid torque and falls toward the envelope edges and low load.
    """
    if min(rated_power, omega_max, omega_base) <= 0:
        raise InvalidArgument("e-machine parameters must be positive")
    if not (omega_base < omega_max):
        raise InvalidArgument("require omega_base < omega_max")

    t_base = rated_power / omega_base

    def t_sup(omega):
        omega = np.asarray(omega, dtype=float)
        return np.where(omega <= omega_base, t_base, rated_power / np.maximum(omega, omega_base))

    env_axis = _envelope_axis(0.0, omega_max, (omega_base,))
    sup = Curve1D(env_axis, t_sup(env_axis))
    inf = Curve1D(env_axis, -t_sup(env_axis))

    speed = np.linspace(0.0, omega_max, n_speed)
    torque = np.linspace(-t_base, t_base, n_torque)
    ww, tt = np.meshgrid(speed, torque, indexing="ij")

    u = ww / omega_max
    tau = np.abs(tt) / t_base
    eta = (
        peak_efficiency
        - 0.09 * (u - eff_speed_frac) ** 2
        - 0.08 * (tau - eff_torque_frac) ** 2
        - 0.25 * np.exp(-tau / 0.06)
    )
    eta = np.clip(eta, 0.55, 0.975)

    return EmMapSet(
        efficiency=Grid2D(speed, torque, eta),
        torque_sup=sup,
        torque_inf=inf,
        omega_max=float(omega_max),
        rated_power=float(rated_power),
    )


def specific_emission_grid(maps: EngineMapSet, kind: str) -> Grid2D:
    """Specific-emission map in g/kWh of (brake + friction) power.

    Normalizing by brake power alone diverges at zero torque; including the
    friction losses keeps the map finite everywhere while preserving where
    the hot zones sit.
    """
    grid = {"nox": maps.nox, "hc": maps.hc}.get(kind)
    if grid is None:
        raise InvalidArgument(f"unknown emission kind {kind!r}")
    ww, tt = np.meshgrid(grid.x_axis, grid.y_axis, indexing="ij")
    p_equiv = ww * tt + maps.loss_power(ww)
    return Grid2D(grid.x_axis, grid.y_axis, grid.values * 1e3 * _SEC_PER_KWH / p_equiv)


def envelope_max_power(maps: EngineMapSet, n: int = 2001) -> float:
    """Maximum brake power along the torque envelope, W."""
    omega = np.linspace(maps.omega_idle, maps.omega_max, n)
    return float(np.max(omega * maps.torque_max(omega)))


def bsfc_at(maps: EngineMapSet, omega: float, torque: float) -> float:
    """Brake-specific fuel consumption at an operating point, g/kWh."""
    if omega * torque <= 0:
        raise InvalidArgument("BSFC defined for positive brake power only")
    m_dot = interp2(maps.fuel, omega, torque)
    return m_dot * 1e3 * _SEC_PER_KWH / (omega * torque)


# ---------------------------------------------------------------------------
# Persistence: JSON with full float round-trip via repr (17 significant digits)


def _grid_to_obj(g: Grid2D, units: str, kind: str) -> dict:
    return {
        "kind": kind,
        "units": units,
        "x_axis": g.x_axis.tolist(),
        "y_axis": g.y_axis.tolist(),
        "values": g.values.tolist(),
    }


def _grid_from_obj(obj: dict) -> Grid2D:
    try:
        return Grid2D(
            np.asarray(obj["x_axis"], dtype=float),
            np.asarray(obj["y_axis"], dtype=float),
            np.asarray(obj["values"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed grid object: {exc}") from exc


def _curve_to_obj(c: Curve1D) -> dict:
    return {"x_axis": c.x_axis.tolist(), "values": c.values.tolist()}


def _curve_from_obj(obj: dict) -> Curve1D:
    try:
        return Curve1D(np.asarray(obj["x_axis"], dtype=float), np.asarray(obj["values"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed curve object: {exc}") from exc


def save_maps(maps, path) -> None:
    """Write an EngineMapSet or EmMapSet to a JSON file (lossless round-trip)."""
    if isinstance(maps, EngineMapSet):
        obj = {
            "kind": "engine_map_set",
            "fuel": _grid_to_obj(maps.fuel, "kg/s", "fuel_rate"),
            "nox": _grid_to_obj(maps.nox, "kg/s", "nox_rate"),
            "hc": _grid_to_obj(maps.hc, "kg/s", "hc_rate"),
            "torque_max": _curve_to_obj(maps.torque_max),
            "loss_power": _curve_to_obj(maps.loss_power),
            "omega_idle": maps.omega_idle,
            "omega_max": maps.omega_max,
            "rated_power": maps.rated_power,
            "displacement_l": maps.displacement_l,
            "m_dot_f_max": maps.m_dot_f_max,
            "m_dot_nox_max": maps.m_dot_nox_max,
            "m_dot_hc_max": maps.m_dot_hc_max,
        }
    elif isinstance(maps, EmMapSet):
        obj = {
            "kind": "em_map_set",
            "efficiency": _grid_to_obj(maps.efficiency, "-", "efficiency"),
            "torque_sup": _curve_to_obj(maps.torque_sup),
            "torque_inf": _curve_to_obj(maps.torque_inf),
            "omega_max": maps.omega_max,
            "rated_power": maps.rated_power,
        }
    else:
        raise InvalidArgument(f"cannot persist object of type {type(maps).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def load_maps(path):
    """Load a map set saved by save_maps; raises ParseError on malformed files."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot parse map file {path}: {exc}") from exc
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ParseError(f"map file {path} missing 'kind'")
    try:
        if obj["kind"] == "engine_map_set":
            return EngineMapSet(
                fuel=_grid_from_obj(obj["fuel"]),
                nox=_grid_from_obj(obj["nox"]),
                hc=_grid_from_obj(obj["hc"]),
                torque_max=_curve_from_obj(obj["torque_max"]),
                loss_power=_curve_from_obj(obj["loss_power"]),
                omega_idle=float(obj["omega_idle"]),
                omega_max=float(obj["omega_max"]),
                rated_power=float(obj["rated_power"]),
                displacement_l=float(obj["displacement_l"]),
                m_dot_f_max=float(obj["m_dot_f_max"]),
                m_dot_nox_max=float(obj["m_dot_nox_max"]),
                m_dot_hc_max=float(obj["m_dot_hc_max"]),
            )
        if obj["kind"] == "em_map_set":
            return EmMapSet(
                efficiency=_grid_from_obj(obj["efficiency"]),
                torque_sup=_curve_from_obj(obj["torque_sup"]),
                torque_inf=_curve_from_obj(obj["torque_inf"]),
                omega_max=float(obj["omega_max"]),
                rated_power=float(obj["rated_power"]),
            )
    except KeyError as exc:
        raise ParseError(f"map file {path} missing field {exc}") from exc
    raise ParseError(f"unknown map kind {obj['kind']!r}")
