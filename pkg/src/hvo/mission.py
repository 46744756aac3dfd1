"""Propeller speed/torque mission profiles.

A mission is the boundary condition of every simulation: a time series of
propeller speed and torque, optionally tagged with segment labels. The
bundled demo mission is synthetic and mimics a typical urban ferry duty
cycle: a first segment of long, near-rated cruises between few stops, then
a second segment of frequent stops and low/mid-load maneuvering in traffic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import InvalidArgument, ParseError, ValidationError

# Demo-plant anchors (Table-style 147 kW engine behind a ratio-4 gearbox).
_ENGINE_IDLE = 600.0 * math.pi / 30.0  # rad/s
_ENGINE_RATED = 2000.0 * math.pi / 30.0
_ENGINE_TORQUE_PEAK = 1200.0  # N*m
_ENGINE_OMEGA_TP = 1100.0 * math.pi / 30.0
_ENGINE_RATED_POWER = 147e3  # W
_GEAR_RATIO = 4.0
_GEAR_ETA = 0.97

PROP_SPEED_FLOOR = _ENGINE_IDLE / _GEAR_RATIO  # rad/s, clutch-engaged idle
PROP_SPEED_TOP = _ENGINE_RATED / _GEAR_RATIO  # rad/s, at engine rated speed


class MissionSample(NamedTuple):
    t: float  # s
    omega_prop: float  # rad/s
    torque_prop: float  # N*m


@dataclass(frozen=True)
class MissionProfile:
    """Immutable propeller speed/torque time series."""

    t: np.ndarray  # s, strictly increasing
    omega: np.ndarray  # rad/s
    torque: np.ndarray  # N*m
    segment: np.ndarray  # int labels, one per sample
    dt: float | None  # s, set when sampling is uniform
    name: str = ""

    def __post_init__(self):
        for arr in (self.t, self.omega, self.torque, self.segment):
            np.asarray(arr).flags.writeable = False

    def __len__(self) -> int:
        return self.t.size

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def omega_dot(self) -> np.ndarray:
        """Backward-difference angular acceleration; first sample is 0."""
        out = np.zeros_like(self.omega)
        out[1:] = np.diff(self.omega) / np.diff(self.t)
        return out

    def power(self) -> np.ndarray:
        return self.omega * self.torque

    def samples(self) -> Iterator[MissionSample]:
        for k in range(len(self)):
            yield MissionSample(float(self.t[k]), float(self.omega[k]), float(self.torque[k]))


def _make_profile(t, omega, torque, segment, name) -> MissionProfile:
    t = np.asarray(t, dtype=float)
    omega = np.asarray(omega, dtype=float)
    torque = np.asarray(torque, dtype=float)
    segment = np.asarray(segment, dtype=np.int64)
    deltas = np.diff(t)
    dt = None
    if deltas.size and np.all(np.abs(deltas - deltas[0]) <= 1e-9):
        dt = float(deltas[0])
    return MissionProfile(t, omega, torque, segment, dt, name)


def load_mission(path) -> MissionProfile:
    """Load a mission CSV with header ``t,omega_prop,torque_prop[,segment]``."""
    rows = []
    seg_present = False
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:3]] != ["t", "omega_prop", "torque_prop"]:
                raise ParseError(f"{path}: expected header 't,omega_prop,torque_prop'")
            seg_present = len(header) >= 4 and header[3].strip() == "segment"
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    t = float(row[0])
                    w = float(row[1])
                    q = float(row[2])
                    s = int(row[3]) if seg_present and len(row) > 3 else 0
                except (ValueError, IndexError) as exc:
                    raise ParseError(f"{path}:{lineno}: malformed row {row!r}") from exc
                rows.append((t, w, q, s))
    except OSError as exc:
        raise ParseError(f"cannot read mission file {path}: {exc}") from exc

    if len(rows) < 2:
        raise ValidationError(f"{path}: mission needs at least 2 samples")
    arr = np.asarray([r[:3] for r in rows], dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{path}: mission contains non-finite values")
    t = arr[:, 0]
    if np.any(np.diff(t) <= 0):
        raise ValidationError(f"{path}: time must be strictly increasing")
    seg = np.asarray([r[3] for r in rows], dtype=np.int64)
    return _make_profile(t, arr[:, 1], arr[:, 2], seg, name=str(path))


def save_mission(profile: MissionProfile, path) -> None:
    """Write a mission CSV round-trippable through load_mission."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "omega_prop", "torque_prop", "segment"])
        for k in range(len(profile)):
            writer.writerow(
                [
                    repr(float(profile.t[k])),
                    repr(float(profile.omega[k])),
                    repr(float(profile.torque[k])),
                    int(profile.segment[k]),
                ]
            )


def resample(profile: MissionProfile, dt: float) -> MissionProfile:
    """Linear interpolation onto a uniform grid from t0 to t_end.

    dt must evenly divide the mission duration (within 1e-9 relative) so the
    endpoints are preserved exactly.
    """
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    dur = profile.duration
    if dt > dur:
        raise InvalidArgument(f"dt={dt:g} exceeds mission duration {dur:g}")
    n = round(dur / dt)
    if abs(n * dt - dur) > 1e-9 * max(1.0, dur):
        raise InvalidArgument(f"dt={dt:g} does not evenly divide duration {dur:g}")
    t_new = np.linspace(profile.t[0], profile.t[-1], n + 1)
    omega = np.interp(t_new, profile.t, profile.omega)
    torque = np.interp(t_new, profile.t, profile.torque)
    # piecewise-constant segment labels: take the label of the sample at or before t
    idx = np.clip(np.searchsorted(profile.t, t_new, side="right") - 1, 0, len(profile) - 1)
    return MissionProfile(t_new, omega, torque, profile.segment[idx], float(dt), profile.name)


@dataclass(frozen=True)
class SegmentSpec:
    """Descriptor for one qualitative mission segment."""

    duration_s: float
    label: int
    n_stops: int
    cruise_frac: float  # cruise speed as a fraction of the top propeller speed
    dwell_s: float  # mean stop dwell, s
    ramp_up_s: float  # mean acceleration ramp, s
    ramp_down_s: float  # mean deceleration ramp, s
    wander: float  # relative speed oscillation while underway


DEFAULT_SEGMENTS = (
    SegmentSpec(duration_s=1800.0, label=1, n_stops=5, cruise_frac=0.955,
                dwell_s=55.0, ramp_up_s=50.0, ramp_down_s=40.0, wander=0.012),
    SegmentSpec(duration_s=1800.0, label=2, n_stops=12, cruise_frac=0.52,
                dwell_s=42.0, ramp_up_s=18.0, ramp_down_s=14.0, wander=0.09),
)


def _engine_torque_limit(omega_eng):
    """Closed-form demo-engine envelope (mirrors the bundled Table-2 map)."""
    omega_cap = _ENGINE_RATED_POWER / _ENGINE_TORQUE_PEAK
    if omega_eng < _ENGINE_OMEGA_TP:
        frac = (omega_eng - _ENGINE_IDLE) / (_ENGINE_OMEGA_TP - _ENGINE_IDLE)
        return _ENGINE_TORQUE_PEAK * (0.75 + 0.25 * frac)
    if omega_eng <= omega_cap:
        return _ENGINE_TORQUE_PEAK
    return _ENGINE_RATED_POWER / omega_eng


def _prop_torque_ceiling(omega_prop):
    """Propeller-side torque the demo engine can just sustain at this speed."""
    return _engine_torque_limit(omega_prop * _GEAR_RATIO) * _GEAR_RATIO * _GEAR_ETA


_PROP_LAW_C = 0.88 * _prop_torque_ceiling(PROP_SPEED_TOP) / PROP_SPEED_TOP**2
_SURGE_GAIN = 650.0  # N*m per (rad/s^2 * omega/omega_ref), transient torque rise


def synthesize_demo_mission(
    segments: Sequence[SegmentSpec] = DEFAULT_SEGMENTS,
    seed: int = 7,
    dt: float = 1.0,
) -> MissionProfile:
    """Deterministic synthetic mission built from segment descriptors.

    Speed is a sequence of dwell/ramp/cruise phases (cosine-eased ramps,
    slow wander while underway); torque follows a quadratic propeller law
    with a surge term during accelerations and brief reverse-thrust pulses
    on some decelerations. Torque is capped below the demo engine envelope
    so the conventional plant can always meet the mission.
    """
    if dt <= 0:
        raise InvalidArgument("dt must be positive")
    if not segments:
        raise InvalidArgument("at least one segment is required")
    for seg in segments:
        if seg.duration_s <= 0:
            raise InvalidArgument("segment duration must be positive")
        if seg.n_stops < 1:
            raise InvalidArgument("segments need at least one stop cycle")

    rng = np.random.default_rng(seed)
    omega_parts = []
    label_parts = []
    brake_windows = []  # (start_idx, end_idx, strength) in global sample indices
    offset = 0

    for seg in segments:
        n_samples = int(round(seg.duration_s / dt))
        if n_samples < seg.n_stops * 8:
            raise InvalidArgument("segment too short for its stop count")
        cruise_speed = PROP_SPEED_TOP * min(seg.cruise_frac, 0.97)

        # Fixed-duration phases first; cruises absorb the remaining time.
        dwells = rng.uniform(0.75, 1.25, seg.n_stops) * seg.dwell_s
        ups = rng.uniform(0.8, 1.2, seg.n_stops) * seg.ramp_up_s
        downs = rng.uniform(0.8, 1.2, seg.n_stops) * seg.ramp_down_s
        fixed = float(np.sum(dwells + ups + downs))
        spare = seg.duration_s - fixed
        if spare < seg.n_stops * 2 * dt:
            raise InvalidArgument("segment duration too short for its cadence")
        shares = rng.uniform(0.7, 1.3, seg.n_stops)
        cruises = spare * shares / shares.sum()

        levels = cruise_speed * np.clip(rng.uniform(0.96, 1.03, seg.n_stops), None, 0.97 / max(seg.cruise_frac, 1e-9))
        levels = np.clip(levels, PROP_SPEED_FLOOR * 1.5, PROP_SPEED_TOP * 0.97)

        seg_omega = []
        for i in range(seg.n_stops):
            n_dwell = max(int(round(dwells[i] / dt)), 1)
            n_up = max(int(round(ups[i] / dt)), 2)
            n_cruise = max(int(round(cruises[i] / dt)), 1)
            n_down = max(int(round(downs[i] / dt)), 2)

            seg_omega.append(np.full(n_dwell, PROP_SPEED_FLOOR))
            s = np.linspace(0.0, 1.0, n_up, endpoint=False)
            ease = (1.0 - np.cos(math.pi * s)) / 2.0
            seg_omega.append(PROP_SPEED_FLOOR + (levels[i] - PROP_SPEED_FLOOR) * ease)

            tt = np.arange(n_cruise) * dt
            period = rng.uniform(45.0, 90.0)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            wobble = seg.wander * np.sin(2.0 * math.pi * tt / period + phase)
            wobble += 0.25 * seg.wander * rng.standard_normal(n_cruise)
            seg_omega.append(np.clip(levels[i] * (1.0 + wobble),
                                     PROP_SPEED_FLOOR, PROP_SPEED_TOP * 0.97))

            start_down = offset + sum(a.size for a in seg_omega)
            s = np.linspace(0.0, 1.0, n_down, endpoint=False)
            ease = (1.0 - np.cos(math.pi * s)) / 2.0
            seg_omega.append(levels[i] + (PROP_SPEED_FLOOR - levels[i]) * ease)
            if rng.uniform() < 0.7:
                lo = start_down + int(0.3 * n_down)
                hi = start_down + max(int(0.9 * n_down), int(0.3 * n_down) + 1)
                brake_windows.append((lo, hi, rng.uniform(0.05, 0.12)))

        omega_seg = np.concatenate(seg_omega)
        # trim or pad with dwell to hit the exact sample budget
        if omega_seg.size > n_samples:
            omega_seg = omega_seg[:n_samples]
        elif omega_seg.size < n_samples:
            omega_seg = np.concatenate([omega_seg, np.full(n_samples - omega_seg.size, PROP_SPEED_FLOOR)])
        omega_parts.append(omega_seg)
        label_parts.append(np.full(n_samples, seg.label, dtype=np.int64))
        offset += n_samples

    omega = np.concatenate(omega_parts)
    labels = np.concatenate(label_parts)
    n_total = omega.size
    t = np.arange(n_total, dtype=float) * dt

    omega_dot = np.zeros_like(omega)
    omega_dot[1:] = np.diff(omega) / dt

    torque = _PROP_LAW_C * omega * omega
    torque += _SURGE_GAIN * omega_dot * omega / PROP_SPEED_TOP
    torque *= 1.0 + 0.01 * rng.standard_normal(n_total)
    torque += 2.0 * rng.standard_normal(n_total)

    for lo, hi, strength in brake_windows:
        lo = min(lo, n_total)
        hi = min(hi, n_total)
        torque[lo:hi] = -strength * _PROP_LAW_C * omega[lo:hi] ** 2

    ceiling = np.asarray([_prop_torque_ceiling(w) for w in omega])
    torque = np.minimum(torque, 0.92 * ceiling)
    torque = np.maximum(torque, -0.30 * ceiling)

    return _make_profile(t, omega, torque, labels, name="demo")


@dataclass(frozen=True)
class MissionStats:
    mean_power: float  # W
    max_power: float  # W
    duration_s: float
    energy_j: float
    segment_mean_power: dict = field(default_factory=dict)


def mission_stats(profile: MissionProfile) -> MissionStats:
    """Summary power statistics; per-segment means use the sample labels."""
    if len(profile) == 0:
        raise InvalidArgument("empty profile")
    p = profile.power()
    seg_means = {}
    for label in np.unique(profile.segment):
        seg_means[int(label)] = float(np.mean(p[profile.segment == label]))
    dt_local = np.diff(profile.t)
    energy = float(np.sum(0.5 * (p[1:] + p[:-1]) * dt_local))
    return MissionStats(
        mean_power=float(np.mean(p)),
        max_power=float(np.max(p)),
        duration_s=profile.duration,
        energy_j=energy,
        segment_mean_power=seg_means,
    )
