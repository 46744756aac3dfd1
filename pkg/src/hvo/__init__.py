"""Hybrid vessel powertrain simulation and optimal energy management."""

__version__ = "0.1.0"

from .architectures import (  # noqa: F401
    ConventionalPlant,
    ParallelPlant,
    SeriesPlant,
    build_plant,
    load_plant,
    optimize_transmission_ratio,
)
from .ems import CostSpec, DpConfig, RunReport, compare_architectures, mu_sweep, run_architecture  # noqa: F401
from .mission import MissionProfile, load_mission, mission_stats, resample, synthesize_demo_mission  # noqa: F401
