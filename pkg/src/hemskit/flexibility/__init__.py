from .devices import (
    BatteryConfig,
    DeviceFleet,
    EwhConfig,
    Shiftable,
    default_fleet,
    pv_scenarios,
    simulate_battery,
    simulate_ewh,
)
from .feasibility import FeasibilityResult, FlexTrajectory, TrajectorySet, check_feasible
from .epso import EpsoParams, NoFeasibleTrajectory, epso_sample, rejection_sample
from .svdd import SvddConvergenceError, SvddModel, svdd_classify, svdd_fit, svdd_radius2
from .vbattery import VirtualBattery, vbattery_classify, vbattery_fit
from .evaluation import evaluate_surrogates, scan_for_vector, surrogate_test_sets

__all__ = [
    "BatteryConfig", "DeviceFleet", "EwhConfig", "Shiftable", "default_fleet", "pv_scenarios",
    "simulate_battery", "simulate_ewh", "FeasibilityResult", "FlexTrajectory", "TrajectorySet",
    "check_feasible", "EpsoParams", "NoFeasibleTrajectory", "SvddConvergenceError", "epso_sample", "rejection_sample", "SvddModel", "svdd_classify",
    "svdd_fit", "svdd_radius2", "VirtualBattery", "vbattery_classify", "vbattery_fit",
    "evaluate_surrogates", "scan_for_vector", "surrogate_test_sets",
]
