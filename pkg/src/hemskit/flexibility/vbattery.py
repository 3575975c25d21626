"""Dynamic virtual battery: per-period power and SOC limits enclosing a trajectory set.

Among all limit vectors that contain every trajectory of the set, the fit
returns the one minimizing the SOC range plus the power range, summed over
periods. That problem separates per period and its optimum is the elementwise
max/min of the trajectories and of their cumulative energies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .feasibility import TrajectorySet


@dataclass
class VirtualBattery:
    p_max: np.ndarray
    p_min: np.ndarray
    soc_max: np.ndarray
    soc_min: np.ndarray
    soc_ini: float
    dt: float = 1.0

    def __post_init__(self):
        for name in ("p_max", "p_min", "soc_max", "soc_min"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.p_min > self.p_max) or np.any(self.soc_min > self.soc_max):
            raise ValueError("lower limits must not exceed upper limits")

    @property
    def horizon(self) -> int:
        return len(self.p_max)

    def objective(self) -> float:
        return float(np.sum(self.soc_max) - np.sum(self.soc_min) + np.sum(self.p_max) - np.sum(self.p_min))

    def to_json(self) -> str:
        params = {
            "p_max": self.p_max.tolist(), "p_min": self.p_min.tolist(),
            "soc_max": self.soc_max.tolist(), "soc_min": self.soc_min.tolist(),
            "soc_ini": self.soc_ini, "dt": self.dt,
        }
        return json.dumps({"type": "virtual_battery", "params": params}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "VirtualBattery":
        d = json.loads(text)
        if d.get("type") != "virtual_battery":
            raise ValueError("not a virtual battery model")
        return cls(**d["params"])


def soc_paths(trajectories: np.ndarray, soc_ini: float, dt: float = 1.0) -> np.ndarray:
    return soc_ini + np.cumsum(np.atleast_2d(trajectories) * dt, axis=1)


def vbattery_fit(data: TrajectorySet | np.ndarray, soc_ini: float = 0.0, dt: float = 1.0) -> VirtualBattery:
    X = data.trajectories if isinstance(data, TrajectorySet) else np.atleast_2d(np.asarray(data, dtype=float))
    if X.size == 0:
        raise ValueError("empty trajectory set")
    soc = soc_paths(X, soc_ini, dt)
    return VirtualBattery(X.max(axis=0), X.min(axis=0), soc.max(axis=0), soc.min(axis=0), soc_ini, dt)


def vbattery_classify(vb: VirtualBattery, traj, atol: float = 1e-12) -> np.ndarray | bool:
    """Feasible when power and cumulative SOC stay inside the limits at every period."""
    x = np.asarray(traj, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != vb.horizon:
        raise ValueError(f"horizon mismatch: {X.shape[1]} vs {vb.horizon}")
    soc = soc_paths(X, vb.soc_ini, vb.dt)
    ok = (
        np.all(X <= vb.p_max + atol, axis=1) & np.all(X >= vb.p_min - atol, axis=1)
        & np.all(soc <= vb.soc_max + atol, axis=1) & np.all(soc >= vb.soc_min - atol, axis=1)
    )
    return bool(ok[0]) if single else ok
