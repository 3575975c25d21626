"""Scenario-based feasibility of flexibility trajectories.

A trajectory is a vector of net-load deviations (kW, positive = more
consumption) from the expected profile. For every PV scenario the deviation
is disaggregated greedily: the battery absorbs what it can, then the water
heater, and only then are shiftable loads moved. Whatever is left unmet is a
violation for that scenario.

The battery's baseline in each scenario charges from PV surplus, so the
energy it has left for flexibility (and hence feasibility) depends on the
scenario.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .devices import DeviceFleet, ewh_gain_per_kw, ewh_step, thermostat_control

UNMET_TOL = 1e-9


@dataclass
class FlexTrajectory:
    deltas: np.ndarray

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=float)
        if self.deltas.ndim != 1 or not np.all(np.isfinite(self.deltas)):
            raise ValueError("deltas must be a finite vector")

    def __len__(self) -> int:
        return len(self.deltas)


@dataclass
class TrajectorySet:
    trajectories: np.ndarray  # [K, T]
    baseline: np.ndarray
    pv_scenarios: np.ndarray
    alpha: float
    duplicates: bool = False
    archive: np.ndarray | None = field(default=None, repr=False)  # every feasible point visited

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def horizon(self) -> int:
        return self.trajectories.shape[1]


@dataclass
class FeasibilityResult:
    feasible: bool
    fraction: float
    violations: dict  # scenario -> list of violating steps


class Dispatcher:
    """Vectorized greedy disaggregation of deviations over scenarios."""

    def __init__(self, fleet: DeviceFleet, baseline, pv_scenarios, max_combos: int = 256):
        self.fleet = fleet
        self.baseline = np.asarray(baseline, dtype=float)
        pv = np.atleast_2d(np.asarray(pv_scenarios, dtype=float))
        if pv.shape[0] < 1:
            raise ValueError("need at least one PV scenario")
        if pv.shape[1] != len(self.baseline):
            raise ValueError(f"horizon mismatch: baseline {len(self.baseline)}, scenarios {pv.shape[1]}")
        self.pv = pv
        self.T = len(self.baseline)
        self.S = pv.shape[0]
        dt = fleet.dt
        bat = fleet.battery
        self.b0 = np.zeros((self.S, self.T))
        if bat is not None:
            gross = self.baseline + pv.mean(axis=0)
            soc = np.full(self.S, bat.soc_init)
            for t in range(self.T):
                surplus = np.maximum(0.0, pv[:, t] - gross[t])
                head = np.maximum(0.0, (bat.soc_max - soc) / (bat.charge_efficiency * dt))
                p = np.minimum(np.minimum(surplus, bat.charge_power), head)
                self.b0[:, t] = p
                soc = soc + bat.charge_efficiency * p * dt
        self.e0 = np.zeros(self.T)
        if fleet.ewh is not None:
            self.draws = fleet.ewh.draw_profile(self.T)
            self.e0 = fleet.ewh.power * thermostat_control(fleet.ewh, self.T, dt)
        movable = [s for s in fleet.shiftables if s.power > 0]
        self.base_shift = np.zeros(self.T)
        for s in movable:
            self.base_shift += s.profile(s.start, self.T)
        combos = itertools.product(*[s.starts(self.T) for s in movable]) if movable else iter(())
        base_combo = tuple(s.start for s in movable)
        profiles = []
        for combo in itertools.islice((c for c in combos if c != base_combo), max_combos):
            prof = sum(s.profile(st, self.T) for s, st in zip(movable, combo))
            profiles.append(prof - self.base_shift)
        self.shift_moves = np.array(profiles) if profiles else np.zeros((0, self.T))

    def power_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Loose per-step bounds on achievable deviations."""
        up = np.zeros(self.T)
        down = np.zeros(self.T)
        f = self.fleet
        if f.battery is not None:
            up += f.battery.charge_power
            down += f.battery.discharge_power
        if f.ewh is not None:
            up += f.ewh.power - self.e0
            down += self.e0
        for s in f.shiftables:
            up += s.power
            down += s.power
        return -down, up

    def unmet(self, deltas: np.ndarray, scen: np.ndarray) -> np.ndarray:
        """Unserved deviation [B, T] after battery and water heater dispatch."""
        deltas = np.atleast_2d(deltas)
        B = deltas.shape[0]
        f, dt = self.fleet, self.fleet.dt
        out = np.zeros((B, self.T))
        bat, ewh = f.battery, f.ewh
        soc = np.full(B, bat.soc_init) if bat is not None else None
        temp = np.full(B, ewh.t_init) if ewh is not None else None
        gain = ewh_gain_per_kw(ewh, dt) if ewh is not None else 0.0
        for t in range(self.T):
            need = deltas[:, t].copy()
            if bat is not None:
                b0 = self.b0[scen, t]
                lo = np.maximum(-bat.discharge_power, -(soc - bat.soc_min) * bat.discharge_efficiency / dt)
                hi = np.minimum(bat.charge_power, (bat.soc_max - soc) / (bat.charge_efficiency * dt))
                p = np.clip(b0 + need, lo, hi)
                need -= p - b0
                soc = np.where(p >= 0, soc + bat.charge_efficiency * p * dt, soc + p * dt / bat.discharge_efficiency)
            if ewh is not None:
                idle = ewh_step(ewh, temp, 0.0, self.draws[t], dt)
                if gain > 0:
                    lo = np.maximum(0.0, (ewh.t_min - idle) / gain)
                    hi = np.minimum(ewh.power, (ewh.t_max - idle) / gain)
                else:
                    lo = np.zeros(B)
                    hi = np.zeros(B)
                comfort_lost = lo > hi + 1e-12
                e = np.clip(self.e0[t] + need, lo, np.maximum(lo, hi))
                need -= e - self.e0[t]
                temp = ewh_step(ewh, temp, e, self.draws[t], dt)
                need = np.where(comfort_lost, np.maximum(np.abs(need), 1.0), need)
            out[:, t] = need
        return out

    def violation_matrix(self, deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per (trajectory, scenario): violated flag [M, S] and unmet energy [M, S]."""
        deltas = np.atleast_2d(np.asarray(deltas, dtype=float))
        if deltas.shape[1] != self.T:
            raise ValueError(f"horizon mismatch: trajectory {deltas.shape[1]}, problem {self.T}")
        M = deltas.shape[0]
        rep = np.repeat(deltas, self.S, axis=0)
        scen = np.tile(np.arange(self.S), M)
        unmet = np.abs(self.unmet(rep, scen))
        energy = unmet.sum(axis=1)
        bad = np.any(unmet > UNMET_TOL, axis=1)
        if bad.any() and len(self.shift_moves):
            idx = np.flatnonzero(bad)
            C = len(self.shift_moves)
            trial = np.repeat(rep[idx], C, axis=0) - np.tile(self.shift_moves, (len(idx), 1))
            tu = np.abs(self.unmet(trial, np.repeat(scen[idx], C)))
            ok = np.any(np.all(tu <= UNMET_TOL, axis=1).reshape(len(idx), C), axis=1)
            bad[idx[ok]] = False
            energy[idx[ok]] = 0.0
            best = tu.sum(axis=1).reshape(len(idx), C).min(axis=1)
            energy[idx[~ok]] = np.minimum(energy[idx[~ok]], best[~ok])
        return bad.reshape(M, self.S), energy.reshape(M, self.S)

    def fractions(self, deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        bad, energy = self.violation_matrix(deltas)
        return 1.0 - bad.mean(axis=1), energy.mean(axis=1)


def check_feasible(traj, fleet: DeviceFleet, baseline, pv_scenarios, alpha: float = 0.9,
                   dispatcher: Dispatcher | None = None) -> FeasibilityResult:
    """Feasible iff the share of violation-free PV scenarios is at least ``alpha``."""
    deltas = traj.deltas if isinstance(traj, FlexTrajectory) else np.asarray(traj, dtype=float)
    disp = dispatcher or Dispatcher(fleet, baseline, pv_scenarios)
    if len(deltas) != disp.T:
        raise ValueError(f"horizon mismatch: trajectory {len(deltas)}, problem {disp.T}")
    rep = np.repeat(deltas[None, :], disp.S, axis=0)
    unmet = np.abs(disp.unmet(rep, np.arange(disp.S)))
    bad, _ = disp.violation_matrix(deltas[None, :])
    violations = {
        int(s): [int(t) for t in np.flatnonzero(unmet[s] > UNMET_TOL)] for s in np.flatnonzero(bad[0])
    }
    fraction = 1.0 - float(bad[0].mean())
    return FeasibilityResult(fraction >= alpha - 1e-12, fraction, violations)
