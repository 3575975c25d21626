"""Day-ahead HEMS scheduling of shiftable loads and the water heater.

Shiftable start times are chosen exactly. The search is a depth-first branch
and bound over start assignments in lexicographic order, so among equal-cost
optima the earliest starts win. The water heater is then switched on in the
cheapest periods that keep its temperature above the comfort floor.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .flexibility.devices import DeviceFleet, simulate_ewh

TIE_TOL = 1e-9


class ScheduleInfeasible(RuntimeError):
    """No schedule satisfies the device constraints; ``constraint`` names the binding one."""

    def __init__(self, message: str, constraint: str):
        super().__init__(message)
        self.constraint = constraint


@dataclass
class Tariff:
    prices: np.ndarray  # currency per imported kWh
    feed_in: float = 0.0  # currency per exported kWh

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        if np.any(self.prices < 0) or not np.all(np.isfinite(self.prices)):
            raise ValueError("prices must be finite and non-negative")
        if self.feed_in < 0:
            raise ValueError("feed-in remuneration must be non-negative")

    @property
    def horizon(self) -> int:
        return len(self.prices)

    @classmethod
    def flat(cls, price: float, T: int, feed_in: float = 0.0) -> "Tariff":
        return cls(np.full(T, float(price)), feed_in)


@dataclass
class Schedule:
    starts: list[int]  # one per shiftable, in fleet order
    thermal_control: np.ndarray  # on-fraction per period
    load: np.ndarray  # controllable load, kW
    imported: np.ndarray  # kWh per period
    exported: np.ndarray
    cost: float
    temperatures: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "starts": [int(s) for s in self.starts],
            "thermal_control": self.thermal_control.tolist(),
            "load": self.load.tolist(),
            "imported": self.imported.tolist(),
            "exported": self.exported.tolist(),
            "cost": self.cost,
        }


def period_costs(net, tariff: Tariff, dt: float = 1.0) -> np.ndarray:
    """Per-period cost of a net load (kW): imports paid, exports remunerated at feed-in."""
    energy = np.asarray(net, dtype=float) * dt
    return tariff.prices * np.maximum(energy, 0.0) - tariff.feed_in * np.maximum(-energy, 0.0)


def _flows(net, dt):
    energy = np.asarray(net, dtype=float) * dt
    return np.maximum(energy, 0.0), np.maximum(-energy, 0.0)


def _check_horizon(tariff, pv, base_load):
    pv = np.asarray(pv, dtype=float)
    base_load = np.asarray(base_load, dtype=float)
    if not (len(pv) == len(base_load) == tariff.horizon):
        raise ValueError(f"horizon mismatch: tariff {tariff.horizon}, pv {len(pv)}, load {len(base_load)}")
    return pv, base_load


def schedule_cost(schedule: Schedule, tariff: Tariff, pv, base_load, dt: float = 1.0) -> float:
    pv, base_load = _check_horizon(tariff, pv, base_load)
    if len(schedule.load) != tariff.horizon:
        raise ValueError("schedule horizon does not match the tariff")
    return float(np.sum(period_costs(base_load + schedule.load - pv, tariff, dt)))


def _device_load(fleet: DeviceFleet, starts, control, T: int) -> np.ndarray:
    load = np.zeros(T)
    for s, st in zip(fleet.shiftables, starts):
        load += s.profile(st, T)
    if fleet.ewh is not None:
        load += fleet.ewh.power * np.asarray(control, dtype=float)
    return load


def _assemble(fleet, starts, control, tariff, pv, base_load) -> Schedule:
    T = tariff.horizon
    load = _device_load(fleet, starts, control, T)
    net = base_load + load - pv
    imp, exp = _flows(net, fleet.dt)
    temps = simulate_ewh(fleet.ewh, control, dt=fleet.dt).states if fleet.ewh is not None else None
    cost = float(np.sum(period_costs(net, tariff, fleet.dt)))
    return Schedule(list(starts), np.asarray(control, dtype=float), load, imp, exp, cost, temps)


def best_starts(fleet: DeviceFleet, tariff: Tariff, net0) -> tuple[list[int], float]:
    """Exact minimum-cost start assignment for the shiftables on top of ``net0``.

    When feed-in never exceeds the price the per-period cost is convex in the
    net load, so the marginal cost of a load can only grow as others are
    placed. The cheapest marginal placement of every unplaced load is then a
    valid lower bound, which prunes the search. Otherwise every assignment is
    visited.
    """
    T, dt = tariff.horizon, fleet.dt
    loads = fleet.shiftables
    options = []
    for s in loads:
        st = s.starts(T)
        if not st:
            raise ScheduleInfeasible(f"load '{s.name}' does not fit its window", f"window:{s.name}")
        options.append(st)
    profiles = [np.array([s.profile(st, T) for st in opts]) for s, opts in zip(loads, options)]
    convex = bool(np.all(tariff.feed_in <= tariff.prices))
    best_cost, best = np.inf, None
    chosen = [0] * len(loads)

    def total(net):
        return float(np.sum(period_costs(net, tariff, dt)))

    def bound(net, depth, base):
        lb = base
        for j in range(depth, len(loads)):
            trial = period_costs(net[None, :] + profiles[j], tariff, dt).sum(axis=1)
            lb += float(trial.min()) - base
        return lb

    def dfs(depth, net):
        nonlocal best_cost, best
        base = total(net)
        if depth == len(loads):
            if base < best_cost - TIE_TOL:
                best_cost, best = base, list(chosen)
            return
        if convex and bound(net, depth, base) >= best_cost - TIE_TOL:
            return
        for i, st in enumerate(options[depth]):
            chosen[depth] = st
            dfs(depth + 1, net + profiles[depth][i])

    dfs(0, np.asarray(net0, dtype=float))
    return best, best_cost


def enumerate_starts(fleet: DeviceFleet, tariff: Tariff, net0) -> tuple[list[int], float]:
    """Reference exhaustive search (lexicographic order, earliest optimum kept)."""
    T = tariff.horizon
    best_cost, best = np.inf, None
    for combo in itertools.product(*[s.starts(T) for s in fleet.shiftables]):
        net = np.asarray(net0, dtype=float) + sum((s.profile(st, T) for s, st in zip(fleet.shiftables, combo)),
                                                  np.zeros(T))
        c = float(np.sum(period_costs(net, tariff, fleet.dt)))
        if c < best_cost - TIE_TOL:
            best_cost, best = c, list(combo)
    return best, best_cost


def greedy_heating(fleet: DeviceFleet, tariff: Tariff, net) -> np.ndarray:
    """Switch the heater on in the cheapest admissible periods until comfort holds."""
    ewh, dt, T = fleet.ewh, fleet.dt, tariff.horizon
    control = np.zeros(T)
    if ewh is None:
        return control
    net = np.asarray(net, dtype=float).copy()
    while True:
        trace = simulate_ewh(ewh, control, dt=dt)
        if trace.ok:
            return control
        t_bad = trace.violations[0]
        if trace.states[t_bad + 1] > ewh.t_max:
            raise ScheduleInfeasible(
                f"temperature exceeds {ewh.t_max} degC at step {t_bad} with the heater off", "t_max")
        best, best_cost = None, np.inf
        for s in range(t_bad + 1):
            if control[s] > 0:
                continue
            trial = control.copy()
            trial[s] = 1.0
            if _too_hot(ewh, trial, dt):
                continue
            extra = _marginal(net, s, ewh.power, tariff, dt)
            if extra < best_cost - TIE_TOL:
                best, best_cost = s, extra
        if best is None:
            raise ScheduleInfeasible(
                f"temperature falls below {ewh.t_min} degC at step {t_bad} even with heating in every "
                "earlier period", "t_min")
        control[best] = 1.0
        net[best] += ewh.power


def _too_hot(ewh, control, dt) -> bool:
    return bool(np.any(simulate_ewh(ewh, control, dt=dt).states[1:] > ewh.t_max + 1e-9))


def _marginal(net, s, power, tariff, dt) -> float:
    price, feed = tariff.prices[s], tariff.feed_in
    before, after = net[s] * dt, (net[s] + power) * dt

    def c(e):
        return price * max(e, 0.0) - feed * max(-e, 0.0)

    return c(after) - c(before)


def optimize_schedule(fleet: DeviceFleet, tariff: Tariff, pv_forecast, base_load) -> Schedule:
    pv, base_load = _check_horizon(tariff, pv_forecast, base_load)
    net0 = base_load - pv
    starts, _ = best_starts(fleet, tariff, net0) if fleet.shiftables else ([], 0.0)
    T = tariff.horizon
    shift_load = _device_load(fleet, starts, np.zeros(T), T)
    control = greedy_heating(fleet, tariff, net0 + shift_load)
    return _assemble(fleet, starts, control, tariff, pv, base_load)


def baseline_schedule(fleet: DeviceFleet, tariff: Tariff, pv_forecast, base_load) -> Schedule:
    """Unmanaged operation: planned starts, and the heater keeps comfort with no
    regard to price or PV (earliest admissible heating periods)."""
    pv, base_load = _check_horizon(tariff, pv_forecast, base_load)
    T = tariff.horizon
    starts = [s.start for s in fleet.shiftables]
    for s, st in zip(fleet.shiftables, starts):
        if st not in s.starts(T):
            raise ScheduleInfeasible(f"planned start of '{s.name}' lies outside its window", f"window:{s.name}")
    control = greedy_heating(fleet, Tariff.flat(1.0, T), np.zeros(T))
    return _assemble(fleet, starts, control, tariff, pv, base_load)


def replay_violations(fleet: DeviceFleet, schedule: Schedule) -> list[str]:
    """Re-simulate a schedule through the device models; empty when it is valid."""
    T = len(schedule.load)
    problems = []
    for s, st in zip(fleet.shiftables, schedule.starts):
        if st not in s.starts(T):
            problems.append(f"{s.name}: start {st} outside window")
    if fleet.ewh is not None:
        trace = simulate_ewh(fleet.ewh, schedule.thermal_control, dt=fleet.dt)
        problems.extend(f"ewh: comfort bound broken at step {t}" for t in trace.violations)
    return problems


def savings_percent(baseline_cost: float, optimized_cost: float) -> float:
    if baseline_cost == 0:
        return 0.0
    return 100.0 * (baseline_cost - optimized_cost) / abs(baseline_cost)
