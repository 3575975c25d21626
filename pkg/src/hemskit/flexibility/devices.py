"""Behind-the-meter device models: water heater, battery, shiftable loads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

WATER_HEAT_CAPACITY = 4186.0  # J/(kg K), 1 L of water ~ 1 kg


@dataclass
class EwhConfig:
    """Electric water heater; temperatures in degC, draws in L/h per step."""

    volume: float = 150.0
    power: float = 2.0
    efficiency: float = 1.0
    loss_coefficient: float = 2.0  # UA, W/K
    t_min: float = 45.0
    t_max: float = 75.0
    t_init: float = 55.0
    t_set: float = 55.0
    ambient: float = 20.0
    inlet: float = 15.0
    draws: list = field(default_factory=lambda: [0.0] * 24)

    def __post_init__(self):
        if self.volume <= 0:
            raise ValueError("water heater volume must be positive")
        if self.power < 0 or self.loss_coefficient < 0:
            raise ValueError("power and loss coefficient must be non-negative")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must be in (0, 1]")
        if not self.t_min < self.t_max:
            raise ValueError("t_min must be below t_max")
        if not self.t_min <= self.t_init <= self.t_max:
            raise ValueError("initial temperature outside comfort bounds")
        self.draws = [float(d) for d in self.draws]
        if any(d < 0 for d in self.draws):
            raise ValueError("draws must be non-negative")

    def draw_profile(self, T: int) -> np.ndarray:
        if len(self.draws) < T:
            raise ValueError(f"draw profile covers {len(self.draws)} steps, need {T}")
        return np.asarray(self.draws[:T], dtype=float)


@dataclass
class BatteryConfig:
    capacity: float = 5.0  # kWh
    charge_power: float = 2.5
    discharge_power: float = 2.5
    charge_efficiency: float = 0.95
    discharge_efficiency: float = 0.95
    soc_min: float = 0.5
    soc_max: float = 5.0
    soc_init: float = 2.5

    def __post_init__(self):
        if self.charge_power < 0 or self.discharge_power < 0:
            raise ValueError("power limits must be non-negative")
        for eff in (self.charge_efficiency, self.discharge_efficiency):
            if not 0 < eff <= 1:
                raise ValueError("efficiencies must be in (0, 1]")
        if not self.soc_min < self.soc_max <= self.capacity + 1e-12:
            raise ValueError("need soc_min < soc_max <= capacity")
        if not self.soc_min <= self.soc_init <= self.soc_max:
            raise ValueError("initial SOC outside bounds")


@dataclass
class Shiftable:
    """Load modeled by its average power and operating time.

    ``earliest`` and ``latest_end`` bound the run (step indices, end
    exclusive); ``start`` is the planned start used as the baseline.
    """

    name: str
    power: float
    duration: int
    earliest: int = 0
    latest_end: int | None = None
    start: int | None = None

    def __post_init__(self):
        if self.power < 0 or self.duration < 1:
            raise ValueError("shiftable needs power >= 0 and duration >= 1")
        if self.start is None:
            self.start = self.earliest

    def window_end(self, T: int) -> int:
        return T if self.latest_end is None else min(self.latest_end, T)

    def starts(self, T: int) -> list[int]:
        last = self.window_end(T) - self.duration
        return list(range(self.earliest, last + 1))

    def profile(self, start: int, T: int) -> np.ndarray:
        out = np.zeros(T)
        out[start : start + self.duration] = self.power
        return out


@dataclass
class DeviceFleet:
    ewh: EwhConfig | None = None
    battery: BatteryConfig | None = None
    shiftables: list[Shiftable] = field(default_factory=list)
    pv_capacity: float = 0.0
    dt: float = 1.0  # hours per step

    def __post_init__(self):
        if self.dt <= 0 or self.dt > 1:
            raise ValueError("step must be in (0, 1] hours")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceFleet":
        return cls(
            ewh=EwhConfig(**d["ewh"]) if d.get("ewh") else None,
            battery=BatteryConfig(**d["battery"]) if d.get("battery") else None,
            shiftables=[Shiftable(**s) for s in d.get("shiftables", [])],
            pv_capacity=d.get("pv_capacity", 0.0),
            dt=d.get("dt", 1.0),
        )


@dataclass
class SimulationTrace:
    states: np.ndarray  # T + 1 values
    violations: list[int]  # steps whose end state breaks a bound

    @property
    def ok(self) -> bool:
        return not self.violations


def ewh_step(cfg: EwhConfig, temp, power, draw, dt: float):
    """Next temperature after ``dt`` hours with electric input ``power`` kW."""
    mass = cfg.volume
    joules = dt * 3600.0 * (cfg.efficiency * power * 1000.0 - cfg.loss_coefficient * (temp - cfg.ambient))
    joules = joules - draw * dt * WATER_HEAT_CAPACITY * (temp - cfg.inlet)
    return temp + joules / (mass * WATER_HEAT_CAPACITY)


def ewh_gain_per_kw(cfg: EwhConfig, dt: float) -> float:
    return dt * 3600.0 * cfg.efficiency * 1000.0 / (cfg.volume * WATER_HEAT_CAPACITY)


def simulate_ewh(cfg: EwhConfig, control, ambient=None, draws=None, dt: float = 1.0) -> SimulationTrace:
    """First-order thermal model; ``control`` is the on-fraction (0..1) per step."""
    if dt > 1:
        raise ValueError("step must be at most one hour")
    control = np.asarray(control, dtype=float)
    T = len(control)
    draws = cfg.draw_profile(T) if draws is None else np.asarray(draws, dtype=float)
    if ambient is not None:
        cfg = EwhConfig(**{**asdict(cfg), "ambient": float(ambient)})
    temps = np.empty(T + 1)
    temps[0] = cfg.t_init
    bad = []
    for t in range(T):
        temps[t + 1] = ewh_step(cfg, temps[t], cfg.power * control[t], draws[t], dt)
        if temps[t + 1] < cfg.t_min - 1e-9 or temps[t + 1] > cfg.t_max + 1e-9:
            bad.append(t)
    return SimulationTrace(temps, bad)


def thermostat_control(cfg: EwhConfig, T: int, dt: float = 1.0) -> np.ndarray:
    """Baseline: heat just enough to return to the set point each step."""
    draws = cfg.draw_profile(T)
    gain = ewh_gain_per_kw(cfg, dt)
    temp = cfg.t_init
    u = np.zeros(T)
    for t in range(T):
        idle = ewh_step(cfg, temp, 0.0, draws[t], dt)
        need = (cfg.t_set - idle) / gain if gain > 0 and cfg.power > 0 else 0.0
        u[t] = np.clip(need / cfg.power, 0.0, 1.0) if cfg.power > 0 else 0.0
        temp = ewh_step(cfg, temp, cfg.power * u[t], draws[t], dt)
    return u


def simulate_battery(cfg: BatteryConfig, power, dt: float = 1.0) -> SimulationTrace:
    """Linear SOC model; positive power charges."""
    power = np.asarray(power, dtype=float)
    soc = np.empty(len(power) + 1)
    soc[0] = cfg.soc_init
    bad = []
    for t, p in enumerate(power):
        if p >= 0:
            soc[t + 1] = soc[t] + cfg.charge_efficiency * p * dt
        else:
            soc[t + 1] = soc[t] + p * dt / cfg.discharge_efficiency
        over_power = p > cfg.charge_power + 1e-9 or -p > cfg.discharge_power + 1e-9
        if over_power or soc[t + 1] < cfg.soc_min - 1e-9 or soc[t + 1] > cfg.soc_max + 1e-9:
            bad.append(t)
    return SimulationTrace(soc, bad)


def default_fleet(T: int = 8, seed: int | None = None) -> DeviceFleet:
    """Household with a water heater, a home battery and one shiftable load.

    A seed perturbs sizes and states to produce distinct but valid fleets.
    """
    rng = np.random.default_rng(seed)
    jitter = (lambda lo, hi: float(rng.uniform(lo, hi))) if seed is not None else (lambda lo, hi: (lo + hi) / 2)
    draws = [0.0] * T
    draws[min(1, T - 1)] = 20.0 * jitter(0.5, 1.5)
    draws[min(T - 2, T - 1)] = 30.0 * jitter(0.5, 1.5)
    capacity = jitter(4.0, 8.0)
    battery = BatteryConfig(
        capacity=capacity,
        charge_power=jitter(1.5, 3.0),
        discharge_power=jitter(1.5, 3.0),
        soc_min=0.1 * capacity,
        soc_max=capacity,
        soc_init=jitter(0.3, 0.6) * capacity,
    )
    ewh = EwhConfig(volume=jitter(100.0, 200.0), power=jitter(1.5, 3.0), t_init=jitter(50.0, 60.0),
                    draws=draws)
    shift = Shiftable("dishwasher", power=jitter(0.8, 1.5), duration=2, earliest=0, latest_end=T,
                      start=min(2, T - 2))
    return DeviceFleet(ewh=ewh, battery=battery, shiftables=[shift], pv_capacity=jitter(2.0, 5.0))


def pv_scenarios(capacity: float, T: int, n: int, seed: int, start_hour: int = 8) -> np.ndarray:
    """Seeded PV generation scenarios [n, T] around a clear-sky bell."""
    rng = np.random.default_rng(seed)
    hours = start_hour + np.arange(T)
    bell = np.maximum(0.0, np.sin(np.pi * (hours - 6.0) / 12.0))
    level = rng.uniform(0.3, 1.0, size=(n, 1))
    noise = 1.0 + 0.15 * rng.standard_normal((n, T))
    return np.clip(capacity * bell * level * noise, 0.0, capacity)
