"""Series containers, forecast containers and point/probabilistic scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _finite_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """Fixed-step power series in kW."""

    start: np.datetime64
    step: np.timedelta64
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", np.datetime64(self.start, "s"))
        object.__setattr__(self, "step", np.timedelta64(self.step, "s"))
        object.__setattr__(self, "values", _finite_vector(self.values, "values"))
        if self.step <= np.timedelta64(0, "s"):
            raise ValueError("step must be positive")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def index(self) -> np.ndarray:
        return self.start + self.step * np.arange(len(self.values))


@dataclass(frozen=True)
class PanelSeries:
    """n aligned series, one per HEMS."""

    series: tuple[TimeSeries, ...]
    ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        if len(self.series) < 1:
            raise ValueError("panel needs at least one series")
        if len(self.ids) != len(self.series):
            raise ValueError("one id per series required")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("series ids must be unique")
        first = self.series[0]
        for s in self.series[1:]:
            if s.start != first.start or s.step != first.step or len(s) != len(first):
                raise ValueError("panel members are not aligned (start/step/length)")

    @classmethod
    def from_array(cls, values, start="2015-01-01T00:00", step=np.timedelta64(1, "h"), ids=None):
        """Build a panel from an ``n x T`` array."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if ids is None:
            ids = [f"hems{i}" for i in range(values.shape[0])]
        return cls(tuple(TimeSeries(np.datetime64(start), step, row) for row in values), tuple(ids))

    @property
    def n(self) -> int:
        return len(self.series)

    @property
    def length(self) -> int:
        return len(self.series[0])

    @property
    def start(self) -> np.datetime64:
        return self.series[0].start

    @property
    def step(self) -> np.timedelta64:
        return self.series[0].step

    def to_array(self) -> np.ndarray:
        return np.vstack([s.values for s in self.series])


@dataclass
class QuantileForecast:
    """Quantile and point forecasts, one row per (issue, lead) sample.

    ``values`` has shape ``[rows, n_quantiles]``; ``horizons`` holds the lead
    time in hours of each row.
    """

    issue_time: np.datetime64 | None
    horizons: np.ndarray
    quantile_levels: np.ndarray
    values: np.ndarray
    point: np.ndarray
    valid_times: np.ndarray | None = None

    def __post_init__(self):
        self.quantile_levels = np.asarray(self.quantile_levels, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.point = np.asarray(self.point, dtype=float)
        self.horizons = np.asarray(self.horizons)
        if np.any(np.diff(self.quantile_levels) <= 0):
            raise ValueError("quantile levels must be strictly increasing")
        if np.any((self.quantile_levels <= 0) | (self.quantile_levels >= 1)):
            raise ValueError("quantile levels must lie in (0, 1)")
        if self.values.shape != (len(self.point), len(self.quantile_levels)):
            raise ValueError("values must be [rows x quantiles] and match point length")
        if len(self.horizons) != len(self.point):
            raise ValueError("one horizon per row required")

    def __len__(self) -> int:
        return len(self.point)

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.values, axis=1) >= 0))


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    crps: float
    n_samples: int

    def __post_init__(self):
        if min(self.mae, self.rmse, self.crps) < 0:
            raise ValueError("metrics must be non-negative")
        # Jensen: rmse >= mae, allow rounding noise
        if self.rmse < self.mae - 1e-12 * max(1.0, self.mae):
            raise ValueError("rmse < mae is impossible")

    def as_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "crps": self.crps, "n_samples": self.n_samples}


def _paired(pred, obs) -> tuple[np.ndarray, np.ndarray]:
    pred = _finite_vector(pred, "pred")
    obs = _finite_vector(obs, "obs")
    if pred.shape != obs.shape:
        raise ValueError(f"length mismatch: {pred.shape[0]} vs {obs.shape[0]}")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, obs


def mae(pred, obs) -> float:
    pred, obs = _paired(pred, obs)
    return float(np.mean(np.abs(pred - obs)))


def rmse(pred, obs) -> float:
    pred, obs = _paired(pred, obs)
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def pinball(pred, obs, q: float) -> np.ndarray:
    """Elementwise pinball (quantile) loss of ``pred`` as the q-quantile of ``obs``."""
    diff = np.asarray(obs, dtype=float) - np.asarray(pred, dtype=float)
    return np.maximum(q * diff, (q - 1.0) * diff)


def check_uniform_grid(levels, atol: float = 1e-9) -> np.ndarray:
    """Return ``levels`` if they are j/(Q+1), j=1..Q; raise otherwise."""
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or levels.size == 0:
        raise ValueError("quantile levels must be a non-empty vector")
    if np.any(np.diff(levels) <= 0):
        raise ValueError("quantile levels must be sorted increasing")
    expected = np.arange(1, levels.size + 1) / (levels.size + 1)
    if not np.allclose(levels, expected, rtol=0, atol=atol):
        raise ValueError("quantile grid must be uniform over (0, 1)")
    return levels


def crps_from_quantiles(fc: QuantileForecast, obs) -> float:
    """CRPS approximated by (2/Q) * sum of pinball losses, averaged over rows."""
    levels = check_uniform_grid(fc.quantile_levels)
    obs = _finite_vector(obs, "obs")
    if obs.shape[0] != len(fc):
        raise ValueError(f"observations ({obs.shape[0]}) not aligned with forecast rows ({len(fc)})")
    if obs.size == 0:
        raise ValueError("empty input")
    losses = pinball(fc.values, obs[:, None], levels[None, :])
    return float(np.mean(2.0 / levels.size * losses.sum(axis=1)))


def improvement(eps_model: float, eps_base: float) -> float:
    """Relative skill gain over a base model, in percent."""
    if not eps_base > 0:
        raise ValueError("base score must be positive")
    # same value as (1 - m/b) * 100, ordered to stay exact for decimal inputs
    return 100.0 * (eps_base - eps_model) / eps_base


def daylight_mask(clear_sky) -> np.ndarray:
    """True where the clear-sky proxy is positive (night rows drop out)."""
    return np.asarray(clear_sky, dtype=float) > 0


def evaluate(fc: QuantileForecast, obs, mask=None) -> MetricReport:
    obs = _finite_vector(obs, "obs")
    if obs.shape[0] != len(fc):
        raise ValueError("observations not aligned with forecast")
    if mask is None:
        mask = np.ones(obs.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    sub = QuantileForecast(
        fc.issue_time, fc.horizons[mask], fc.quantile_levels, fc.values[mask], fc.point[mask]
    )
    return MetricReport(
        mae=mae(sub.point, obs[mask]),
        rmse=rmse(sub.point, obs[mask]),
        crps=crps_from_quantiles(sub, obs[mask]),
        n_samples=int(mask.sum()),
    )


def uniform_levels(n: int) -> np.ndarray:
    return np.arange(1, n + 1) / (n + 1)
