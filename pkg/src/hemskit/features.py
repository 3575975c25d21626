"""Predictor sets for PV forecasting built from NWP grids.

Three nested designs are produced:

* ``base`` - month, hour and the six NWP variables at the grid point nearest
  the site;
* ``T`` - base plus lags/leads along the forecast lead axis, centered moving
  variances and the previous NWP run's value for the same valid time;
* ``F`` - T plus spatial standard deviation, inverse-distance weighted
  average and per-variable principal component scores of the whole grid.

Rows are keyed by ``(run index, lead hour)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

VARIABLES = ("swflx", "temp", "cfl", "cfm", "cfh", "cft")
CLOUD_VARIABLES = ("cfl", "cfm", "cfh", "cft")
DEFAULT_LAGS = (1, 2)
DEFAULT_LEADS = (1, 2)
DEFAULT_WINDOWS = (3, 7, 11)


@dataclass
class NwpGrid:
    """Forecast fields ``data[run, lead, point, variable]``."""

    run_times: np.ndarray
    lead_times: np.ndarray
    points: np.ndarray
    data: np.ndarray
    variables: tuple[str, ...] = VARIABLES

    def __post_init__(self):
        self.run_times = np.asarray(self.run_times, dtype="datetime64[s]")
        self.lead_times = np.asarray(self.lead_times, dtype=int)
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.data = np.array(self.data, dtype=float)
        self.variables = tuple(self.variables)
        shape = (len(self.run_times), len(self.lead_times), len(self.points), len(self.variables))
        if self.data.shape != shape:
            raise ValueError(f"data shape {self.data.shape} does not match {shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("NWP data contains non-finite values")
        if np.any(np.diff(self.lead_times) != 1):
            raise ValueError("lead times must be consecutive hours")
        for name in CLOUD_VARIABLES:
            if name in self.variables:
                v = self.variables.index(name)
                self.data[..., v] = np.clip(self.data[..., v], 0.0, 1.0)
        if "swflx" in self.variables:
            v = self.variables.index("swflx")
            self.data[..., v] = np.maximum(self.data[..., v], 0.0)
        if "temp" in self.variables and np.any(self.data[..., self.variables.index("temp")] <= 0):
            raise ValueError("temperature must be > 0 K")

    @property
    def run_interval(self) -> int:
        """Hours between consecutive runs (0 for a single run)."""
        if len(self.run_times) < 2:
            return 0
        return int((self.run_times[1] - self.run_times[0]) / np.timedelta64(1, "h"))

    def valid_times(self) -> np.ndarray:
        return self.run_times[:, None] + self.lead_times[None, :].astype("timedelta64[h]")

    def nearest_point(self, target) -> int:
        d = np.sum((self.points - np.asarray(target, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d))

    def variable(self, name: str) -> np.ndarray:
        return self.data[..., self.variables.index(name)]


@dataclass
class FeatureMatrix:
    """Named feature columns over keyed rows."""

    keys: np.ndarray
    columns: list[str]
    values: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        if self.values.shape != (len(self.keys), len(self.columns)):
            raise ValueError(f"values {self.values.shape} vs {len(self.keys)} rows x {len(self.columns)} columns")

    def __len__(self) -> int:
        return len(self.keys)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def hstack(self, other: "FeatureMatrix") -> "FeatureMatrix":
        if len(other) != len(self) or not np.array_equal(other.keys, self.keys):
            raise ValueError("row keys differ")
        clash = set(self.columns) & set(other.columns)
        if clash:
            raise ValueError(f"column collision: {sorted(clash)}")
        return FeatureMatrix(self.keys, self.columns + other.columns,
                             np.hstack([self.values, other.values]), self.times)

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        times = None if self.times is None else self.times[rows]
        return FeatureMatrix(self.keys[rows], list(self.columns), self.values[rows], times)

    def complete_rows(self) -> np.ndarray:
        return np.all(np.isfinite(self.values), axis=1)

    def dropna(self) -> "FeatureMatrix":
        return self.take(np.flatnonzero(self.complete_rows()))


def _row_keys(n_runs: int, n_leads: int) -> np.ndarray:
    run, lead = np.meshgrid(np.arange(n_runs), np.arange(n_leads), indexing="ij")
    return np.stack([run.ravel(), lead.ravel()], axis=1)


def seasonal_features(timestamps, keys=None) -> FeatureMatrix:
    ts = np.asarray(timestamps, dtype="datetime64[h]").ravel()
    months = ts.astype("datetime64[M]").astype(int) % 12 + 1
    hours = (ts - ts.astype("datetime64[D]")).astype(int)
    if keys is None:
        keys = np.arange(len(ts))
    return FeatureMatrix(np.asarray(keys), ["month", "hour"],
                         np.stack([months, hours], axis=1).astype(float), ts)


def centered_variance(x: np.ndarray, window: int) -> np.ndarray:
    """Sample variance over a centered window along the last axis (NaN at edges)."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window sizes must be odd")
    x = np.asarray(x, dtype=float)
    if window > x.shape[-1]:
        raise ValueError(f"window {window} longer than series ({x.shape[-1]})")
    half = window // 2
    out = np.full(x.shape, np.nan)
    if window == 1:
        return out
    out[..., half : x.shape[-1] - half] = sliding_window_view(x, window, axis=-1).var(axis=-1, ddof=1)
    return out


def shift(x: np.ndarray, offset: int) -> np.ndarray:
    """``out[..., t] = x[..., t + offset]`` with NaN where out of range."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, np.nan)
    n = x.shape[-1]
    if offset >= 0:
        out[..., : n - offset] = x[..., offset:]
    else:
        out[..., -offset:] = x[..., : n + offset]
    return out


def temporal_features(
    series: dict[str, np.ndarray],
    lags=DEFAULT_LAGS,
    leads=DEFAULT_LEADS,
    var_windows=DEFAULT_WINDOWS,
    previous_run: dict[str, np.ndarray] | None = None,
) -> FeatureMatrix:
    """Lag/lead copies, centered variances and previous-run values.

    ``series`` maps a variable name to values along the lead axis, either one
    series ``[lead]`` or one per run ``[run, lead]``. Lags and leads never
    cross run boundaries; positions without enough context are NaN.
    """
    cols, blocks = [], []
    shape = None
    for name, x in series.items():
        x = np.atleast_2d(np.asarray(x, dtype=float))
        shape = x.shape
        for w in var_windows:
            if w > x.shape[-1]:
                raise ValueError(f"window {w} longer than series ({x.shape[-1]})")
        for lag in lags:
            cols.append(f"{name}_lag{lag}")
            blocks.append(shift(x, -lag))
        for lead in leads:
            cols.append(f"{name}_lead{lead}")
            blocks.append(shift(x, lead))
        for w in var_windows:
            cols.append(f"{name}_var{w}")
            blocks.append(centered_variance(x, w))
        if previous_run is not None:
            cols.append(f"{name}_prev_run")
            blocks.append(np.atleast_2d(previous_run[name]))
    if shape is None:
        raise ValueError("no series given")
    values = np.stack([b.reshape(-1) for b in blocks], axis=1)
    return FeatureMatrix(_row_keys(*shape), cols, values)


def previous_run_values(grid: NwpGrid, field_: np.ndarray) -> np.ndarray:
    """Value of run ``r - 1`` for the valid time of ``(r, lead)``; NaN if unavailable.

    ``field_`` is ``[run, lead]``.
    """
    step = grid.run_interval
    out = np.full(field_.shape, np.nan)
    if step == 0:
        return out
    n_leads = field_.shape[1]
    if step < n_leads:
        out[1:, : n_leads - step] = field_[:-1, step:]
    return out


def idw_weights(points: np.ndarray, target, power: float = 2.0, eps: float = 1e-6) -> np.ndarray:
    d = np.sqrt(np.sum((np.asarray(points, dtype=float) - np.asarray(target, dtype=float)) ** 2, axis=1))
    w = 1.0 / np.maximum(d, eps) ** power
    return w / w.sum()


def spatial_features(grid: NwpGrid, target) -> FeatureMatrix:
    """Spatial (population) standard deviation and IDW average per variable and row."""
    if len(grid.points) < 2:
        raise ValueError("spatial features need at least two grid points")
    w = idw_weights(grid.points, target)
    cols, blocks = [], []
    for v, name in enumerate(grid.variables):
        field_ = grid.data[..., v]  # [run, lead, point]
        cols += [f"{name}_sstd", f"{name}_idw"]
        blocks += [field_.std(axis=-1), field_ @ w]
    values = np.stack([b.reshape(-1) for b in blocks], axis=1)
    return FeatureMatrix(_row_keys(*grid.data.shape[:2]), cols, values)


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    name: str = ""

    @property
    def explained_ratio(self) -> np.ndarray:
        total = self._total_variance
        return self.explained_variance / total if total > 0 else np.zeros_like(self.explained_variance)

    _total_variance: float = field(default=0.0, repr=False)


def fit_pca(samples: np.ndarray, n_pc: int, name: str = "") -> PcaModel:
    """Principal axes of mean-centered ``samples`` ([time x point]) via SVD.

    Each component is signed so its largest-magnitude loading is positive.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise ValueError("samples must be a [time x point] matrix")
    if not 1 <= n_pc <= min(X.shape):
        raise ValueError(f"n_pc must be in [1, {min(X.shape)}]")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:n_pc].copy()
    for i, row in enumerate(comps):
        if row[np.argmax(np.abs(row))] < 0:
            comps[i] = -row
    var = s**2 / max(X.shape[0] - 1, 1)
    return PcaModel(mean, comps, var[:n_pc], name, float(var.sum()))


def apply_pca(model: PcaModel, samples: np.ndarray, keys=None) -> FeatureMatrix:
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    scores = (X - model.mean) @ model.components.T
    prefix = f"{model.name}_" if model.name else ""
    cols = [f"{prefix}pc{i + 1}" for i in range(scores.shape[1])]
    if keys is None:
        keys = np.arange(len(X))
    return FeatureMatrix(np.asarray(keys), cols, scores)


def grid_pca_models(grid: NwpGrid, rows: np.ndarray | None = None, n_pc: int = 3) -> list[PcaModel]:
    """One PCA per NWP variable, fit on the selected (run, lead) rows."""
    models = []
    n_rows = grid.data.shape[0] * grid.data.shape[1]
    for v, name in enumerate(grid.variables):
        X = grid.data[..., v].reshape(n_rows, -1)
        if rows is not None:
            X = X[rows]
        models.append(fit_pca(X, min(n_pc, min(X.shape)), name=name))
    return models


def nwp_point_features(grid: NwpGrid, point: int) -> FeatureMatrix:
    values = grid.data[:, :, point, :].reshape(-1, len(grid.variables))
    return FeatureMatrix(_row_keys(*grid.data.shape[:2]), list(grid.variables), values)


@dataclass
class DesignConfig:
    lags: tuple = DEFAULT_LAGS
    leads: tuple = DEFAULT_LEADS
    var_windows: tuple = DEFAULT_WINDOWS
    n_pc: int = 3
    previous_run: bool = True
    horizons: tuple | None = None  # lead hours kept as samples; None keeps all


def assemble_design(
    kind: str,
    grid: NwpGrid,
    target,
    config: DesignConfig | None = None,
    pca_models: list[PcaModel] | None = None,
) -> tuple[FeatureMatrix, list[PcaModel] | None]:
    """Build the base, T or F design over every complete ``(run, lead)`` row.

    For ``F``, ``pca_models`` fitted on training rows should be passed when
    building a test design; otherwise they are fitted on the whole grid.
    """
    if kind not in ("base", "T", "F"):
        raise ValueError(f"unknown model kind {kind!r}")
    config = config or DesignConfig()
    centre = grid.nearest_point(target)
    keys = _row_keys(*grid.data.shape[:2])
    design = seasonal_features(grid.valid_times().ravel(), keys)
    design = design.hstack(nwp_point_features(grid, centre))
    if kind in ("T", "F"):
        local = {name: grid.data[:, :, centre, v] for v, name in enumerate(grid.variables)}
        prev = None
        if config.previous_run:
            prev = {name: previous_run_values(grid, x) for name, x in local.items()}
        design = design.hstack(
            temporal_features(local, config.lags, config.leads, config.var_windows, prev)
        )
    if kind == "F":
        design = design.hstack(spatial_features(grid, target))
        if pca_models is None:
            pca_models = grid_pca_models(grid, n_pc=config.n_pc)
        n_rows = len(keys)
        for v, model in enumerate(pca_models):
            design = design.hstack(apply_pca(model, grid.data[..., v].reshape(n_rows, -1), keys))
    if config.horizons is not None:
        design = design.take(np.flatnonzero(np.isin(keys[:, 1], grid.lead_times.searchsorted(config.horizons))))
    return design.dropna(), pca_models if kind == "F" else None


# -- synthetic data ----------------------------------------------------------


def clear_sky_index(times) -> np.ndarray:
    """Crude clear-sky power proxy in [0, 1]; zero at night."""
    t = np.asarray(times, dtype="datetime64[h]")
    hour = (t - t.astype("datetime64[D]")).astype(float)
    doy = (t - t.astype("datetime64[Y]")).astype("timedelta64[D]").astype(float)
    season = 0.7 + 0.3 * np.cos(2 * np.pi * (doy - 172) / 365.0)
    return np.maximum(0.0, np.sin(np.pi * (hour - 6.0) / 12.0)) * season


@dataclass
class SyntheticPv:
    grid: NwpGrid
    target: tuple
    observed: np.ndarray  # [run, lead] kW at each valid time
    clear_sky: np.ndarray  # [run, lead]
    capacity: float


def synthetic_pv_dataset(
    seed: int,
    days: int = 120,
    side: int = 5,
    max_lead: int = 52,
    start: str = "2015-05-01T00:00",
    capacity: float = 4.0,
) -> SyntheticPv:
    """Seeded NWP grid plus PV observations where the grid carries signal.

    The site's true cloud cover is a smooth spatial mean of a latent field
    that the forecast misplaces in time and blurs with point noise, so the
    spatial and temporal descriptors recover information the central grid
    point alone misses.
    """
    rng = np.random.default_rng(seed)
    lat = np.linspace(41.0, 41.4, side)
    lon = np.linspace(-8.8, -8.4, side)
    points = np.array([(a, b) for a in lat for b in lon])
    target = (float(lat[side // 2]), float(lon[side // 2]))
    hours = days * 24 + max_lead + 4
    t0 = np.datetime64(start, "h")
    timeline = t0 + np.arange(-2, hours - 2).astype("timedelta64[h]")

    # latent weather: AR(1) factors with smooth spatial loadings
    n_fac = 3
    fac = np.zeros((hours, n_fac))
    for t in range(1, hours):
        fac[t] = 0.9 * fac[t - 1] + rng.normal(0, 0.45, n_fac)
    u = (points[:, 0] - lat.mean()) / np.ptp(lat)
    v = (points[:, 1] - lon.mean()) / np.ptp(lon)
    loadings = np.stack([np.ones_like(u), 2.5 * u, 2.5 * v])  # [fac, point]
    layers = {}
    for name, bias in (("cfl", -0.3), ("cfm", -0.6), ("cfh", -0.9)):
        mix = rng.normal(1.0, 0.2, n_fac)
        z = (fac * mix) @ loadings + bias + rng.normal(0, 0.3, (hours, len(points)))
        layers[name] = 1.0 / (1.0 + np.exp(-2.0 * z))
    layers["cft"] = 1.0 - (1.0 - layers["cfl"]) * (1.0 - layers["cfm"])
    cs = clear_sky_index(timeline)
    temp = 288.0 + 8.0 * cs[:, None] + 0.5 * fac[:, :1] @ loadings[:1]

    truth_cft = layers["cft"].mean(axis=1)  # site sees the areal mean
    noise_scale = 0.03 + 0.12 * truth_cft
    pv_hourly = capacity * cs * (1.0 - 0.75 * truth_cft) * (1.0 + noise_scale * rng.normal(size=hours))
    pv_hourly = np.clip(pv_hourly, 0.0, capacity)

    run_times = t0 + (24 * np.arange(days)).astype("timedelta64[h]")
    lead_times = np.arange(max_lead + 1)
    R, L, P = days, len(lead_times), len(points)
    data = np.zeros((R, L, P, len(VARIABLES)))
    observed = np.zeros((R, L))
    clear = np.zeros((R, L))
    for r in range(R):
        base = 24 * r + 2
        timing = int(rng.integers(-1, 2))  # run-level timing error in hours
        idx = np.clip(base + lead_times + timing, 0, hours - 1)
        growth = 1.0 + lead_times[:, None] / 48.0
        cloud = {}
        for name in ("cfl", "cfm", "cfh"):
            noisy = layers[name][idx] + 0.12 * growth * rng.normal(size=(L, P))
            cloud[name] = np.clip(noisy, 0.0, 1.0)
        cloud["cft"] = 1.0 - (1.0 - cloud["cfl"]) * (1.0 - cloud["cfm"])
        sw = 1000.0 * cs[base + lead_times][:, None] * (1.0 - 0.75 * cloud["cft"])
        data[r, :, :, 0] = sw
        data[r, :, :, 1] = temp[idx] + rng.normal(0, 0.5, (L, P))
        for j, name in enumerate(("cfl", "cfm", "cfh", "cft")):
            data[r, :, :, 2 + j] = cloud[name]
        observed[r] = pv_hourly[base + lead_times]
        clear[r] = cs[base + lead_times]
    grid = NwpGrid(run_times, lead_times, points, data)
    return SyntheticPv(grid, target, observed, clear, capacity)
