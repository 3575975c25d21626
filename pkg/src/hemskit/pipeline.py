"""Forecasting pipeline: base, T and F designs fitted and scored on one split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MetricReport, QuantileForecast, daylight_mask, evaluate, improvement, uniform_levels
from .features import DesignConfig, FeatureMatrix, NwpGrid, assemble_design, clear_sky_index, grid_pca_models
from .gbt import GbtParams, QuantileGbtModel, fit_quantile_gbt, predict_quantiles

KINDS = ("base", "T", "F")


@dataclass
class KindResult:
    model: QuantileGbtModel
    forecast: QuantileForecast
    observed: np.ndarray
    keys: np.ndarray  # (run, lead index) of test rows
    report: MetricReport
    train_loss: list  # per quantile, loss per boosting stage


@dataclass
class ForecastRun:
    results: dict[str, KindResult]
    levels: np.ndarray

    def improvements(self, reference: str = "base") -> dict:
        base = self.results[reference].report
        out = {}
        for kind, res in self.results.items():
            if kind == reference:
                continue
            out[kind] = {m: improvement(getattr(res.report, m), getattr(base, m)) for m in ("mae", "rmse", "crps")}
        return out


def observations_on_grid(grid: NwpGrid, times, values) -> np.ndarray:
    """Observed value at every (run, lead) valid time; NaN where none was recorded."""
    lookup = dict(zip(np.asarray(times, dtype="datetime64[s]").tolist(), np.asarray(values, dtype=float)))
    vt = grid.valid_times().astype("datetime64[s]")
    return np.array([lookup.get(t, np.nan) for t in vt.ravel().tolist()]).reshape(vt.shape)


def run_forecast(
    grid: NwpGrid,
    observed: np.ndarray,
    target,
    capacity: float,
    train_runs,
    horizons=tuple(range(1, 49)),
    levels=None,
    params: GbtParams | None = None,
    kinds=KINDS,
    clear_sky: np.ndarray | None = None,
) -> ForecastRun:
    """Fit each design on the training runs and score it on the rest.

    ``train_runs`` is either a count (runs ``< train_runs`` train, a
    chronological split) or the indices of the training runs. All designs are scored on the same rows (those complete under every
    design), over daylight hours only.
    """
    R = grid.data.shape[0]
    if np.ndim(train_runs) == 0:
        is_train = np.arange(R) < int(train_runs)
    else:
        is_train = np.zeros(R, dtype=bool)
        is_train[np.asarray(train_runs, dtype=int)] = True
    if not 0 < is_train.sum() < R:
        raise ValueError(f"need between 1 and {R - 1} training runs")
    levels = uniform_levels(9) if levels is None else np.asarray(levels, dtype=float)
    params = params or GbtParams()
    if clear_sky is None:
        clear_sky = clear_sky_index(grid.valid_times().ravel()).reshape(observed.shape)
    config = DesignConfig(horizons=tuple(horizons))
    L = grid.data.shape[1]
    train_rows = np.flatnonzero(np.repeat(is_train, L))
    designs: dict[str, FeatureMatrix] = {}
    for kind in kinds:
        pcs = grid_pca_models(grid, train_rows, config.n_pc) if kind == "F" else None
        designs[kind], _ = assemble_design(kind, grid, target, config, pcs)
    common = None
    for X in designs.values():
        keyset = {tuple(k) for k in X.keys.tolist()}
        common = keyset if common is None else common & keyset
    results = {}
    for kind, X in designs.items():
        keep = [i for i, k in enumerate(X.keys.tolist()) if tuple(k) in common]
        X = X.take(np.array(keep, dtype=int))
        y = observed[X.keys[:, 0], X.keys[:, 1]]
        ok = np.isfinite(y)
        X, y = X.take(np.flatnonzero(ok)), y[ok]
        cs = clear_sky[X.keys[:, 0], X.keys[:, 1]]
        tr = is_train[X.keys[:, 0]]
        if tr.sum() == 0 or (~tr).sum() == 0:
            raise ValueError(f"design {kind!r} has no complete rows on one side of the split "
                             f"({int(tr.sum())} train, {int((~tr).sum())} test)")
        model = fit_quantile_gbt(X.take(np.flatnonzero(tr)), y[tr], levels, params, capacity)
        test = X.take(np.flatnonzero(~tr))
        horizons_te = grid.lead_times[test.keys[:, 1]]
        fc = predict_quantiles(model, test, horizons_te)
        report = evaluate(fc, y[~tr], daylight_mask(cs[~tr]))
        results[kind] = KindResult(model, fc, y[~tr], test.keys, report, [e.train_loss for e in model.ensembles])
    return ForecastRun(results, levels)
