"""Models hub and the pipelines behind each CLI command.

The hub is in-process: datasets are published to it and requested from it
through plain method calls, and every call is appended to a message log whose
JSON-lines form is the intended wire format.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flexibility as flex
from .core import PanelSeries, QuantileForecast, daylight_mask, evaluate, improvement
from .features import NwpGrid, clear_sky_index, synthetic_pv_dataset
from .gbt import GbtParams
from .io import (SchemaError, dumps_json, read_nwp_csv, read_observations_csv, read_series_csv, to_csv_text)
from .pipeline import observations_on_grid, run_forecast
from .scheduler import (Tariff, baseline_schedule, optimize_schedule, replay_violations,
                        savings_percent)
from .var_admm import (audit_data_flow, build_var_design, curious_node_reconstruct, example_partition,
                       fit_centralized, fit_consensus_predictors, fit_sharing_examples, lambda_max,
                       lasso_objective, predictor_partition, simulate_var)


class NonConvergence(RuntimeError):
    """A numerical routine stopped before meeting its tolerance."""


COMMANDS = ("forecast", "collab", "flex", "schedule", "evaluate")

DEFAULTS = {
    "forecast": {
        "nwp_csv": None,  # None: seeded synthetic grid
        "pv_csv": None,
        "target": None,
        "capacity": None,
        "synthetic": {"days": 120, "side": 5},
        "train_fraction": 0.75,
        "max_horizon": 48,
        "n_levels": 9,
        "gbt": {"n_trees": 100, "max_depth": 4, "learning_rate": 0.1, "min_samples_leaf": 5, "max_bins": 64},
        "kinds": ["base", "T", "F"],
    },
    "collab": {
        "panel_csv": None,
        "synthetic": {"n": 5, "T": 500},
        "p": 2,
        "lam": None,
        "lam_ratio": 0.1,  # of lambda_max, used when lam is None
        "rho": None,
        "n_workers": None,  # None: one worker per series for consensus
        "sharing_workers": 4,
        "tol": 1e-6,
        "max_iter": 5000,
    },
    "flex": {
        "fleet": None,  # DeviceFleet dict; None: seeded default fleet
        "horizon": 8,
        "n_scenarios": 10,
        "alpha": 0.9,
        "K": 20,
        "baseline": None,
        "epso": {"swarm": 30, "generations": 200, "tau": 0.2, "communication": 0.8, "archive_radius": 0.02},
        "svdd": {"nu": 0.05, "gamma": None, "coef0": 0.0, "self_term": "kernel"},
        "n_test": 20,
        "scale": 1.5,
    },
    "schedule": {
        "horizon": 24,
        "prices": None,  # None: two-level time-of-use tariff
        "feed_in": 0.0,
        "pv": None,  # None: clear-sky bell of pv_capacity
        "pv_capacity": 3.0,
        "base_load": None,
        "fleet": None,
    },
    "evaluate": {
        "forecast_csv": None,
        "observations_csv": None,
        "reference": "base",
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise SchemaError(f"unknown command {self.command!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise SchemaError("seed must be an integer")
        unknown = sorted(set(self.params) - set(DEFAULTS[self.command]))
        if unknown:
            raise SchemaError(f"unknown {self.command} parameters: {unknown}")

    def resolved(self) -> dict:
        return _merge(DEFAULTS[self.command], self.params)

    def to_json(self) -> str:
        return dumps_json({"command": self.command, "seed": self.seed, "params": self.params})

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config is not valid JSON: {exc}") from None
        if not isinstance(d, dict) or "command" not in d:
            raise SchemaError("config must be an object with a 'command' field")
        extra = sorted(set(d) - {"command", "seed", "params"})
        if extra:
            raise SchemaError(f"unknown config fields: {extra}")
        return cls(d["command"], d.get("seed", 0), d.get("params", {}))


def _payload_digest(obj) -> str:
    if isinstance(obj, NwpGrid):
        obj = obj.data
    if isinstance(obj, PanelSeries):
        obj = obj.to_array()
    if isinstance(obj, np.ndarray):
        raw = np.ascontiguousarray(obj, dtype=float).tobytes()
    else:
        raw = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(raw).hexdigest()[:16]


class ModelsHub:
    """Stores datasets and models; every publish and request is logged."""

    def __init__(self):
        self._store: dict = {}
        self.log: list[dict] = []

    def _record(self, op: str, name: str, party: str, payload):
        self.log.append({"seq": len(self.log), "op": op, "name": name, "party": party,
                         "digest": _payload_digest(payload)})

    def publish(self, name: str, payload, sender: str = "hub"):
        self._store[name] = payload
        self._record("publish", name, sender, payload)

    def request(self, name: str, requester: str):
        if name not in self._store:
            raise KeyError(f"hub has no dataset {name!r}")
        payload = self._store[name]
        self._record("request", name, requester, payload)
        return payload

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.log)


# -- forecast ----------------------------------------------------------------


def _forecast_rows(kind: str, fc: QuantileForecast, grid: NwpGrid, keys: np.ndarray):
    issue = grid.run_times[keys[:, 0]]
    for i in range(len(fc)):
        base = [kind, str(issue[i]), str(fc.valid_times[i]), int(fc.horizons[i])]
        yield base + ["point", float(fc.point[i])]
        for j, q in enumerate(fc.quantile_levels):
            yield base + [repr(float(q)), float(fc.values[i, j])]


FORECAST_HEADER = ["model", "issue_time", "valid_time", "horizon", "level", "value"]


def cmd_forecast(cfg: RunConfig, out: Path, hub: ModelsHub | None = None) -> dict:
    p = cfg.resolved()
    hub = hub or ModelsHub()
    if p["nwp_csv"] is not None:
        grid = read_nwp_csv(p["nwp_csv"])
        if p["pv_csv"] is None:
            raise SchemaError("pv_csv is required together with nwp_csv")
        pv = read_series_csv(p["pv_csv"])
        times = pv.start + np.arange(pv.length) * pv.step
        observed = observations_on_grid(grid, times, pv.to_array()[0])
        if p["target"] is None or p["capacity"] is None:
            raise SchemaError("target and capacity are required with file inputs")
        target, capacity = tuple(p["target"]), float(p["capacity"])
    else:
        ds = synthetic_pv_dataset(cfg.seed, days=p["synthetic"]["days"], side=p["synthetic"]["side"],
                                  max_lead=p["max_horizon"] + 28)  # previous-run values need lead + 24
        grid, observed, target, capacity = ds.grid, ds.observed, ds.target, ds.capacity
    hub.publish("nwp/history", grid)
    hub.publish("pv/history", observed, sender="hems")

    # phase 1: the HEMS retrieves the post-processed NWP history
    grid = hub.request("nwp/history", "hems")
    R = grid.data.shape[0]
    train_runs = max(1, min(R - 1, int(round(p["train_fraction"] * R))))
    params = GbtParams(seed=cfg.seed, **p["gbt"])
    horizons = tuple(h for h in range(1, p["max_horizon"] + 1) if h in set(grid.lead_times.tolist()))
    # phases 2 and 3: features and model fit; phase 4: forecasts for held-out runs
    run = run_forecast(grid, observed, target, capacity, train_runs, horizons,
                       levels=np.arange(1, p["n_levels"] + 1) / (p["n_levels"] + 1), params=params,
                       kinds=tuple(p["kinds"]))
    hub.request("nwp/history", "hems")  # operational runs are served from the same store

    rows = []
    for kind, res in run.results.items():
        rows.extend(_forecast_rows(kind, res.forecast, grid, res.keys))
    (out / "forecast.csv").write_text(to_csv_text(FORECAST_HEADER, rows), encoding="utf-8", newline="")

    first = next(iter(run.results.values()))
    vt = first.forecast.valid_times
    order = np.argsort(vt, kind="stable")
    seen, obs_t, obs_v = set(), [], []
    for i in order:
        t = vt[i]
        if t not in seen:
            seen.add(t)
            obs_t.append(t)
            obs_v.append(first.observed[i])
    obs_rows = [[str(t), "pv", float(v)] for t, v in zip(obs_t, obs_v)]
    (out / "observations.csv").write_text(to_csv_text(["timestamp", "id", "value"], obs_rows),
                                          encoding="utf-8", newline="")

    coverage = {}
    for kind, res in run.results.items():
        cs = clear_sky_index(res.forecast.valid_times)
        day = daylight_mask(cs)
        coverage[kind] = {repr(float(q)): float(np.mean(res.observed[day] <= res.forecast.values[day, j]))
                          for j, q in enumerate(res.forecast.quantile_levels)}
    metrics = {
        "models": {k: r.report.as_dict() for k, r in run.results.items()},
        "improvement_percent": run.improvements() if "base" in run.results else {},
        "coverage": coverage,
        "train_runs": train_runs,
        "test_runs": R - train_runs,
    }
    (out / "metrics.json").write_text(dumps_json(metrics), encoding="utf-8")
    (out / "hub_log.jsonl").write_text(hub.to_jsonl(), encoding="utf-8")
    return metrics


# -- evaluate ----------------------------------------------------------------


def read_forecast_csv(path) -> dict[str, tuple[QuantileForecast, np.ndarray]]:
    """Per model: forecast and the valid time of each row."""
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in FORECAST_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: row 1: missing columns {missing}")
        groups: dict = {}
        for r, rec in enumerate(reader, start=2):
            try:
                value = float(rec["value"])
                horizon = int(rec["horizon"])
                valid = np.datetime64(rec["valid_time"], "s")
                level = rec["level"] if rec["level"] == "point" else float(rec["level"])
            except ValueError:
                raise SchemaError(f"{path}: row {r}: malformed value, horizon, level or valid_time") from None
            key = (rec["issue_time"], valid, horizon)
            groups.setdefault(rec["model"], {}).setdefault(key, {})[level] = value
    out = {}
    for model, rows in groups.items():
        keys = list(rows)
        levels = sorted(lv for lv in rows[keys[0]] if lv != "point")
        for key in keys:
            if sorted(lv for lv in rows[key] if lv != "point") != levels or "point" not in rows[key]:
                raise SchemaError(f"{path}: model {model!r}: inconsistent levels at {key}")
        values = np.array([[rows[k][lv] for lv in levels] for k in keys])
        point = np.array([rows[k]["point"] for k in keys])
        valid = np.array([k[1] for k in keys])
        fc = QuantileForecast(None, np.array([k[2] for k in keys]), levels, values, point, valid_times=valid)
        out[model] = (fc, valid)
    return out


def cmd_evaluate(cfg: RunConfig, out: Path, hub: ModelsHub | None = None) -> dict:
    p = cfg.resolved()
    if p["forecast_csv"] is None or p["observations_csv"] is None:
        raise SchemaError("evaluate needs forecast_csv and observations_csv")
    forecasts = read_forecast_csv(p["forecast_csv"])
    lookup = {t.tolist(): v for t, v in read_observations_csv(p["observations_csv"]).items()}
    reports = {}
    for model, (fc, valid) in sorted(forecasts.items()):
        y = np.array([lookup.get(t, np.nan) for t in valid.astype("datetime64[s]").tolist()])
        if np.any(np.isnan(y)):
            raise SchemaError(f"observations missing for {int(np.isnan(y).sum())} forecast rows of {model!r}")
        reports[model] = evaluate(fc, y, daylight_mask(clear_sky_index(valid)))
    result = {"models": {m: r.as_dict() for m, r in reports.items()}}
    ref = p["reference"]
    if ref in reports:
        result["improvement_percent"] = {
            m: {k: improvement(getattr(r, k), getattr(reports[ref], k)) for k in ("mae", "rmse", "crps")}
            for m, r in reports.items() if m != ref
        }
    (out / "metrics.json").write_text(dumps_json(result), encoding="utf-8")
    return result


# -- collab ------------------------------------------------------------------


def cmd_collab(cfg: RunConfig, out: Path, hub: ModelsHub | None = None) -> dict:
    p = cfg.resolved()
    if p["panel_csv"] is not None:
        panel = read_series_csv(p["panel_csv"])
        values = panel.to_array()
        ids = list(panel.ids)
    else:
        values, _ = simulate_var(p["synthetic"]["n"], p["p"], p["synthetic"]["T"], seed=cfg.seed)
        ids = [f"s{i}" for i in range(values.shape[0])]
    if values.shape[0] < 2:
        raise SchemaError("collaborative forecasting needs a panel with at least two series")
    design = build_var_design(values, p["p"])
    lam = p["lam"] if p["lam"] is not None else p["lam_ratio"] * lambda_max(design)
    tol, max_iter = p["tol"], p["max_iter"]
    n_cons = p["n_workers"] or design.n
    cent = fit_centralized(design, lam, rho=p["rho"], tol=tol, max_iter=max_iter)
    cons, cons_log = fit_consensus_predictors(design, lam, rho=p["rho"] or 1.0, n_workers=n_cons,
                                              tol=tol, max_iter=max_iter)
    shar, shar_log = fit_sharing_examples(design, lam, rho=p["rho"], n_workers=p["sharing_workers"],
                                          tol=tol, max_iter=max_iter)
    stalled = [m.method for m in (cent, cons, shar) if not m.converged]
    if stalled:
        raise NonConvergence(f"ADMM did not converge within {max_iter} iterations: {stalled}")

    ref = np.linalg.norm(cent.B)
    models = {}
    for name, m in (("centralized", cent), ("consensus", cons), ("sharing", shar)):
        models[name] = {
            "B": m.B.tolist(),
            "iterations": m.iterations,
            "rho": m.rho,
            "objective": lasso_objective(design, m.B, lam),
            "relative_difference_to_centralized": float(np.linalg.norm(m.B - cent.B) / max(ref, 1e-300)),
            "nonzeros": m.nonzeros(1e-8),
        }
    result = {"series": ids, "p": p["p"], "lambda": lam, "means": design.means.tolist(), "models": models}

    Y_hat = curious_node_reconstruct(cons_log)
    err = float(np.max(np.abs(Y_hat - design.Y)))
    audit_s = audit_data_flow(design, "examples", example_partition(design, p["sharing_workers"]))
    audit_c = audit_data_flow(design, "predictors", predictor_partition(design, n_cons))
    privacy = {
        "consensus": {"reconstruction_max_abs_error": err, "verdict": "leaks" if err <= 1e-8 else "no leak"},
        "audit": {
            "sharing": {"raw_data_crossed": audit_s.raw_data_crossed, "exposures": [list(e) for e in audit_s.exposures]},
            "consensus": {"raw_data_crossed": audit_c.raw_data_crossed,
                          "exposures": [list(e) for e in audit_c.exposures]},
        },
    }
    trace = []
    for name, m in (("centralized", cent), ("consensus", cons), ("sharing", shar)):
        trace.extend([name, k + 1, float(r), float(s)]
                     for k, (r, s) in enumerate(zip(m.primal_residuals, m.dual_residuals)))
    (out / "models.json").write_text(dumps_json(result), encoding="utf-8")
    (out / "privacy.json").write_text(dumps_json(privacy), encoding="utf-8")
    (out / "convergence.csv").write_text(to_csv_text(["method", "iteration", "primal", "dual"], trace),
                                         encoding="utf-8", newline="")
    (out / "round_log_consensus.jsonl").write_text(cons_log.to_jsonl(), encoding="utf-8")
    (out / "round_log_sharing.jsonl").write_text(shar_log.to_jsonl(), encoding="utf-8")
    return {"models": models, "privacy": privacy}


# -- flex --------------------------------------------------------------------


def default_baseline(T: int) -> np.ndarray:
    """Expected household net load (kW) over the flexibility horizon."""
    return 0.4 + 0.3 * np.sin(np.arange(T) / 3.0)


def cmd_flex(cfg: RunConfig, out: Path, hub: ModelsHub | None = None) -> dict:
    p = cfg.resolved()
    T = p["horizon"]
    fleet = flex.DeviceFleet.from_dict(p["fleet"]) if p["fleet"] else flex.default_fleet(T, cfg.seed)
    baseline = np.asarray(p["baseline"], dtype=float) if p["baseline"] is not None else default_baseline(T)
    if len(baseline) != T:
        raise SchemaError(f"baseline has {len(baseline)} values, horizon is {T}")
    pv = flex.pv_scenarios(fleet.pv_capacity, T, p["n_scenarios"], cfg.seed)
    try:
        ts = flex.epso_sample(fleet, baseline, pv, p["alpha"], p["K"], cfg.seed, flex.EpsoParams(**p["epso"]))
        svdd = flex.svdd_fit(ts, **p["svdd"])
    except (flex.NoFeasibleTrajectory, flex.SvddConvergenceError) as exc:
        raise NonConvergence(str(exc)) from None
    vb = flex.vbattery_fit(ts, soc_ini=0.0, dt=fleet.dt)
    split = flex.surrogate_test_sets(ts, fleet, n_test=p["n_test"], scale=p["scale"], seed=cfg.seed)
    table = flex.evaluate_surrogates(svdd, vb, split.feasible_test, split.unfeasible_test)

    svdd_json, vb_json = svdd.to_json(), vb.to_json()
    scans = {"svdd": flex.scan_for_vector(svdd_json, baseline), "vbattery": flex.scan_for_vector(vb_json, baseline)}
    embedded = any(s["embedded"] for s in scans.values())
    verdict = "baseline data embedded: fail" if embedded else "no baseline data embedded: pass"
    report = {
        "n_trajectories": len(ts),
        "duplicates": ts.duplicates,
        "accuracy_percent": table,
        "test_sizes": {"feasible": len(split.feasible_test), "unfeasible": len(split.unfeasible_test)},
        "privacy_scan": {"verdict": verdict, "detail": scans},
    }
    traj_rows = [[k, t, float(ts.trajectories[k, t])] for k in range(len(ts)) for t in range(T)]
    (out / "trajectories.csv").write_text(to_csv_text(["trajectory", "step", "value"], traj_rows),
                                          encoding="utf-8", newline="")
    (out / "svdd.json").write_text(svdd_json + "\n", encoding="utf-8")
    (out / "vbattery.json").write_text(vb_json + "\n", encoding="utf-8")
    (out / "report.json").write_text(dumps_json(report), encoding="utf-8")
    acc_rows = [[model, cls, "" if v is None else float(v)]
                for model in ("SVDD", "VB") for cls, v in table[model].items()]
    (out / "report.csv").write_text(to_csv_text(["model", "class", "accuracy_percent"], acc_rows),
                                    encoding="utf-8", newline="")
    return report


# -- schedule ----------------------------------------------------------------


def default_schedule_fleet(T: int) -> flex.DeviceFleet:
    ewh = flex.EwhConfig(volume=150.0, power=2.0, t_init=55.0, draws=_draws(T))
    loads = [
        flex.Shiftable("washing_machine", 1.2, 2, 0, T),
        flex.Shiftable("dishwasher", 1.0, 2, min(12, T - 2), T, start=min(19, T - 2)),
        flex.Shiftable("dryer", 2.0, 1, 0, T, start=min(18, T - 1)),
    ]
    return flex.DeviceFleet(ewh=ewh, shiftables=loads, pv_capacity=3.0)


def _draws(T: int) -> list:
    d = [0.0] * T
    for hour, litres in ((7, 40.0), (20, 50.0)):
        if hour < T:
            d[hour] = litres
    return d


def cmd_schedule(cfg: RunConfig, out: Path, hub: ModelsHub | None = None) -> dict:
    p = cfg.resolved()
    T = p["horizon"]
    hours = np.arange(T)
    prices = (np.asarray(p["prices"], dtype=float) if p["prices"] is not None
              else np.where((hours % 24 >= 8) & (hours % 24 < 22), 0.2, 0.1))
    T = len(prices)
    tariff = Tariff(prices, p["feed_in"])
    pv = (np.asarray(p["pv"], dtype=float) if p["pv"] is not None
          else p["pv_capacity"] * np.maximum(0.0, np.sin(np.pi * (np.arange(T) % 24 - 6) / 12)))
    base_load = np.asarray(p["base_load"], dtype=float) if p["base_load"] is not None else np.full(T, 0.3)
    fleet = flex.DeviceFleet.from_dict(p["fleet"]) if p["fleet"] else default_schedule_fleet(T)
    best = optimize_schedule(fleet, tariff, pv, base_load)
    base = baseline_schedule(fleet, tariff, pv, base_load)
    problems = replay_violations(fleet, best)
    if problems:
        raise NonConvergence(f"optimized schedule failed replay: {problems}")
    pct = savings_percent(base.cost, best.cost)
    result = {
        "optimized": best.to_dict(),
        "baseline": base.to_dict(),
        "savings_percent": pct,
        "summary": f"savings vs baseline: {round(pct, 2):g}%",
        "names": [s.name for s in fleet.shiftables],
    }
    rows = [[t, float(prices[t]), float(pv[t]), float(base_load[t]), float(base.load[t]), float(best.load[t]),
             float(tariff.prices[t] * base.imported[t] - tariff.feed_in * base.exported[t]),
             float(tariff.prices[t] * best.imported[t] - tariff.feed_in * best.exported[t])]
            for t in range(T)]
    header = ["period", "price", "pv", "base_load", "baseline_load", "optimized_load", "baseline_cost",
              "optimized_cost"]
    (out / "schedule.json").write_text(dumps_json(result), encoding="utf-8")
    (out / "cost_comparison.csv").write_text(to_csv_text(header, rows), encoding="utf-8", newline="")
    return result


RUNNERS = {
    "forecast": cmd_forecast,
    "collab": cmd_collab,
    "flex": cmd_flex,
    "schedule": cmd_schedule,
    "evaluate": cmd_evaluate,
}
