import csv
import json

import numpy as np
import pytest

from hemskit.cli import main
from hemskit.core import PanelSeries
from hemskit.features import synthetic_pv_dataset
from hemskit.hub import RunConfig, read_forecast_csv
from hemskit.io import (
    SchemaError,
    nwp_csv_text,
    read_nwp_csv,
    read_series_csv,
    series_csv_text,
    to_csv_text,
)

SMALL_FORECAST = {
    "synthetic": {"days": 30, "side": 3},
    "max_horizon": 12,
    "gbt": {"n_trees": 10, "max_depth": 3},
}


def write_config(path, command, params, seed=0):
    path.write_text(RunConfig(command, seed, params).to_json(), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def forecast_out(tmp_path_factory):
    root = tmp_path_factory.mktemp("fc")
    cfg = write_config(root / "cfg.json", "forecast", SMALL_FORECAST)
    assert main(["forecast", "--config", str(cfg), "--out", str(root / "out")]) == 0
    return root / "out"


def test_forecast_outputs(forecast_out):
    metrics = json.loads((forecast_out / "metrics.json").read_text())
    assert set(metrics["improvement_percent"]) == {"T", "F"}
    assert set(metrics["improvement_percent"]["F"]) == {"mae", "rmse", "crps"}
    fcs = read_forecast_csv(forecast_out / "forecast.csv")
    assert set(fcs) == {"base", "T", "F"}
    assert all(fc.is_monotone() for fc, _ in fcs.values())
    log = (forecast_out / "hub_log.jsonl").read_text().splitlines()
    assert [json.loads(x)["op"] for x in log][:2] == ["publish", "publish"]


def test_evaluate_reproduces_forecast_metrics(forecast_out, tmp_path):
    cfg = write_config(tmp_path / "ev.json", "evaluate", {
        "forecast_csv": str(forecast_out / "forecast.csv"),
        "observations_csv": str(forecast_out / "observations.csv"),
    })
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "ev")]) == 0
    got = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    want = json.loads((forecast_out / "metrics.json").read_text())
    for kind in ("base", "T", "F"):
        for m in ("mae", "rmse", "crps"):
            assert got["models"][kind][m] == pytest.approx(want["models"][kind][m], abs=1e-12)


def test_forecast_from_csv_inputs(tmp_path):
    ds = synthetic_pv_dataset(1, days=30, side=3, max_lead=40)
    (tmp_path / "nwp.csv").write_text(nwp_csv_text(ds.grid), encoding="utf-8", newline="")
    vt = ds.grid.valid_times().ravel()
    obs = ds.observed.ravel()
    uniq, idx = np.unique(vt, return_index=True)
    panel = PanelSeries.from_array(obs[idx][None, :], start=uniq[0], ids=["pv"])
    (tmp_path / "pv.csv").write_text(series_csv_text(panel), encoding="utf-8", newline="")
    cfg = write_config(tmp_path / "cfg.json", "forecast", {
        **SMALL_FORECAST, "nwp_csv": str(tmp_path / "nwp.csv"), "pv_csv": str(tmp_path / "pv.csv"),
        "target": list(ds.target), "capacity": ds.capacity,
    })
    assert main(["forecast", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0


def test_missing_nwp_file_exit_2_no_outputs(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", "forecast", {
        "nwp_csv": str(tmp_path / "absent.csv"), "pv_csv": str(tmp_path / "absent_pv.csv"),
        "target": [0, 0], "capacity": 1.0,
    })
    out = tmp_path / "out"
    assert main(["forecast", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())
    assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".out")] == []


def test_schema_error_names_row(tmp_path):
    bad = tmp_path / "s.csv"
    bad.write_text("timestamp,id,value\r\n2015-01-01T00:00,a,1.0\r\n2015-01-01T01:00,a,oops\r\n")
    with pytest.raises(SchemaError, match="row 3"):
        read_series_csv(bad)
    cfg = write_config(tmp_path / "cfg.json", "collab", {"panel_csv": str(bad)})
    assert main(["collab", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_bad_config_exit_2(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"command": "schedule", "params": {"nonsense": 1}}))
    assert main(["schedule", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text("{not json")
    assert main(["schedule", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text(RunConfig("flex").to_json())
    assert main(["schedule", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_infeasible_schedule_exit_1(tmp_path):
    fleet = {"ewh": {"volume": 50, "power": 0.2, "t_init": 46, "t_min": 45, "draws": [0, 60, 60, 0]},
             "shiftables": []}
    cfg = write_config(tmp_path / "c.json", "schedule", {"prices": [0.1] * 4, "fleet": fleet})
    assert main(["schedule", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_config_round_trip():
    cfg = RunConfig("flex", 7, {"K": 12, "svdd": {"nu": 0.1}, "baseline": [0.1, 0.25]})
    back = RunConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.to_json() == cfg.to_json()
    assert back.resolved()["svdd"]["self_term"] == "kernel"
    with pytest.raises(SchemaError):
        RunConfig("flex", seed="1")


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(2, 30)) * 1e3
    panel = PanelSeries.from_array(vals, start="2016-03-01T00:00", ids=["a", "b"])
    path = tmp_path / "p.csv"
    path.write_text(series_csv_text(panel), encoding="utf-8", newline="")
    back = read_series_csv(path)
    assert back.ids == ("a", "b")
    assert np.max(np.abs(back.to_array() - vals)) <= 1e-12
    assert path.read_bytes().count(b"\r\n") == 61

    ds = synthetic_pv_dataset(2, days=3, side=2, max_lead=5)
    (tmp_path / "g.csv").write_text(nwp_csv_text(ds.grid), encoding="utf-8", newline="")
    grid = read_nwp_csv(tmp_path / "g.csv")
    assert np.max(np.abs(grid.data - ds.grid.data)) <= 1e-12
    assert np.array_equal(grid.run_times, ds.grid.run_times)


def test_csv_writer_quotes_and_reprs():
    text = to_csv_text(["a", "b"], [["x,y", 0.1]])
    assert list(csv.reader(text.splitlines())) == [["a", "b"], ["x,y", "0.1"]]


def test_schedule_toy_and_flat(tmp_path, capsys):
    toy = {"prices": [0.2, 0.1], "pv": [0, 0], "base_load": [0, 0],
           "fleet": {"shiftables": [{"name": "x", "power": 1.0, "duration": 1}]}}
    cfg = write_config(tmp_path / "toy.json", "schedule", toy)
    assert main(["schedule", "--config", str(cfg), "--out", str(tmp_path / "toy")]) == 0
    res = json.loads((tmp_path / "toy" / "schedule.json").read_text())
    assert res["optimized"]["starts"] == [1]  # second period
    assert res["optimized"]["cost"] == pytest.approx(0.1, abs=1e-15)
    capsys.readouterr()

    cfg = write_config(tmp_path / "flat.json", "schedule", {"prices": [0.15] * 24, "pv": [0.0] * 24})
    assert main(["schedule", "--config", str(cfg), "--out", str(tmp_path / "flat")]) == 0
    assert capsys.readouterr().out.strip() == "savings vs baseline: 0%"


def test_schedule_pv_savings_match_oracle(tmp_path):
    from hemskit.hub import default_schedule_fleet
    from hemskit.scheduler import Tariff, enumerate_starts

    assert main(["schedule", "--out", str(tmp_path / "s")]) == 0
    res = json.loads((tmp_path / "s" / "schedule.json").read_text())
    assert res["savings_percent"] > 0
    T = 24
    hours = np.arange(T)
    prices = np.where((hours >= 8) & (hours < 22), 0.2, 0.1)
    pv = 3.0 * np.maximum(0.0, np.sin(np.pi * (hours - 6) / 12))
    fleet = default_schedule_fleet(T)
    # the heater is placed after the loads; the loads must be optimal on their own baseline
    starts, _ = enumerate_starts(fleet, Tariff(prices), 0.3 - pv)
    assert res["optimized"]["starts"] == starts


def test_collab_and_flex_reports(tmp_path):
    assert main(["collab", "--out", str(tmp_path / "c")]) == 0
    priv = json.loads((tmp_path / "c" / "privacy.json").read_text())
    assert priv["consensus"]["verdict"] == "leaks"
    assert priv["consensus"]["reconstruction_max_abs_error"] <= 1e-8
    assert priv["audit"]["sharing"]["raw_data_crossed"]
    models = json.loads((tmp_path / "c" / "models.json").read_text())["models"]
    assert models["consensus"]["relative_difference_to_centralized"] < 1e-4

    assert main(["flex", "--out", str(tmp_path / "f")]) == 0
    rep = json.loads((tmp_path / "f" / "report.json").read_text())
    assert rep["n_trajectories"] == 20
    assert set(rep["accuracy_percent"]) == {"SVDD", "VB"}
    assert rep["privacy_scan"]["verdict"] == "no baseline data embedded: pass"
    rows = list(csv.DictReader((tmp_path / "f" / "trajectories.csv").open(newline="")))
    assert len(rows) == 20 * 8


def test_collab_single_worker_coincides(tmp_path):
    cfg = write_config(tmp_path / "c.json", "collab", {
        "synthetic": {"n": 3, "T": 200}, "n_workers": 1, "sharing_workers": 1, "tol": 1e-9, "max_iter": 20000})
    assert main(["collab", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    models = json.loads((tmp_path / "o" / "models.json").read_text())["models"]
    cent = np.array(models["centralized"]["B"])
    for name in ("consensus", "sharing"):
        assert np.max(np.abs(np.array(models[name]["B"]) - cent)) < 1e-6


def test_collab_convergence_trace_settles(tmp_path):
    assert main(["collab", "--out", str(tmp_path / "c")]) == 0
    rows = list(csv.DictReader((tmp_path / "c" / "convergence.csv").open(newline="")))
    primal = np.array([float(r["primal"]) for r in rows if r["method"] == "consensus"])
    burn = len(primal) // 4
    tail = primal[burn:]
    # non-increasing after burn-in, up to 5% slack against the running minimum
    assert np.all(tail <= 1.05 * np.minimum.accumulate(tail) + 1e-12)
