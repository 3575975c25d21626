"""CSV and JSON file formats, with row-numbered schema errors and atomic output."""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .core import PanelSeries
from .features import VARIABLES, NwpGrid


class SchemaError(ValueError):
    """Malformed input file; the message names the file and row."""


def _float(text: str, path, row: int, col: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: row {row}: column '{col}' is not a number: {text!r}") from None
    if not np.isfinite(value):
        raise SchemaError(f"{path}: row {row}: column '{col}' is not finite")
    return value


def _read_rows(path, required: list[str]) -> list[dict]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: row 1: missing columns {missing}")
        return list(reader)


def to_csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")  # RFC 4180 line ends
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-tripping form
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.datetime64):
        return str(v)
    return v


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


# -- series ------------------------------------------------------------------


def write_series_csv(path, panel: PanelSeries):
    Path(path).write_text(series_csv_text(panel), encoding="utf-8", newline="")


def series_csv_text(panel: PanelSeries) -> str:
    arr = panel.to_array()
    times = panel.start + np.arange(panel.length) * panel.step
    rows = ((str(times[t]), sid, float(arr[i, t])) for t in range(panel.length) for i, sid in enumerate(panel.ids))
    return to_csv_text(["timestamp", "id", "value"], rows)


def read_series_csv(path) -> PanelSeries:
    """Long-format ``timestamp,id,value`` file into an aligned panel."""
    rows = _read_rows(path, ["timestamp", "id", "value"])
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    ids: list[str] = []
    data: dict[str, dict] = {}
    for r, rec in enumerate(rows, start=2):
        try:
            ts = np.datetime64(rec["timestamp"], "s")
        except ValueError:
            raise SchemaError(f"{path}: row {r}: bad timestamp {rec['timestamp']!r}") from None
        sid = rec["id"]
        if sid not in data:
            ids.append(sid)
            data[sid] = {}
        if ts in data[sid]:
            raise SchemaError(f"{path}: row {r}: duplicate timestamp for id {sid!r}")
        data[sid][ts] = _float(rec["value"], path, r, "value")
    times = sorted(data[ids[0]])
    for sid in ids:
        if sorted(data[sid]) != times:
            raise SchemaError(f"{path}: series {sid!r} is not aligned with {ids[0]!r}")
    steps = np.diff(np.array(times))
    if len(times) > 1 and np.any(steps != steps[0]):
        raise SchemaError(f"{path}: timestamps are not evenly spaced")
    step = steps[0] if len(times) > 1 else np.timedelta64(1, "h")
    values = np.array([[data[sid][t] for t in times] for sid in ids])
    return PanelSeries.from_array(values, start=times[0], step=step, ids=ids)


def read_observations_csv(path, series_id: str | None = None) -> dict:
    """``timestamp,id,value`` rows of one series as ``{datetime64[s]: value}``; gaps allowed."""
    rows = _read_rows(path, ["timestamp", "id", "value"])
    ids = sorted({rec["id"] for rec in rows})
    if series_id is None:
        if len(ids) != 1:
            raise SchemaError(f"{path}: expected one series, found {ids}")
        series_id = ids[0]
    out = {}
    for r, rec in enumerate(rows, start=2):
        if rec["id"] != series_id:
            continue
        try:
            ts = np.datetime64(rec["timestamp"], "s")
        except ValueError:
            raise SchemaError(f"{path}: row {r}: bad timestamp {rec['timestamp']!r}") from None
        if ts in out:
            raise SchemaError(f"{path}: row {r}: duplicate timestamp")
        out[ts] = _float(rec["value"], path, r, "value")
    return out


# -- NWP grid ----------------------------------------------------------------

NWP_COLUMNS = ["run_time", "lead", "point", "lat", "lon", *VARIABLES]


def nwp_csv_text(grid: NwpGrid) -> str:
    R, L, P, _ = grid.data.shape

    def rows():
        for r in range(R):
            for l in range(L):
                for p in range(P):
                    yield [str(grid.run_times[r]), int(grid.lead_times[l]), p, float(grid.points[p, 0]),
                           float(grid.points[p, 1]), *(float(x) for x in grid.data[r, l, p])]

    return to_csv_text(NWP_COLUMNS, rows())


def read_nwp_csv(path) -> NwpGrid:
    rows = _read_rows(path, NWP_COLUMNS)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    parsed = []
    for r, rec in enumerate(rows, start=2):
        try:
            run = np.datetime64(rec["run_time"], "s")
            lead, point = int(rec["lead"]), int(rec["point"])
        except ValueError:
            raise SchemaError(f"{path}: row {r}: bad run_time, lead or point") from None
        coords = (_float(rec["lat"], path, r, "lat"), _float(rec["lon"], path, r, "lon"))
        vals = [_float(rec[v], path, r, v) for v in VARIABLES]
        parsed.append((r, run, lead, point, coords, vals))
    runs = sorted({p[1] for p in parsed})
    leads = sorted({p[2] for p in parsed})
    points = sorted({p[3] for p in parsed})
    coords = {}
    data = np.full((len(runs), len(leads), len(points), len(VARIABLES)), np.nan)
    ri = {v: i for i, v in enumerate(runs)}
    li = {v: i for i, v in enumerate(leads)}
    pi = {v: i for i, v in enumerate(points)}
    for r, run, lead, point, xy, vals in parsed:
        if coords.setdefault(point, xy) != xy:
            raise SchemaError(f"{path}: row {r}: point {point} has inconsistent coordinates")
        cell = data[ri[run], li[lead], pi[point]]
        if not np.all(np.isnan(cell)):
            raise SchemaError(f"{path}: row {r}: duplicate (run, lead, point)")
        data[ri[run], li[lead], pi[point]] = vals
    if np.any(np.isnan(data)):
        raise SchemaError(f"{path}: grid is incomplete (missing run/lead/point combinations)")
    try:
        return NwpGrid(np.array(runs), np.array(leads), np.array([coords[p] for p in points]), data)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


# -- atomic output directory -------------------------------------------------


@contextmanager
def atomic_output(out_dir):
    """Yield a staging directory; its files replace ``out_dir`` only on success."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    out_dir.mkdir(exist_ok=True)
    for f in sorted(stage.iterdir()):
        os.replace(f, out_dir / f.name)
    stage.rmdir()
