"""Surrogate accuracy protocol and the privacy byte scan of serialized surrogates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .epso import farthest_point_selection
from .feasibility import Dispatcher, TrajectorySet
from .svdd import SvddModel, svdd_classify
from .vbattery import VirtualBattery, vbattery_classify


def _accuracy(pred: np.ndarray, expected: bool) -> float | None:
    if len(pred) == 0:
        return None  # undefined, never reported as 100 %
    return 100.0 * float(np.mean(pred == expected))


def evaluate_surrogates(svdd: SvddModel, vb: VirtualBattery, feasible_test, unfeasible_test) -> dict:
    """Percent of correctly classified trajectories, keyed ``{model: {class: pct or None}}``."""
    feas = np.asarray(feasible_test, dtype=float).reshape(-1, vb.horizon)
    infeas = np.asarray(unfeasible_test, dtype=float).reshape(-1, vb.horizon)
    table = {}
    for name, classify, model in (("SVDD", svdd_classify, svdd), ("VB", vbattery_classify, vb)):
        table[name] = {
            "feasible": _accuracy(np.atleast_1d(classify(model, feas)) if len(feas) else feas[:, 0], True),
            "unfeasible": _accuracy(np.atleast_1d(classify(model, infeas)) if len(infeas) else infeas[:, 0], False),
        }
    return table


@dataclass
class SurrogateSplit:
    train: TrajectorySet
    feasible_test: np.ndarray
    unfeasible_test: np.ndarray


def surrogate_test_sets(ts: TrajectorySet, fleet, n_test: int = 20, scale: float = 1.5,
                        seed: int = 0) -> SurrogateSplit:
    """Feasible test: archive points not used for training. Unfeasible test: feasible
    points scaled by ``scale`` and kept only if the feasibility check rejects them."""
    rng = np.random.default_rng(seed)
    archive = ts.archive if ts.archive is not None else ts.trajectories
    used = {tuple(row) for row in ts.trajectories}
    held = np.array([row for row in archive if tuple(row) not in used]).reshape(-1, ts.horizon)
    if len(held) > n_test:
        held = held[np.sort(rng.choice(len(held), n_test, replace=False))]
    disp = Dispatcher(fleet, ts.baseline, ts.pv_scenarios)
    pool = np.vstack([held, ts.trajectories]) * scale
    pool = pool[np.any(pool != 0, axis=1)]
    if len(pool):
        frac, _ = disp.fractions(pool)
        bad = pool[frac < ts.alpha - 1e-12]
    else:
        bad = pool
    if len(bad) > n_test:
        bad = bad[np.sort(farthest_point_selection(bad, n_test))]
    return SurrogateSplit(ts, held, bad)


def _needles(values, decimals=(17, 12, 8, 6, 4)) -> set[bytes]:
    out = set()
    for v in np.ravel(np.asarray(values, dtype=float)):
        if v == 0:
            continue  # zero appears everywhere; it carries no information
        out.add(repr(float(v)).encode())
        for d in decimals:
            out.add(f"{v:.{d}f}".rstrip("0").rstrip(".").encode())
    return out


def scan_for_vector(blob: bytes | str, vector, min_hits: int | None = None) -> dict:
    """Byte-level search for the printed values of ``vector`` inside ``blob``.

    The vector counts as embedded when at least ``min_hits`` distinct non-zero
    entries (default: half of them, at least 2) appear in any common rendering.
    """
    if isinstance(blob, str):
        blob = blob.encode("utf-8")
    vals = [float(v) for v in np.ravel(np.asarray(vector, dtype=float)) if v != 0]
    found = [v for v in vals if any(n in blob for n in _needles([v]) if len(n) >= 4)]
    need = min_hits if min_hits is not None else max(2, len(vals) // 2)
    embedded = len(vals) > 0 and len(found) >= need
    return {"values": len(vals), "hits": len(found), "embedded": embedded,
            "verdict": "baseline data embedded: fail" if embedded else "no baseline data embedded: pass"}
