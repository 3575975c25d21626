"""Evolutionary particle swarm search over the feasible flexibility domain.

Each particle carries its own strategic weights (inertia, memory,
cooperation, perturbation of the global best). Every generation a particle
is replicated, the replica's weights are mutated, both copies move with the
PSO rule, and the fitter copy survives. Fitness rewards feasible positions
far from the archive of feasible trajectories already found, so the swarm
spreads over the domain instead of collapsing on one point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .devices import DeviceFleet
from .feasibility import Dispatcher, TrajectorySet


class NoFeasibleTrajectory(RuntimeError):
    pass


@dataclass
class EpsoParams:
    swarm: int = 30
    generations: int = 200
    tau: float = 0.2  # mutation scale of strategic weights
    communication: float = 0.8
    archive_radius: float = 0.02  # fraction of the box diagonal


def _novelty(points: np.ndarray, archive: np.ndarray) -> np.ndarray:
    if len(archive) == 0:
        return np.full(len(points), np.inf)
    d2 = (np.sum(points**2, axis=1)[:, None] + np.sum(archive**2, axis=1)[None, :]
          - 2.0 * points @ archive.T)
    return np.sqrt(np.maximum(d2.min(axis=1), 0.0))


class _Archive:
    """Growable array of feasible points."""

    def __init__(self, T: int):
        self._buf = np.zeros((256, T))
        self.n = 0

    @property
    def points(self) -> np.ndarray:
        return self._buf[: self.n]

    def add(self, x):
        if self.n == len(self._buf):
            self._buf = np.vstack([self._buf, np.zeros_like(self._buf)])
        self._buf[self.n] = x
        self.n += 1

    def offer(self, cand: np.ndarray, ok: np.ndarray, radius: float):
        """Add, in order, every feasible candidate farther than ``radius`` from all archived points."""
        idx = np.flatnonzero(ok)
        if len(idx) == 0:
            return
        nov = _novelty(cand[idx], self.points)
        start = self.n
        for i, d in zip(idx, nov):
            if d <= radius:
                continue
            fresh = self._buf[start:self.n]
            if len(fresh) and _novelty(cand[i][None], fresh)[0] <= radius:
                continue
            self.add(cand[i])


def farthest_point_selection(points: np.ndarray, k: int) -> np.ndarray:
    """Greedy max-min subset; starts from the point farthest from the origin."""
    points = np.asarray(points)
    chosen = [int(np.argmax(np.sum(points**2, axis=1)))]
    dist = np.sqrt(np.sum((points - points[chosen[0]]) ** 2, axis=1))
    while len(chosen) < min(k, len(points)):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sqrt(np.sum((points - points[nxt]) ** 2, axis=1)))
    return np.array(chosen)


def dispersion_selection(points: np.ndarray, k: int) -> np.ndarray:
    """Greedy max-sum subset: each pick maximizes its summed distance to those already picked.

    Points already chosen are excluded, so exact duplicates are only taken when
    fewer than ``k`` distinct points exist.
    """
    points = np.asarray(points)
    k = min(k, len(points))
    chosen = [int(np.argmax(np.sum(points**2, axis=1)))]
    total = np.sqrt(np.sum((points - points[chosen[0]]) ** 2, axis=1))
    taken = np.zeros(len(points), dtype=bool)
    taken[chosen[0]] = True
    while len(chosen) < k:
        nxt = int(np.argmax(np.where(taken, -np.inf, total)))
        chosen.append(nxt)
        taken[nxt] = True
        total += np.sqrt(np.sum((points - points[nxt]) ** 2, axis=1))
    return np.array(chosen)


def epso_sample(
    fleet: DeviceFleet,
    baseline,
    pv_scenarios,
    alpha: float = 0.9,
    K: int = 20,
    seed: int = 0,
    params: EpsoParams | None = None,
) -> TrajectorySet:
    """Sample K dispersed trajectories, each feasible in at least ``alpha`` of the scenarios."""
    if K < 1:
        raise ValueError("K must be >= 1")
    params = params or EpsoParams()
    rng = np.random.default_rng(seed)
    disp = Dispatcher(fleet, baseline, pv_scenarios)
    T = disp.T
    lo, hi = disp.power_box()
    span = hi - lo
    radius = params.archive_radius * float(np.sqrt(np.sum(span**2)))

    zero = np.zeros((1, T))
    frac0, _ = disp.fractions(zero)
    archive = _Archive(T)
    archive.offer(zero, frac0 >= alpha - 1e-12, -1.0)

    P = params.swarm
    X = lo + rng.random((P, T)) * span
    V = 0.1 * (rng.random((P, T)) - 0.5) * span
    W = rng.random((P, 4))

    def fitness(pos):
        frac, unmet = disp.fractions(pos)
        feasible = frac >= alpha - 1e-12
        fit = np.where(feasible, 0.0, -(alpha - frac) - unmet)
        nov = _novelty(pos, archive.points) if archive.n else np.zeros(len(pos))
        return np.where(feasible, nov, fit), feasible

    fit, feas = fitness(X)
    best_x, best_f = X.copy(), fit.copy()
    for _ in range(params.generations):
        g = int(np.argmax(best_f))
        W_rep = np.clip(W + params.tau * rng.standard_normal(W.shape), 0.0, 1.0)
        moved = []
        for weights in (W, W_rep):
            gbest = best_x[g] + weights[:, 3:4] * rng.standard_normal((P, T)) * 0.1 * span
            mask = rng.random((P, T)) < params.communication
            vel = (weights[:, 0:1] * V + weights[:, 1:2] * (best_x - X)
                   + weights[:, 2:3] * (gbest - X) * mask)
            moved.append((vel, np.clip(X + vel, lo, hi)))
        cand = np.vstack([moved[0][1], moved[1][1]])
        cfit, cfeas = fitness(cand)
        take_rep = cfit[P:] > cfit[:P]
        X = np.where(take_rep[:, None], moved[1][1], moved[0][1])
        V = np.where(take_rep[:, None], moved[1][0], moved[0][0])
        W = np.where(take_rep[:, None], W_rep, W)
        fit = np.where(take_rep, cfit[P:], cfit[:P])
        # archive every sufficiently new feasible position, in fixed order
        archive.offer(cand, cfeas, radius)
        improved = fit > best_f
        best_x[improved] = X[improved]
        best_f[improved] = fit[improved]
        if archive.n:
            # personal bests age: their novelty shrinks as the archive grows
            bf, bfeas = fitness(best_x)
            best_f = np.where(bfeas, bf, best_f)

    if not archive.n:
        raise NoFeasibleTrajectory("no feasible flexibility trajectory found within the EPSO budget")
    archive = archive.points.copy()
    picked = archive[dispersion_selection(archive, K)]
    duplicates = len(picked) < K
    if duplicates:
        picked = np.vstack([picked, np.repeat(picked[-1:], K - len(picked), axis=0)])
    return TrajectorySet(picked, np.asarray(baseline, dtype=float), np.atleast_2d(pv_scenarios),
                         alpha, duplicates, archive)


def rejection_sample(fleet: DeviceFleet, baseline, pv_scenarios, alpha: float, K: int, seed: int,
                     max_draws: int = 100000) -> np.ndarray:
    """Uniform draws in the power box, kept when feasible (reference sampler)."""
    rng = np.random.default_rng(seed)
    disp = Dispatcher(fleet, baseline, pv_scenarios)
    lo, hi = disp.power_box()
    kept = []
    drawn = 0
    while len(kept) < K and drawn < max_draws:
        batch = lo + rng.random((256, disp.T)) * (hi - lo)
        drawn += len(batch)
        frac, _ = disp.fractions(batch)
        kept.extend(batch[frac >= alpha - 1e-12])
    return np.array(kept[:K])
