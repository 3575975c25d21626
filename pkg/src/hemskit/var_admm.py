"""VAR(p)-LASSO estimation with ADMM: centralized, split across predictors, split across examples.

All three solvers target

    minimize_B  0.5 * ||Y - B Z||_F^2 + lam * ||B||_1

on a centered panel. The distributed variants simulate HEMS workers and a
hub exchanging messages once per round; every exchange goes through a
:class:`RoundLog` so the privacy demonstrators replay the values that were
actually shared.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import PanelSeries


@dataclass
class VarDesign:
    """Response matrix ``Y`` (n x T) and stacked lags ``Z`` (np x T).

    Row ``l * n + j`` of ``Z`` holds series ``j`` at lag ``l + 1``.
    """

    Y: np.ndarray
    Z: np.ndarray
    p: int
    n: int
    means: np.ndarray
    ids: tuple[str, ...] = ()

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    def owner_of_row(self, row: int) -> int:
        """Series index whose lag fills row ``row`` of ``Z``."""
        return row % self.n


@dataclass
class VarModel:
    B: np.ndarray
    lam: float
    rho: float
    p: int
    means: np.ndarray
    iterations: int = 0
    converged: bool = True
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)
    method: str = "centralized"

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def lag_matrix(self, lag: int) -> np.ndarray:
        """Coefficient block B^(lag), lag starting at 1."""
        return self.B[:, (lag - 1) * self.n : lag * self.n]

    def nonzeros(self, tol: float = 0.0) -> int:
        return int(np.sum(np.abs(self.B) > tol))


def build_var_design(panel: PanelSeries | np.ndarray, p: int, center: bool = True) -> VarDesign:
    """Stack a panel into the VAR regression ``Y = B Z + E``."""
    if isinstance(panel, PanelSeries):
        data, ids = panel.to_array(), panel.ids
    else:
        data = np.atleast_2d(np.asarray(panel, dtype=float))
        ids = tuple(f"hems{i}" for i in range(data.shape[0]))
    if p < 1:
        raise ValueError("lag order p must be >= 1")
    n, length = data.shape
    if length < p + 1:
        raise ValueError(f"series of length {length} too short for p={p} (need {p + 1})")
    means = data.mean(axis=1) if center else np.zeros(n)
    yc = data - means[:, None]
    Y = yc[:, p:]
    Z = np.vstack([yc[:, p - lag : length - lag] for lag in range(1, p + 1)])
    return VarDesign(Y=Y, Z=Z, p=p, n=n, means=means, ids=tuple(ids))


def soft_threshold(x, a):
    """Proximal map of ``a * |.|``: sign(x) * max(0, |x| - a), with 0 -> 0."""
    if np.any(np.asarray(a) < 0):
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(0.0, np.abs(x) - a)
    return float(out) if out.ndim == 0 else out


def lasso_objective(design: VarDesign, B: np.ndarray, lam: float) -> float:
    resid = design.Y - B @ design.Z
    return 0.5 * float(np.sum(resid**2)) + lam * float(np.sum(np.abs(B)))


def lambda_max(design: VarDesign) -> float:
    """Smallest penalty for which B = 0 is optimal."""
    return float(np.max(np.abs(design.Y @ design.Z.T)))


def default_rho(design: VarDesign, n_blocks: int = 1) -> float:
    """Penalty matched to the curvature of one block's least-squares term."""
    m = design.Z.shape[0]
    return max(float(np.sum(design.Z**2)) / (m * n_blocks), 1e-12)


def _check_params(lam, rho):
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if rho <= 0:
        raise ValueError("rho must be > 0")


def fit_centralized(
    design: VarDesign,
    lam: float,
    rho: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 5000,
) -> VarModel:
    """Single-node ADMM with B = H splitting.

    B-update is a ridge-type solve against a cached Cholesky factor of
    ``Z Z^T + rho I``; H-update soft-thresholds at ``lam / rho``. ``rho``
    defaults to :func:`default_rho` and stays fixed for the run.
    """
    if rho is None:
        rho = default_rho(design)
    _check_params(lam, rho)
    Y, Z = design.Y, design.Z
    m = Z.shape[0]
    factor = cho_factor(Z @ Z.T + rho * np.eye(m))
    zy = Z @ Y.T
    H = np.zeros((design.n, m))
    U = np.zeros_like(H)
    primal, dual = [], []
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        B = cho_solve(factor, zy + rho * (H - U).T).T
        H_old = H
        H = soft_threshold(B + U, lam / rho)
        U = U + B - H
        r = np.linalg.norm(B - H)
        s = rho * np.linalg.norm(H - H_old)
        primal.append(float(r))
        dual.append(float(s))
        eps_pri = tol * max(1.0, np.linalg.norm(B), np.linalg.norm(H))
        eps_dual = tol * max(1.0, rho * np.linalg.norm(U))
        if r <= eps_pri and s <= eps_dual:
            converged = True
            break
    return VarModel(
        B=H, lam=lam, rho=rho, p=design.p, means=design.means, iterations=k,
        converged=converged, primal_residuals=primal, dual_residuals=dual,
    )


def digest(arr: np.ndarray) -> str:
    a = np.ascontiguousarray(arr, dtype=np.float64)
    return hashlib.sha256(a.tobytes()).hexdigest()[:16]


class RoundLog:
    """Record of every message exchanged between workers and the hub.

    Upload digests and broadcast digests are kept for every round; the full
    broadcast matrices are kept for the last ``keep_full`` rounds (a curious
    participant only needs two consecutive rounds).
    """

    def __init__(self, split: str, n_workers: int, rho: float, keep_full: int = 2):
        self.split = split
        self.n_workers = n_workers
        self.rho = rho
        self.keep_full = keep_full
        self.setup: dict = {}
        self.records: list[dict] = []
        self._full: deque = deque(maxlen=keep_full)

    def log_setup(self, name: str, worker: int, payload: np.ndarray):
        self.setup.setdefault(name, {})[worker] = np.array(payload, copy=True)

    def log_round(self, k: int, uploads: list[np.ndarray], broadcast: dict[str, np.ndarray]):
        rec = {
            "k": k,
            "messages": len(uploads) + 1,
            "uploads": {str(i): digest(u) for i, u in enumerate(uploads)},
            "broadcast": {name: digest(v) for name, v in sorted(broadcast.items())},
        }
        self.records.append(rec)
        self._full.append((k, {name: np.array(v, copy=True) for name, v in broadcast.items()}))

    def full_broadcast(self, k: int) -> dict[str, np.ndarray]:
        for kk, payload in self._full:
            if kk == k:
                return payload
        raise KeyError(f"round {k} not available in full (kept: {[kk for kk, _ in self._full]})")

    @property
    def last_round(self) -> int:
        if not self.records:
            raise KeyError("no rounds logged")
        return self.records[-1]["k"]

    def to_jsonl(self) -> str:
        full = dict(self._full)
        lines = []
        for rec in self.records:
            out = dict(rec)
            if rec["k"] in full:
                out["broadcast_values"] = {
                    name: v.tolist() for name, v in sorted(full[rec["k"]].items())
                }
            lines.append(json.dumps(out, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str, split: str, n_workers: int, rho: float) -> "RoundLog":
        log = cls(split, n_workers, rho, keep_full=10**9)
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            values = rec.pop("broadcast_values", None)
            log.records.append(rec)
            if values is not None:
                log._full.append((rec["k"], {k: np.asarray(v) for k, v in values.items()}))
        return log


def predictor_partition(design: VarDesign, n_workers: int) -> list[np.ndarray]:
    """Split the rows of Z so each worker owns every lag of its own series."""
    if not 1 <= n_workers <= design.n:
        raise ValueError(f"need 1 <= N <= n ({design.n}) workers, got {n_workers}")
    groups = np.array_split(np.arange(design.n), n_workers)
    rows = np.arange(design.Z.shape[0])
    return [rows[np.isin(rows % design.n, g)] for g in groups]


def example_partition(design: VarDesign, n_workers: int) -> list[np.ndarray]:
    if not 1 <= n_workers <= design.T:
        raise ValueError(f"need 1 <= N <= T ({design.T}) workers, got {n_workers}")
    return np.array_split(np.arange(design.T), n_workers)


def _map(fn, items, threads: int | None):
    # barrier: results come back in worker order before the hub aggregates
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _lasso_cd(G, C, a, B0, tol=1e-13, max_sweeps=10000):
    """Row-wise LASSO 0.5 b G b^T - C b^T + a |b|_1 by cyclic coordinate descent.

    All rows of ``C`` share the Gram matrix ``G`` and are updated together.
    """
    B = B0.copy()
    m = G.shape[0]
    diag = np.diag(G)
    scale = max(1.0, float(np.max(np.abs(C))) if C.size else 1.0)
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(m):
            if diag[j] <= 0:
                new = np.zeros(B.shape[0])
            else:
                partial = C[:, j] - B @ G[:, j] + B[:, j] * diag[j]
                new = soft_threshold(partial, a) / diag[j]
            biggest = max(biggest, float(np.max(np.abs(new - B[:, j]))) * max(diag[j], 1.0))
            B[:, j] = new
        if biggest <= tol * scale:
            break
    return B


def fit_consensus_predictors(
    design: VarDesign,
    lam: float,
    rho: float = 1.0,
    n_workers: int | None = None,
    partition: list[np.ndarray] | None = None,
    tol: float = 1e-6,
    max_iter: int = 5000,
    threads: int | None = None,
    log: RoundLog | None = None,
) -> tuple[VarModel, RoundLog]:
    """ADMM with Z split into row blocks, one block of own lags per worker.

    Worker i solves a small LASSO for B_i against the current consensus gap;
    the hub averages the uploaded fitted values ``B_i Z_i`` and updates the
    consensus ``H_bar`` and the shared scaled dual ``U``.
    """
    _check_params(lam, rho)
    if partition is None:
        partition = predictor_partition(design, n_workers or design.n)
    N = len(partition)
    _check_partition(partition, design.Z.shape[0])
    Y = design.Y
    Zs = [design.Z[rows] for rows in partition]
    grams = [Zi @ Zi.T for Zi in Zs]
    if log is None:
        log = RoundLog("predictors", N, rho)
    # the hub needs the responses; each worker hands over the rows of its own series
    for i, rows in enumerate(partition):
        own = sorted({design.owner_of_row(int(r)) for r in rows})
        log.log_setup("responses", i, Y[own])

    Bs = [np.zeros((design.n, len(rows))) for rows in partition]
    BZ = [np.zeros_like(Y) for _ in range(N)]
    bz_mean = np.zeros_like(Y)
    H_bar = np.zeros_like(Y)
    U = np.zeros_like(Y)
    primal, dual = [], []
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        gap = H_bar - bz_mean - U

        def worker(i):
            v = BZ[i] + gap
            Bi = _lasso_cd(grams[i], v @ Zs[i].T, lam / rho, Bs[i])
            return Bi, Bi @ Zs[i]

        results = _map(worker, range(N), threads)
        Bs = [r[0] for r in results]
        BZ = [r[1] for r in results]
        total = np.zeros_like(Y)
        for bz in BZ:  # fixed summation order
            total += bz
        bz_mean = total / N
        H_old = H_bar
        H_bar = (Y + rho * bz_mean + rho * U) / (N + rho)
        U = U + bz_mean - H_bar
        log.log_round(k, BZ, {"h_bar": H_bar, "bz_mean": bz_mean, "u": U})

        r = np.sqrt(N) * np.linalg.norm(bz_mean - H_bar)
        s = rho * np.sqrt(N) * np.linalg.norm(H_bar - H_old)
        primal.append(float(r))
        dual.append(float(s))
        scale = max(1.0, np.linalg.norm(total), N * np.linalg.norm(H_bar))
        if r <= tol * scale and s <= tol * max(1.0, rho * np.sqrt(N) * np.linalg.norm(U)):
            converged = True
            break
    B = np.zeros((design.n, design.Z.shape[0]))
    for rows, Bi in zip(partition, Bs):
        B[:, rows] = Bi
    model = VarModel(
        B=B, lam=lam, rho=rho, p=design.p, means=design.means, iterations=k,
        converged=converged, primal_residuals=primal, dual_residuals=dual,
        method="consensus-predictors",
    )
    return model, log


def fit_sharing_examples(
    design: VarDesign,
    lam: float,
    rho: float | None = None,
    n_workers: int = 1,
    partition: list[np.ndarray] | None = None,
    tol: float = 1e-6,
    max_iter: int = 5000,
    threads: int | None = None,
    log: RoundLog | None = None,
) -> tuple[VarModel, RoundLog]:
    """ADMM with the time samples (columns) split into blocks.

    Each worker ridge-solves its own B_i on its column block; the hub
    soft-thresholds the average of ``B_i + U_i`` at ``lam / (N rho)``.
    """
    if partition is None:
        partition = example_partition(design, n_workers)
    N = len(partition)
    if rho is None:
        rho = default_rho(design, N)
    _check_params(lam, rho)
    _check_partition(partition, design.T)
    m = design.Z.shape[0]
    blocks = []
    for cols in partition:
        Zi, Yi = design.Z[:, cols], design.Y[:, cols]
        blocks.append((cho_factor(Zi @ Zi.T + rho * np.eye(m)), Zi @ Yi.T))
    if log is None:
        log = RoundLog("examples", N, rho)
    for i, cols in enumerate(partition):
        log.log_setup("lags", i, design.Z[:, cols])

    H = np.zeros((design.n, m))
    Us = [np.zeros_like(H) for _ in range(N)]
    Bs = [np.zeros_like(H) for _ in range(N)]
    primal, dual = [], []
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        def worker(i):
            factor, zy = blocks[i]
            return cho_solve(factor, zy + rho * (H - Us[i]).T).T

        Bs = _map(worker, range(N), threads)
        uploads = [Bs[i] + Us[i] for i in range(N)]
        total = np.zeros_like(H)
        for up in uploads:
            total += up
        H_old = H
        H = soft_threshold(total / N, lam / (N * rho))
        Us = [Us[i] + Bs[i] - H for i in range(N)]
        log.log_round(k, uploads, {"h": H})

        r = np.sqrt(sum(float(np.sum((Bi - H) ** 2)) for Bi in Bs))
        s = rho * np.sqrt(N) * np.linalg.norm(H - H_old)
        primal.append(float(r))
        dual.append(float(s))
        b_norm = np.sqrt(sum(float(np.sum(Bi**2)) for Bi in Bs))
        u_norm = np.sqrt(sum(float(np.sum(Ui**2)) for Ui in Us))
        if r <= tol * max(1.0, b_norm, np.sqrt(N) * np.linalg.norm(H)) and s <= tol * max(
            1.0, rho * u_norm
        ):
            converged = True
            break
    model = VarModel(
        B=H, lam=lam, rho=rho, p=design.p, means=design.means, iterations=k,
        converged=converged, primal_residuals=primal, dual_residuals=dual,
        method="sharing-examples",
    )
    return model, log


def _check_partition(partition, size):
    allidx = np.concatenate([np.asarray(p, dtype=int) for p in partition]) if partition else []
    if len(partition) < 1 or any(len(p) == 0 for p in partition):
        raise ValueError("every worker needs a non-empty block")
    if len(allidx) != size or not np.array_equal(np.sort(allidx), np.arange(size)):
        raise ValueError(f"blocks must partition {size} indices exactly")


def forecast_var(
    model: VarModel,
    recent: np.ndarray,
    steps: int,
    start=None,
    step=np.timedelta64(1, "h"),
    ids=None,
) -> PanelSeries:
    """Iterate one-step predictions from the last ``p`` observed columns.

    ``recent`` is ``n x p`` in original units, oldest column first.
    """
    recent = np.atleast_2d(np.asarray(recent, dtype=float))
    if recent.shape != (model.n, model.p):
        raise ValueError(f"recent must be {model.n} x {model.p}, got {recent.shape}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    hist = list((recent - model.means[:, None]).T)  # oldest first
    out = []
    for _ in range(steps):
        z = np.concatenate([hist[-lag] for lag in range(1, model.p + 1)])
        nxt = model.B @ z
        out.append(nxt)
        hist.append(nxt)
    values = np.array(out).T + model.means[:, None]
    if start is None:
        start = np.datetime64("1970-01-01T00:00")
    return PanelSeries.from_array(values, start=start, step=step, ids=ids)


# -- privacy demonstrators ---------------------------------------------------


def curious_node_reconstruct(log: RoundLog, k: int | None = None) -> np.ndarray:
    """Recover the full response matrix Y from what the hub broadcasts.

    Inverts the hub update ``H_bar = (Y + rho*BZ_mean + rho*U_prev)/(N + rho)``
    using round ``k`` (``H_bar``, ``BZ_mean``) and round ``k - 1`` (``U``).
    """
    if log.split != "predictors":
        raise ValueError("reconstruction applies to the predictor split")
    if k is None:
        k = log.last_round
    cur = log.full_broadcast(k)
    if k == 1:
        u_prev = np.zeros_like(cur["h_bar"])
    else:
        u_prev = log.full_broadcast(k - 1)["u"]
    N, rho = log.n_workers, log.rho
    return (N + rho) * cur["h_bar"] - rho * cur["bz_mean"] - rho * u_prev


def hub_reconstruct(log: RoundLog) -> np.ndarray:
    """The hub sees every worker's responses directly at setup."""
    if "responses" not in log.setup:
        raise KeyError("no response uploads in log")
    parts = log.setup["responses"]
    return np.vstack([parts[i] for i in sorted(parts)])


@dataclass
class DataFlowAudit:
    split: str
    exposures: list  # (worker, foreign series index) pairs
    raw_data_crossed: bool


def audit_data_flow(design: VarDesign, split: str, partition: list[np.ndarray]) -> DataFlowAudit:
    """Flag workers whose inputs contain raw lags of series they do not own.

    Series ``j`` is owned by the worker that holds the lags of ``j`` under the
    predictor split; under the example split worker ``i`` owns series ``i``
    (when ``N = n``) or the i-th group of series.
    """
    N = len(partition)
    owners = np.array_split(np.arange(design.n), min(N, design.n))
    owned = [set(g.tolist()) for g in owners] + [set() for _ in range(N - len(owners))]
    exposures = []
    for w, block in enumerate(partition):
        if split == "predictors":
            seen = {design.owner_of_row(int(r)) for r in block}
        elif split == "examples":
            Zi = design.Z[:, block]
            seen = {design.owner_of_row(r) for r in range(Zi.shape[0]) if np.any(Zi[r] != 0)}
        else:
            raise ValueError(f"unknown split {split!r}")
        exposures.extend((w, j) for j in sorted(seen - owned[w]))
    return DataFlowAudit(split=split, exposures=exposures, raw_data_crossed=bool(exposures))


def simulate_var(n: int = 5, p: int = 2, T: int = 500, seed: int = 0, density: float = 0.35,
                 burn_in: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stable sparse VAR(p) panel [n, T] and its true coefficients [n, n*p]."""
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, 0.3, (n, n * p)) * (rng.random((n, n * p)) < density)
    companion = np.zeros((n * p, n * p))
    companion[:n] = A
    companion[n:, :-n] = np.eye(n * (p - 1))
    radius = np.max(np.abs(np.linalg.eigvals(companion)))
    if radius >= 0.9:
        # scaling lag l by s**l scales every companion eigenvalue by s
        s = 0.9 / radius
        A = A * np.repeat(s ** np.arange(1, p + 1), n)[None, :]
    y = np.zeros((n, T + burn_in + p))
    for t in range(p, y.shape[1]):
        lags = np.concatenate([y[:, t - l] for l in range(1, p + 1)])
        y[:, t] = A @ lags + rng.normal(size=n)
    return y[:, burn_in + p:], A
