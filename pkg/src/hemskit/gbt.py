"""Gradient-boosted regression trees for point and quantile PV forecasts.

Trees are grown level-wise on binned features. A feature with at most
``max_bins`` distinct training values keeps every midpoint between them as a
candidate threshold, so the split search is exact; features with more
distinct values fall back to quantile bin edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import QuantileForecast, pinball
from .features import FeatureMatrix


@dataclass
class GbtParams:
    n_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    max_bins: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning rate must be in (0, 1]")
        if self.max_depth < 0 or self.min_samples_leaf < 1 or self.n_trees < 0:
            raise ValueError("invalid tree parameters")
        if not 2 <= self.max_bins <= 65535:
            raise ValueError("max_bins must be in [2, 65535]")


DEFAULT_LEVELS = tuple(np.round(np.arange(1, 20) * 0.05, 2))


class Binner:
    """Maps raw features to integer bins; ``code <= b`` iff ``x <= thresholds[b]``."""

    def __init__(self, max_bins: int = 64):
        self.max_bins = max_bins
        self.thresholds: list[np.ndarray] = []

    def fit(self, X: np.ndarray) -> "Binner":
        X = np.asarray(X, dtype=float)
        self.thresholds = []
        for col in X.T:
            uniq = np.unique(col)
            if len(uniq) <= self.max_bins:
                thr = (uniq[:-1] + uniq[1:]) / 2.0
            else:
                qs = np.quantile(col, np.linspace(0, 1, self.max_bins + 1)[1:-1], method="inverted_cdf")
                thr = np.unique(qs)
                thr = thr[thr < uniq[-1]]
            self.thresholds.append(thr)
        return self

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(t) + 1 for t in self.thresholds])

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        codes = np.empty(X.shape, dtype=np.int32)
        for f, thr in enumerate(self.thresholds):
            codes[:, f] = np.searchsorted(thr, X[:, f], side="left")
        return codes


@dataclass
class RegressionTree:
    """Flat array tree; ``feature[i] < 0`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index reached by every row."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=int)
        for _ in range(self.max_depth + 1):
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            rows = np.flatnonzero(inner)
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _grow(codes, n_bins, thresholds, g, max_depth, min_samples_leaf):
    """Greedy level-wise CART on squared error of ``g``.

    Returns the tree (leaf values unset) and the leaf index of every row.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    n, F = codes.shape
    B = int(n_bins.max())
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    node_of = np.zeros(n, dtype=int)
    active = [0]
    scale = max(1.0, float(np.sum(g**2)))
    offsets = (np.arange(F) * B)[None, :]
    valid_bin = np.arange(B)[None, :] < (n_bins - 1)[:, None]  # [F, B] usable split bins
    for _ in range(max_depth):
        if not active:
            break
        pos = np.full(len(feature), -1)
        pos[active] = np.arange(len(active))
        rows = np.flatnonzero(pos[node_of] >= 0)
        if len(rows) == 0:
            break
        A = len(active)
        key = (pos[node_of[rows]][:, None] * (F * B) + offsets + codes[rows]).ravel()
        size = A * F * B
        gsum = np.bincount(key, weights=np.repeat(g[rows], F), minlength=size).reshape(A, F, B)
        cnt = np.bincount(key, minlength=size).reshape(A, F, B)
        lsum = np.cumsum(gsum, axis=2)
        lcnt = np.cumsum(cnt, axis=2)
        tsum = lsum[:, :, -1:]
        tcnt = lcnt[:, :, -1:]
        rsum, rcnt = tsum - lsum, tcnt - lcnt
        ok = (lcnt >= min_samples_leaf) & (rcnt >= min_samples_leaf) & valid_bin[None]
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = lsum**2 / lcnt + rsum**2 / rcnt - tsum**2 / tcnt
        gain = np.where(ok, gain, -np.inf)
        flat = gain.reshape(A, -1)
        best = np.argmax(flat, axis=1)
        next_active = []
        for a, node in enumerate(active):
            gbest = flat[a, best[a]]
            if not np.isfinite(gbest) or gbest <= 1e-12 * scale:
                continue
            f, b = divmod(int(best[a]), B)
            li, ri = len(feature), len(feature) + 1
            feature[node], threshold[node], left[node], right[node] = f, float(thresholds[f][b]), li, ri
            for _child in (li, ri):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
            members = rows[node_of[rows] == node]
            goes_left = codes[members, f] <= b
            node_of[members[goes_left]] = li
            node_of[members[~goes_left]] = ri
            next_active += [li, ri]
        active = next_active
    tree = RegressionTree(
        np.array(feature), np.array(threshold), np.array(left), np.array(right),
        np.zeros(len(feature)), max_depth,
    )
    return tree, node_of


def fit_tree(X, residuals, params: GbtParams | None = None, binner: Binner | None = None) -> RegressionTree:
    """Least-squares regression tree with leaf means."""
    params = params or GbtParams()
    X = np.asarray(X, dtype=float)
    g = np.asarray(residuals, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("empty input")
    if len(g) != len(X):
        raise ValueError("rows of X must align with residuals")
    binner = binner or Binner(params.max_bins).fit(X)
    tree, leaf = _grow(binner.transform(X), binner.n_bins, binner.thresholds, g,
                       params.max_depth, params.min_samples_leaf)
    sums = np.bincount(leaf, weights=g, minlength=len(tree.feature))
    counts = np.bincount(leaf, minlength=len(tree.feature))
    tree.value = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return tree


def _lower_quantile(x: np.ndarray, q: float) -> float:
    # a minimizer of the summed pinball loss
    return float(np.quantile(x, q, method="inverted_cdf"))


@dataclass
class Ensemble:
    loss: str
    quantile: float | None
    init: float
    learning_rate: float
    trees: list[RegressionTree] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(len(X), self.init)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out


def _loss(y, pred, loss, q):
    if loss == "squared":
        return float(np.mean((y - pred) ** 2))
    return float(np.mean(pinball(pred, y, q)))


def fit_gbt(X, y, loss: str = "squared", q: float | None = None,
            params: GbtParams | None = None, binner: Binner | None = None) -> Ensemble:
    """Stagewise boosting on negative gradients.

    Squared loss fits residuals with leaf means. Pinball loss fits the
    gradient signs (q or q - 1) for the tree structure, then sets each leaf
    to the q-quantile of the residuals it holds.
    """
    params = params or GbtParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) != len(y):
        raise ValueError("X rows must align with y")
    if loss == "pinball":
        if q is None or not 0 < q < 1:
            raise ValueError("quantile level must lie in (0, 1)")
        init = _lower_quantile(y, q)
    elif loss == "squared":
        init = float(np.mean(y))
    else:
        raise ValueError(f"unknown loss {loss!r}")
    binner = binner or Binner(params.max_bins).fit(X)
    codes = binner.transform(X)
    model = Ensemble(loss, q, init, params.learning_rate)
    pred = np.full(len(y), init)
    model.train_loss.append(_loss(y, pred, loss, q))
    for _ in range(params.n_trees):
        resid = y - pred
        g = resid if loss == "squared" else np.where(resid > 0, q, q - 1.0)
        tree, leaf = _grow(codes, binner.n_bins, binner.thresholds, g,
                           params.max_depth, params.min_samples_leaf)
        values = np.zeros(len(tree.feature))
        if loss == "squared":
            sums = np.bincount(leaf, weights=resid, minlength=len(values))
            counts = np.bincount(leaf, minlength=len(values))
            np.divide(sums, counts, out=values, where=counts > 0)
        else:
            order = np.argsort(leaf, kind="stable")
            bounds = np.flatnonzero(np.diff(leaf[order])) + 1
            for members in np.split(order, bounds):
                values[leaf[members[0]]] = _lower_quantile(resid[members], q)
        tree.value = values
        model.trees.append(tree)
        pred = pred + params.learning_rate * values[leaf]
        model.train_loss.append(_loss(y, pred, loss, q))
    return model


@dataclass
class QuantileGbtModel:
    """One boosted ensemble per quantile level plus a squared-loss point model."""

    quantile_levels: np.ndarray
    ensembles: list[Ensemble]
    point_ensemble: Ensemble
    columns: list[str]
    capacity: float = np.inf

    def __post_init__(self):
        self.quantile_levels = np.asarray(self.quantile_levels, dtype=float)
        if len(self.ensembles) != len(self.quantile_levels):
            raise ValueError("one ensemble per quantile level required")
        if np.any(np.diff(self.quantile_levels) <= 0):
            raise ValueError("quantile levels must be sorted")


def fit_quantile_gbt(X: FeatureMatrix, y, levels=DEFAULT_LEVELS, params: GbtParams | None = None,
                     capacity: float = np.inf) -> QuantileGbtModel:
    """Separate training per quantile, sharing one feature binning."""
    params = params or GbtParams()
    binner = Binner(params.max_bins).fit(X.values)
    ensembles = [fit_gbt(X.values, y, "pinball", q, params, binner) for q in levels]
    point = fit_gbt(X.values, y, "squared", None, params, binner)
    return QuantileGbtModel(np.asarray(levels), ensembles, point, list(X.columns), capacity)


def predict_quantiles(model: QuantileGbtModel, X: FeatureMatrix, horizons=None,
                      issue_time=None) -> QuantileForecast:
    """Per-row quantiles, sorted to remove crossings and clipped to [0, capacity]."""
    if list(X.columns) != list(model.columns):
        missing = sorted(set(model.columns) - set(X.columns))
        extra = sorted(set(X.columns) - set(model.columns))
        raise ValueError(f"feature schema mismatch (missing {missing}, unexpected {extra})")
    raw = np.stack([e.predict(X.values) for e in model.ensembles], axis=1)
    values = np.clip(np.sort(raw, axis=1), 0.0, model.capacity)
    point = np.clip(model.point_ensemble.predict(X.values), 0.0, model.capacity)
    if horizons is None:
        horizons = X.keys[:, 1] if np.ndim(X.keys) == 2 else np.zeros(len(X), dtype=int)
    return QuantileForecast(issue_time, np.asarray(horizons), model.quantile_levels, values, point,
                            valid_times=X.times)
