"""Support vector data description of a flexibility trajectory set.

The dual

    maximize   sum_i beta_i d_i - beta^T K beta
    subject to sum_i beta_i = 1,  0 <= beta_i <= 1 / (nu K)

is solved by projected gradient ascent. ``d_i`` is the kernel self-similarity
``k(x_i, x_i)`` (``self_term="kernel"``) or the constant 1 of a normalized
kernel (``self_term="unit"``); the same choice is used by the radius, so the
KKT conditions and the classification rule agree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .feasibility import TrajectorySet


class SvddConvergenceError(RuntimeError):
    pass


def sigmoid_kernel(A, B, gamma: float, coef0: float) -> np.ndarray:
    return np.tanh(gamma * np.atleast_2d(A) @ np.atleast_2d(B).T + coef0)


@dataclass
class SvddModel:
    support_vectors: np.ndarray
    betas: np.ndarray
    gamma: float
    coef0: float
    radius2_threshold: float
    nu: float
    self_term: str = "kernel"
    const: float = 0.0  # sum_ij beta_i beta_j k(x_i, x_j), cached

    def kernel(self, A, B) -> np.ndarray:
        return sigmoid_kernel(A, B, self.gamma, self.coef0)

    def to_json(self) -> str:
        params = {
            "support_vectors": self.support_vectors.tolist(),
            "betas": self.betas.tolist(),
            "gamma": self.gamma,
            "coef0": self.coef0,
            "radius2_threshold": self.radius2_threshold,
            "nu": self.nu,
            "self_term": self.self_term,
        }
        return json.dumps({"type": "svdd", "params": params}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SvddModel":
        d = json.loads(text)
        if d.get("type") != "svdd":
            raise ValueError("not an SVDD model")
        p = d["params"]
        sv, betas = np.asarray(p["support_vectors"], dtype=float), np.asarray(p["betas"], dtype=float)
        model = cls(sv, betas, p["gamma"], p["coef0"], p["radius2_threshold"], p["nu"], p["self_term"])
        model.const = _double_sum(model)
        return model


def _double_sum(model: SvddModel) -> float:
    K = model.kernel(model.support_vectors, model.support_vectors)
    return float(model.betas @ K @ model.betas)


def project_capped_simplex(v: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto {b : sum b = 1, 0 <= b <= cap}.

    The projection is clip(v - tau, 0, cap) for the shift tau that makes it sum
    to one. That sum is piecewise linear in tau, so scanning the sorted
    breakpoints gives tau exactly.
    """
    v = np.asarray(v, dtype=float)
    n = len(v)
    if cap * n < 1 - 1e-12:
        raise ValueError("cap too small: the constraint set is empty")
    bps = np.sort(np.concatenate([v, v - cap]))
    sums = np.clip(v[None, :] - bps[:, None], 0.0, cap).sum(axis=1)  # non-increasing in tau
    j = int(np.searchsorted(-sums, -1.0, side="left"))  # first breakpoint with sum <= 1
    if j == 0:
        tau = bps[0]
    else:
        t0, t1, s0, s1 = bps[j - 1], bps[j], sums[j - 1], sums[j]
        tau = t1 if s0 == s1 else t0 + (s0 - 1.0) * (t1 - t0) / (s0 - s1)
    b = np.clip(v - tau, 0.0, cap)
    return b / b.sum()


def svdd_dual_objective(beta, K, d) -> float:
    return float(beta @ d - beta @ K @ beta)


def svdd_fit(
    data: TrajectorySet | np.ndarray,
    nu: float = 0.05,
    gamma: float | None = None,
    coef0: float = 0.0,
    self_term: str = "kernel",
    max_iter: int = 50000,
    tol: float = 1e-12,
) -> SvddModel:
    X = data.trajectories if isinstance(data, TrajectorySet) else np.atleast_2d(np.asarray(data, dtype=float))
    n, T = X.shape
    if n < 2:
        raise ValueError("SVDD needs at least two trajectories")
    if not 0 < nu <= 1:
        raise ValueError("nu must be in (0, 1]")
    if self_term not in ("kernel", "unit"):
        raise ValueError("self_term must be 'kernel' or 'unit'")
    if gamma is None:
        # 1/T saturates tanh for kW-scale trajectories; scale by the data instead
        gamma = 1.0 / max(float(np.max(np.sum(X * X, axis=1))), 1e-12)
    K = sigmoid_kernel(X, X, gamma, coef0)
    d = np.diag(K).copy() if self_term == "kernel" else np.ones(n)
    cap = min(1.0, 1.0 / (nu * n))
    step = 1.0 / (2.0 * max(np.linalg.norm(K, 2), 1e-12))
    beta = np.full(n, 1.0 / n)
    converged = False
    for _ in range(max_iter):
        grad = d - 2.0 * K @ beta
        new = project_capped_simplex(beta + step * grad, cap)
        moved = np.max(np.abs(new - beta))
        beta = new
        if moved <= tol:
            converged = True
            break
    if not converged:
        raise SvddConvergenceError(f"dual not converged after {max_iter} iterations")

    # radius of unbounded support vectors sets the sphere
    eps = 1e-7 * cap
    r2 = d - 2.0 * K @ beta + beta @ K @ beta
    boundary = (beta > eps) & (beta < cap - eps)
    if boundary.any():
        threshold = float(np.mean(r2[boundary]))
    elif np.any(beta >= cap - eps):
        threshold = float(np.min(r2[beta >= cap - eps]))
    else:
        threshold = float(np.max(r2))

    keep = beta > 1e-10
    sv, b = X[keep], beta[keep]
    uniq, inverse = np.unique(sv, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inverse.ravel(), b)
    merged /= merged.sum()
    model = SvddModel(uniq, merged, float(gamma), float(coef0), threshold, float(nu), self_term)
    model.const = _double_sum(model)
    return model


def svdd_radius2(model: SvddModel, x) -> np.ndarray | float:
    """Squared distance of ``x`` (one trajectory or a batch) to the sphere centre."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.support_vectors.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {model.support_vectors.shape[1]}")
    cross = model.kernel(model.support_vectors, X)  # [sv, query]
    if model.self_term == "kernel":
        own = np.tanh(model.gamma * np.sum(X * X, axis=1) + model.coef0)
    else:
        own = np.ones(len(X))
    r2 = own - 2.0 * model.betas @ cross + model.const
    return float(r2[0]) if single else r2


def svdd_classify(model: SvddModel, x, atol: float = 1e-10) -> np.ndarray | bool:
    """True (feasible) when the radius does not exceed the sphere radius.

    ``atol`` absorbs rounding so boundary support vectors classify as inside.
    """
    r2 = svdd_radius2(model, x)
    return r2 <= model.radius2_threshold + atol
