import numpy as np
import pytest

from hemskit.var_admm import (
    RoundLog,
    audit_data_flow,
    build_var_design,
    curious_node_reconstruct,
    example_partition,
    fit_centralized,
    fit_consensus_predictors,
    fit_sharing_examples,
    forecast_var,
    hub_reconstruct,
    lambda_max,
    lasso_objective,
    predictor_partition,
    simulate_var,
    soft_threshold,
)


def ista(design, lam, iters=20000):
    """Plain proximal gradient on 0.5||Y - BZ||^2 + lam|B|_1."""
    Y, Z = design.Y, design.Z
    L = np.linalg.norm(Z @ Z.T, 2)
    B = np.zeros((Y.shape[0], Z.shape[0]))
    for _ in range(iters):
        grad = (B @ Z - Y) @ Z.T
        V = B - grad / L
        B = np.sign(V) * np.maximum(np.abs(V) - lam / L, 0.0)
    return B


@pytest.fixture(scope="module")
def var3():
    y, _ = simulate_var(n=3, p=2, T=200, seed=1)
    d = build_var_design(y, 2)
    return d, 0.1 * lambda_max(d)


def test_design_shift_identity():
    d = build_var_design(np.array([[1, 2, 3, 4], [5, 6, 7, 8]], dtype=float), 1, center=False)
    assert d.Y.shape == (2, 3)
    assert np.array_equal(d.Y, [[2, 3, 4], [6, 7, 8]])
    assert np.array_equal(d.Z, [[1, 2, 3], [5, 6, 7]])


def test_design_boundary_and_p2_layout():
    x = np.arange(12, dtype=float).reshape(2, 6)
    assert build_var_design(x, 5).T == 1
    d = build_var_design(x, 2, center=False)
    for t in range(d.T):
        assert d.Z[:, t].tolist() == [x[0, t + 1], x[1, t + 1], x[0, t], x[1, t]]
    with pytest.raises(ValueError):
        build_var_design(x, 6)


def test_soft_threshold():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    x = np.random.default_rng(0).normal(size=20)
    assert np.array_equal(soft_threshold(x, 0.0), x)
    with pytest.raises(ValueError):
        soft_threshold(1.0, -1.0)


def test_full_shrinkage(var3):
    d, _ = var3
    model = fit_centralized(d, 1.01 * lambda_max(d))
    assert np.all(model.B == 0.0)


def test_zero_lambda_is_least_squares(var3):
    d, _ = var3
    model = fit_centralized(d, 0.0, tol=1e-10, max_iter=20000)
    ls = np.linalg.solve(d.Z @ d.Z.T, d.Z @ d.Y.T).T
    assert np.max(np.abs(model.B - ls)) < 1e-6


def test_objective_matches_ista(var3):
    d, lam = var3
    model = fit_centralized(d, lam)
    assert model.converged
    ref = lasso_objective(d, ista(d, lam), lam)
    assert abs(lasso_objective(d, model.B, lam) - ref) / ref < 1e-6


def test_consensus_single_worker_same_solution(var3):
    d, lam = var3
    cent = fit_centralized(d, lam, tol=1e-9, max_iter=20000)
    cons, _ = fit_consensus_predictors(d, lam, n_workers=1, tol=1e-9, max_iter=20000)
    assert np.max(np.abs(cons.B - cent.B)) < 1e-6


def test_consensus_three_workers(var3):
    d, lam = var3
    cent = fit_centralized(d, lam)
    cons, log = fit_consensus_predictors(d, lam, n_workers=3)
    assert cons.converged
    assert np.linalg.norm(cons.B - cent.B) / np.linalg.norm(cent.B) < 1e-4
    assert all(rec["messages"] == 4 for rec in log.records)


def test_sharing_matches_centralized(var3):
    d, lam = var3
    cent = fit_centralized(d, lam)
    for N in (1, 4):
        shar, log = fit_sharing_examples(d, lam, n_workers=N)
        assert shar.converged
        assert np.linalg.norm(shar.B - cent.B) / np.linalg.norm(cent.B) < 1e-4
        assert all(rec["messages"] == N + 1 for rec in log.records)


def test_threads_do_not_change_result(var3):
    d, lam = var3
    a, _ = fit_consensus_predictors(d, lam, n_workers=3)
    b, _ = fit_consensus_predictors(d, lam, n_workers=3, threads=3)
    assert a.B.tobytes() == b.B.tobytes()


def test_true_support_recovered_at_half_lambda_max():
    y, A = simulate_var(n=3, p=1, T=2000, seed=4, density=0.5)
    d = build_var_design(y, 1)
    model = fit_centralized(d, 0.05 * lambda_max(d))
    big = np.abs(A) > 0.15
    assert np.all(np.abs(model.B[big]) > 0)


def test_nonzeros_shrink_with_lambda(var3):
    d, _ = var3
    counts = [fit_centralized(d, r * lambda_max(d)).nonzeros() for r in (0.01, 0.1, 0.5, 0.9)]
    assert counts == sorted(counts, reverse=True)


def test_invalid_partitions_rejected(var3):
    d, lam = var3
    with pytest.raises(ValueError):
        fit_sharing_examples(d, lam, partition=[np.arange(5)])
    with pytest.raises(ValueError):
        predictor_partition(d, d.n + 1)
    with pytest.raises(ValueError):
        fit_centralized(d, -1.0)


def test_forecast_zero_coefficients_returns_mean():
    from hemskit.var_admm import VarModel

    model = VarModel(np.zeros((2, 2)), 0.0, 1.0, 1, np.array([3.0, -1.0]))
    fc = forecast_var(model, np.array([[10.0], [7.0]]), steps=3)
    assert np.allclose(fc.to_array(), [[3.0] * 3, [-1.0] * 3])


def test_forecast_scalar_recursion():
    from hemskit.var_admm import VarModel

    model = VarModel(np.array([[0.5]]), 0.0, 1.0, 1, np.array([0.0]))
    fc = forecast_var(model, np.array([[2.0]]), steps=2)
    assert fc.to_array().tolist() == [[1.0, 0.5]]


def test_curious_node_recovers_responses(var3):
    d, lam = var3
    _, log = fit_consensus_predictors(d, lam, n_workers=3)
    assert np.max(np.abs(curious_node_reconstruct(log) - d.Y)) <= 1e-8
    assert np.array_equal(hub_reconstruct(log), d.Y)
    _, log1 = fit_consensus_predictors(d, lam, n_workers=1)
    assert np.max(np.abs(curious_node_reconstruct(log1) - d.Y)) <= 1e-8


def test_sharing_audit_flags_foreign_lags(var3):
    d, _ = var3
    audit = audit_data_flow(d, "examples", example_partition(d, 3))
    assert audit.raw_data_crossed
    clean = audit_data_flow(d, "predictors", predictor_partition(d, 3))
    assert not clean.raw_data_crossed


def test_round_log_jsonl_round_trip(var3):
    d, lam = var3
    _, log = fit_consensus_predictors(d, lam, n_workers=3)
    text = log.to_jsonl()
    back = RoundLog.from_jsonl(text, "predictors", 3, log.rho)
    assert back.to_jsonl() == text
    assert np.max(np.abs(curious_node_reconstruct(back) - d.Y)) <= 1e-8


def test_simulated_var_is_seeded_and_stable():
    a, A = simulate_var(seed=3)
    b, _ = simulate_var(seed=3)
    assert np.array_equal(a, b)
    assert a.shape == (5, 500)
    assert np.all(np.isfinite(a)) and np.max(np.abs(a)) < 50
