import numpy as np
import pytest

from services.thresholding import (
    SolverConfig,
    SolverError,
    initial_step,
    l11_norm,
    proximal_ascent,
    soft_threshold,
    stationarity_residual,
)


def _quadratic(A):
    objective = lambda S, _: -float(np.sum(np.abs(S - A) ** 2))
    gradient = lambda S, _: S - A
    return objective, gradient


def test_soft_threshold_shrinks_modulus_and_keeps_phase():
    M = np.array([3 + 4j, 0.5j, 0.0, -2.0])
    out = soft_threshold(M, 1.0)
    np.testing.assert_allclose(out, np.array([(3 + 4j) * 0.8, 0.0, 0.0, -1.0]))


def test_soft_threshold_zero_tau_is_identity():
    M = np.array([[1 + 1j, -2j]])
    np.testing.assert_array_equal(soft_threshold(M, 0.0), M)


def test_soft_threshold_rejects_negative_tau():
    with pytest.raises(SolverError):
        soft_threshold(np.ones(2), -0.1)


def test_l11_norm():
    assert l11_norm(np.array([[3 + 4j, -1], [0, 2j]])) == pytest.approx(8.0)


@pytest.mark.parametrize("kwargs", [
    {"lam": -1.0},
    {"mu0": 0.0},
    {"beta": 1.0},
    {"max_iters": -1},
    {"min_step": 0.0},
])
def test_solver_config_validation(kwargs):
    with pytest.raises(SolverError):
        SolverConfig(**kwargs)


def test_quadratic_problem_is_solved_in_closed_form(rng, complex_normal):
    A = complex_normal(rng, (6, 2)) * 3
    objective, gradient = _quadratic(A)
    config = SolverConfig(lam=2.0, mu0=1.0)
    estimate = proximal_ascent(np.zeros_like(A), objective, gradient, config)
    np.testing.assert_allclose(estimate.S_hat, soft_threshold(A, 1.0), atol=1e-12)
    assert estimate.converged and estimate.stop_reason == "tolerance"
    assert stationarity_residual(estimate.S_hat, gradient(estimate.S_hat, None), 2.0) < 1e-12


def test_objective_trace_is_non_decreasing(rng, complex_normal):
    A = complex_normal(rng, (5, 3))
    objective, gradient = _quadratic(A)
    estimate = proximal_ascent(np.zeros_like(A), objective, gradient, SolverConfig(lam=0.5, mu0=8.0, max_iters=100))
    assert np.all(np.diff(estimate.objective_trace) >= 0)
    assert len(estimate.objective_trace) == estimate.iterations + 1
    assert all(g >= 0 for g in estimate.step_gains)


def test_ascent_direction_failure_hits_step_floor(rng, complex_normal):
    A = complex_normal(rng, (3, 1))
    objective, gradient = _quadratic(A)
    wrong_sign = lambda S, state: -gradient(S, state)
    estimate = proximal_ascent(np.zeros_like(A), objective, wrong_sign, SolverConfig(lam=0.0, min_step=1e-6))
    assert estimate.stop_reason == "step_floor"
    assert estimate.iterations == 0 and not estimate.converged
    np.testing.assert_array_equal(estimate.S_hat, np.zeros_like(A))


def test_zero_iterations_returns_start(rng, complex_normal):
    A = complex_normal(rng, (3, 2))
    objective, gradient = _quadratic(A)
    S0 = complex_normal(rng, (3, 2))
    estimate = proximal_ascent(S0, objective, gradient, SolverConfig(max_iters=0))
    np.testing.assert_array_equal(estimate.S_hat, S0)
    assert estimate.stop_reason == "max_iters"


def test_prepare_runs_once_per_accepted_iterate(rng, complex_normal):
    A = complex_normal(rng, (4, 2))
    calls = []

    def prepare(S):
        calls.append(S.copy())
        return A

    objective = lambda S, target: -float(np.sum(np.abs(S - target) ** 2))
    gradient = lambda S, target: S - target
    estimate = proximal_ascent(np.zeros_like(A), objective, gradient, SolverConfig(lam=0.1, mu0=0.25), prepare=prepare)
    assert len(calls) == estimate.iterations + 1


def test_large_objective_offset_does_not_stop_the_loop_early():
    # one stiff and one weak coordinate under a likelihood-sized constant
    A = np.array([[1 + 1j], [1 - 1j]])
    weights = np.array([[1.0], [0.01]])
    objective = lambda S, _: -3e4 - float(np.sum(weights * np.abs(S - A) ** 2))
    gradient = lambda S, _: weights * (S - A)
    config = SolverConfig(lam=0.0, mu0=1.0, max_iters=5000, tol_rel_obj=1e-8)
    estimate = proximal_ascent(np.zeros_like(A), objective, gradient, config)
    assert estimate.converged and estimate.stop_reason == "tolerance"
    assert estimate.iterations > 100
    assert stationarity_residual(estimate.S_hat, gradient(estimate.S_hat, None), 0.0) < 1e-3
    assert abs(estimate.S_hat[1, 0] - A[1, 0]) < 0.05


def test_step_recovers_after_a_rejected_candidate(rng, complex_normal):
    A = complex_normal(rng, (4, 1))
    objective, gradient = _quadratic(A)
    calls = []

    def flaky(S, state):
        calls.append(1)
        if len(calls) == 2:
            return float("nan")
        return objective(S, state)

    estimate = proximal_ascent(np.zeros_like(A), flaky, gradient, SolverConfig(lam=0.0, mu0=1.0))
    np.testing.assert_allclose(estimate.S_hat, A, atol=1e-12)
    assert estimate.final_step == 1.0
    assert estimate.converged


def test_starting_step_follows_the_curvature(rng, complex_normal):
    A = complex_normal(rng, (3, 2))
    gradient = lambda S, _: 4.0 * (S - A)
    S0 = complex_normal(rng, (3, 2))
    assert initial_step(S0, gradient, None, 1.0) == pytest.approx(0.25)
    assert initial_step(S0, gradient, None, 0.1) == pytest.approx(0.1)
    assert initial_step(np.zeros_like(S0), gradient, None, 1.0) == 1.0
    assert initial_step(S0, lambda S, _: np.zeros_like(S), None, 2.0) == 2.0


def test_emptying_step_needs_a_strict_gain():
    # flat regularized objective: zero ties with every shrunk iterate
    lam = 2.0
    objective = lambda S, _: lam * l11_norm(S)
    gradient = lambda S, _: np.zeros_like(S)
    S0 = np.ones((2, 1), dtype=complex)
    estimate = proximal_ascent(S0, objective, gradient, SolverConfig(lam=lam, mu0=4.0))
    assert np.any(estimate.S_hat != 0)
    np.testing.assert_allclose(estimate.S_hat, 0.5 * S0)
    assert estimate.converged


def test_emptying_step_is_taken_when_it_strictly_improves():
    objective = lambda S, _: 0.0
    gradient = lambda S, _: np.zeros_like(S)
    estimate = proximal_ascent(np.ones((2, 1)), objective, gradient, SolverConfig(lam=2.0, mu0=4.0))
    np.testing.assert_array_equal(estimate.S_hat, np.zeros((2, 1)))
    assert estimate.step_gains[0] > 0


def test_stationarity_residual_off_support():
    S = np.zeros((2, 1), dtype=complex)
    delta = np.array([[0.4], [1.5j]])
    assert stationarity_residual(S, delta, lam=2.0) == pytest.approx(0.5)


def test_stationarity_residual_shape_mismatch():
    with pytest.raises(SolverError):
        stationarity_residual(np.zeros((2, 2)), np.zeros((2, 1)), 1.0)
