"""
Backtracking iterative soft-thresholding for ℓ1-regularized maximization.

All estimators of the package maximize an objective of the form
f(S) − λ‖S‖₁,₁ over a complex matrix S. The iteration is

    S ← exp(j∠(S − μΔ)) ∘ max(|S − μΔ| − μλ/2, 0),    Δ = −∂f/∂S*,

and a step is accepted only if the regularized objective did not
decrease; otherwise μ ← βμ and the step is retried from the same S.
Accepted steps let μ grow back by 1/β, never above the starting step.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional

import numpy as np

from tools.logger import AppLogger


class SolverError(Exception):
    """Raised on invalid solver settings."""
    pass


@dataclass(frozen=True)
class SolverConfig:
    """
    Settings of the thresholding loop.

    Attributes:
        lam (float): ℓ1 weight λ ≥ 0.
        mu0 (float): Largest starting step μ > 0 (see initial_step).
        beta (float): Backtracking factor in (0, 1).
        max_iters (int): Maximum number of accepted iterations.
        tol_rel_obj (float): Stop when the gain of an accepted step falls
            below this fraction of the total gain since the start.
        min_step (float): Stop when μ falls below this floor.
    """
    lam: float = 4.0
    mu0: float = 1.0
    beta: float = 0.5
    max_iters: int = 500
    tol_rel_obj: float = 1e-6
    min_step: float = 1e-12

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise SolverError(f"lam must be >= 0, got {self.lam}")
        if not self.mu0 > 0:
            raise SolverError(f"mu0 must be > 0, got {self.mu0}")
        if not 0 < self.beta < 1:
            raise SolverError(f"beta must lie in (0, 1), got {self.beta}")
        if self.max_iters < 0:
            raise SolverError(f"max_iters must be >= 0, got {self.max_iters}")
        if not self.min_step > 0:
            raise SolverError(f"min_step must be > 0, got {self.min_step}")


@dataclass
class SparseEstimate:
    """
    Solver output.

    Attributes:
        S_hat (np.ndarray): Estimated coefficients.
        objective_trace (List[float]): Regularized objective at the start
            and after every accepted iteration.
        iterations (int): Accepted iterations.
        final_step (float): Step size μ at exit.
        converged (bool): True when the relative-gain test fired.
        stop_reason (str): 'tolerance', 'max_iters' or 'step_floor'.
        step_gains (List[float]): Objective gain of every accepted step,
            measured with the objective that accepted it.
        kkt_residual (float): Stationarity residual, if computed.
        rank_deficient (bool): Initializer / pilot rank diagnostic.
        S_init (np.ndarray, optional): Starting point.
    """
    S_hat: np.ndarray
    objective_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    final_step: float = float("nan")
    converged: bool = False
    stop_reason: str = ""
    step_gains: List[float] = field(default_factory=list)
    kkt_residual: float = float("nan")
    rank_deficient: bool = False
    S_init: Optional[np.ndarray] = None


def soft_threshold(M: np.ndarray, tau: float) -> np.ndarray:
    """
    Complex soft thresholding e^{j∠m}·max(|m| − τ, 0), entrywise.

    Raises:
        SolverError: If tau is negative.
    """
    if tau < 0:
        raise SolverError(f"threshold must be >= 0, got {tau}")
    M = np.asarray(M)
    if tau == 0:
        return M.copy()
    magnitude = np.abs(M)
    shrink = np.divide(np.maximum(magnitude - tau, 0.0), magnitude,
                       out=np.zeros_like(magnitude), where=magnitude > 0)
    return M * shrink


def l11_norm(S: np.ndarray) -> float:
    return float(np.abs(S).sum())


def stationarity_residual(S: np.ndarray, delta: np.ndarray, lam: float) -> float:
    """
    Largest violation of the optimality conditions of f(S) − λ‖S‖₁,₁.

    With Δ = −∂f/∂S*: |Δ + (λ/2)e^{j∠s}| on the support and
    max(|Δ| − λ/2, 0) off it. Zero exactly at fixed points of the
    thresholding iteration.
    """
    S = np.asarray(S)
    delta = np.asarray(delta)
    if S.shape != delta.shape:
        raise SolverError(f"gradient shape {delta.shape} does not match S shape {S.shape}")
    if S.size == 0:
        return 0.0
    active = S != 0
    phase = np.exp(1j * np.angle(S))
    on_support = np.abs(delta + 0.5 * lam * phase)
    off_support = np.maximum(np.abs(delta) - 0.5 * lam, 0.0)
    return float(np.max(np.where(active, on_support, off_support)))


def initial_step(
    S0: np.ndarray,
    gradient: Callable[[np.ndarray, Any], np.ndarray],
    state: Any,
    mu0: float,
    rel_perturbation: float = 1e-3,
) -> float:
    """
    Starting step min(μ0, 1/κ), where κ = ‖Δ(S0 + εS0) − Δ(S0)‖ / ‖εS0‖ is
    the curvature of the objective along the starting point.

    Returns mu0 unchanged for an all-zero start or a flat objective.
    """
    norm = np.linalg.norm(S0)
    if norm == 0:
        return mu0
    D = rel_perturbation * S0
    curvature = np.linalg.norm(gradient(S0 + D, state) - gradient(S0, state)) / (rel_perturbation * norm)
    if not np.isfinite(curvature) or curvature <= 0:
        return mu0
    return float(min(mu0, 1.0 / curvature))


def proximal_ascent(
    S0: np.ndarray,
    objective: Callable[[np.ndarray, Any], float],
    gradient: Callable[[np.ndarray, Any], np.ndarray],
    config: SolverConfig,
    prepare: Optional[Callable[[np.ndarray], Any]] = None,
    logger: Optional[AppLogger] = None,
    label: str = "solver",
) -> SparseEstimate:
    """
    Maximize objective(S) − λ‖S‖₁,₁ by backtracking soft thresholding.

    The loop starts from the step returned by initial_step. After every
    accepted step μ grows by 1/β, up to that starting value. A step that
    empties a nonzero S is accepted only if it strictly increases the
    regularized objective.

    Args:
        S0 (np.ndarray): Starting point.
        objective (Callable): f(S, state), the smooth part.
        gradient (Callable): Δ(S, state) = −∂f/∂S*.
        config (SolverConfig): Loop settings.
        prepare (Callable, optional): state = prepare(S), evaluated once per
            accepted iterate (e.g. an E-step); the objective and gradient of
            one iteration, including its backtracking retries, share it.
        logger (AppLogger, optional): Destination of progress messages.
        label (str): Name used in log messages.

    Returns:
        SparseEstimate: Final iterate and diagnostics (never raises on
        non-convergence).
    """
    lam = config.lam
    S = np.array(S0, dtype=complex, copy=True)
    state = prepare(S) if prepare is not None else None
    f_cur = objective(S, state) - lam * l11_norm(S)
    trace = [f_cur]
    gains: List[float] = []
    total_gain = 0.0
    iterations = 0
    reason = "max_iters"
    converged = False
    mu = config.mu0
    grad = None
    if config.max_iters > 0:
        mu = initial_step(S, gradient, state, config.mu0)
        grad = gradient(S, state)
    mu_max = mu
    if logger is not None:
        logger.debug(f"{label}: starting step {mu:.3e}, objective {f_cur:.6e}")

    while iterations < config.max_iters:
        candidate = soft_threshold(S - mu * grad, mu * lam / 2.0)
        f_new = objective(candidate, state) - lam * l11_norm(candidate)
        emptied = not np.any(candidate) and np.any(S)
        if not np.isfinite(f_new) or f_new < f_cur or (emptied and f_new <= f_cur):
            mu *= config.beta
            if mu < config.min_step:
                reason = "step_floor"
                break
            continue

        iterations += 1
        gain = f_new - f_cur
        gains.append(gain)
        total_gain += gain
        S = candidate
        if prepare is not None:
            state = prepare(S)
            f_cur = objective(S, state) - lam * l11_norm(S)
        else:
            f_cur = f_new
        trace.append(f_cur)

        if logger is not None and iterations % 50 == 0:
            logger.debug(f"{label}: iteration {iterations}, objective {f_cur:.6e}, step {mu:.3e}")
        # gain relative to the progress made so far, not to |f|
        if gain <= config.tol_rel_obj * total_gain:
            reason = "tolerance"
            converged = True
            break
        mu = min(mu / config.beta, mu_max)
        grad = gradient(S, state)

    if logger is not None:
        message = (f"{label}: stopped after {iterations} iterations ({reason}), "
                   f"objective {f_cur:.6e}, step {mu:.3e}")
        if converged:
            logger.info(message)
        else:
            logger.warning(message)

    return SparseEstimate(
        S_hat=S,
        objective_trace=trace,
        iterations=iterations,
        final_step=mu,
        converged=converged,
        stop_reason=reason,
        step_gains=gains,
        S_init=np.array(S0, dtype=complex, copy=True),
    )
