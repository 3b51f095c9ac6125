"""
Monte-Carlo experiment runner.

Work items are (SNR point, realization) pairs. Every item draws from its own
random streams: the channel stream depends on (master seed, realization)
only, so all SNR points of one realization see the same channel; the block
stream adds the SNR index. Items run on a thread pool and are aggregated in
submission order, so the tables do not depend on the worker count.
"""
from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from app.config import ExperimentConfig, PILOT_ESTIMATORS
from models.channel import (
    ChannelRealization,
    Dictionary,
    channel_transfer,
    draw_channel,
    exact_transfer,
    snap_to_grid,
)
from models.txrx import RxBlock, draw_symbols, quantize_onebit, simulate_rx
from services.baselines import pilot_ls_estimate, pilot_symbols, semiblind_estimate
from services.blind_ideal import estimate_blind, subspace_init
from services.blind_onebit import estimate_blind_onebit, onebit_subspace_init
from services.crb import (
    CrbResult,
    FisherKind,
    eta_crb,
    fisher_ideal,
    fisher_onebit_flat,
    fisher_onebit_wideband,
    reduce_support,
)
from services.metrics import CcdfTable, EtaResult, ccdf, eta_grid, eta_metric, resolve_permutation
from services.thresholding import SparseEstimate
from tools.logger import AppLogger
from tools.utils import seed_stream


_logger = AppLogger("experiment.log")

CRB_IDEAL = "crb_ideal"
CRB_ONEBIT = "crb_onebit"

_Item = TypeVar("_Item")
_Result = TypeVar("_Result")


class ExperimentError(Exception):
    """Raised when an experiment cannot be set up or aggregated."""
    pass


@dataclass
class SimulatedBlock:
    """
    One simulated coherence block with its ground truth.

    Attributes:
        realization (ChannelRealization): Path parameters.
        H_true (np.ndarray): (T, N, K) exact transfer function.
        rx (RxBlock): Observations, one-bit samples included.
        rho (float): Linear SNR.
        X_T (np.ndarray, optional): (K, T_T) pilots, pilot estimators only.
        Y_T (np.ndarray, optional): (N, T_T) pilot observations.
        Y_D (np.ndarray, optional): (N, T − T_T) data observations.
    """
    realization: ChannelRealization
    H_true: np.ndarray
    rx: RxBlock
    rho: float
    X_T: Optional[np.ndarray] = None
    Y_T: Optional[np.ndarray] = None
    Y_D: Optional[np.ndarray] = None


@dataclass
class MethodOutcome:
    method: str
    rho_db: float
    realization: int
    eta: Optional[EtaResult] = None
    iterations: int = 0
    converged: bool = False
    kkt_residual: float = float("nan")
    error: str = ""


@dataclass
class RealizationOutcome:
    rho_db: float
    realization: int
    methods: List[MethodOutcome] = field(default_factory=list)
    crb: Dict[str, CrbResult] = field(default_factory=dict)


@dataclass
class CrbRow:
    """Mean η_CRB of one SNR point and Fisher model."""
    rho_db: float
    eta_crb_mean: float
    kind: str
    n_used: int
    n_singular: int


@dataclass
class ExperimentResult:
    """
    Attributes:
        tables (Dict[Tuple[str, float], CcdfTable]): CCDF per (method, rho_db);
            the η_CRB reference curves use the names crb_ideal and crb_onebit.
        crb_rows (List[CrbRow]): Mean η_CRB per (rho_db, Fisher kind).
        outcomes (List[RealizationOutcome]): Per-item details in run order.
        failures (List[Dict[str, object]]): Estimator failures.
    """
    tables: Dict[Tuple[str, float], CcdfTable]
    crb_rows: List[CrbRow]
    outcomes: List[RealizationOutcome]
    failures: List[Dict[str, object]]


def _map(fn: Callable[[_Item], _Result], items: Sequence[_Item], threads: int) -> List[_Result]:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def draw_realization(config: ExperimentConfig, dictionary: Dictionary, realization: int) -> ChannelRealization:
    """Channel of one realization; identical for every SNR point."""
    s = config.scenario
    rng = _channel_rng(config, realization)
    return draw_channel(dictionary.geometry, s.K, s.L, s.T_D, s.on_grid, rng)


def _channel_rng(config: ExperimentConfig, realization: int) -> np.random.Generator:
    return seed_stream(config.monte_carlo.master_seed, 0, realization)


def _block_rng(config: ExperimentConfig, rho_index: int, realization: int) -> np.random.Generator:
    return seed_stream(config.monte_carlo.master_seed, 1, rho_index, realization)


def simulate_realization(
    config: ExperimentConfig,
    dictionary: Dictionary,
    rho_index: int,
    realization: int,
) -> SimulatedBlock:
    """
    Draw the channel, the symbols and the noise of one work item and pass
    the block through the one-bit ADC.

    With pilot estimators configured, the first T_T symbol slots of the block
    carry pilots observed through H_true[m] for m < T_T, and the remaining
    T − T_T observations form the data matrix Y_D.
    """
    s = config.scenario
    rho = config.scenario.rho_linear[rho_index]
    channel = draw_realization(config, dictionary, realization)
    H_true = exact_transfer(channel, dictionary.geometry, dictionary.omega)

    rng = _block_rng(config, rho_index, realization)
    symbols = draw_symbols(s.K, s.T, rho, config.symbols.distribution, rng)
    rx = quantize_onebit(simulate_rx(H_true, symbols, rng, T_D=s.T_D))
    block = SimulatedBlock(realization=channel, H_true=H_true, rx=rx, rho=rho)

    if config.uses_pilots:
        T_T = config.pilots.T_T
        X_T = pilot_symbols(s.K, T_T, rho)
        noise = (rng.standard_normal((s.N, T_T)) + 1j * rng.standard_normal((s.N, T_T))) / np.sqrt(2.0)
        block.X_T = X_T
        block.Y_T = np.einsum("tnk,kt->nt", H_true[:T_T], X_T) + noise
        block.Y_D = rx.y_freq[T_T:].T
    return block


def crb_support(channel: ChannelRealization, dictionary: Dictionary) -> np.ndarray:
    """Clairvoyant sparse coefficients: exact for on-grid draws, snapped otherwise."""
    if channel.on_grid and channel.S is not None:
        return channel.S
    return snap_to_grid(channel, dictionary)


def crb_for_realization(
    channel: ChannelRealization,
    dictionary: Dictionary,
    rho: float,
    onebit: bool = True,
) -> Dict[str, CrbResult]:
    """
    η_CRB of the ideal receiver and, optionally, of the one-bit receiver at
    the grid channel F_mS with S restricted to its true support.
    """
    S = crb_support(channel, dictionary)
    H_grid = channel_transfer(S, dictionary)
    results = {CRB_IDEAL: eta_crb(reduce_support(fisher_ideal(H_grid, dictionary, rho), S), H_grid, dictionary)}
    if onebit:
        if dictionary.is_flat:
            fisher = fisher_onebit_flat(H_grid[0], dictionary.F[0], rho, dictionary.T)
        else:
            fisher = fisher_onebit_wideband(H_grid, dictionary, rho)
        results[CRB_ONEBIT] = eta_crb(reduce_support(fisher, S), H_grid, dictionary)
    return results


def estimate_channel(
    method: str,
    block: SimulatedBlock,
    dictionary: Dictionary,
    config: ExperimentConfig,
) -> Tuple[np.ndarray, Optional[SparseEstimate]]:
    """
    Run one estimator on a block.

    Returns:
        (H_hat, estimate): (T, N, K) channel estimate and the solver output
        (None for the closed-form initializers and the semi-blind method).
    """
    s = config.scenario
    rho = block.rho
    solver = config.solver_for(method)
    if method == "sparse_blind":
        estimate = estimate_blind(block.rx, dictionary, rho, solver, K=s.K)
        return channel_transfer(estimate.S_hat, dictionary), estimate
    if method == "subspace":
        return channel_transfer(subspace_init(block.rx, dictionary, rho, s.K), dictionary), None
    if method == "onebit_sparse_blind":
        estimate = estimate_blind_onebit(block.rx, dictionary, rho, solver, K=s.K, window=config.onebit.window)
        return channel_transfer(estimate.S_hat, dictionary), estimate
    if method == "onebit_subspace":
        return channel_transfer(onebit_subspace_init(block.rx, dictionary, rho, s.K), dictionary), None
    if block.X_T is None:
        raise ExperimentError(f"estimator '{method}' needs pilot observations")
    if method == "pilot_ls":
        estimate = pilot_ls_estimate(block.Y_T, block.X_T, dictionary, lam=solver.lam, config=solver)
        return channel_transfer(estimate.S_hat, dictionary), estimate
    if method == "semiblind":
        result = semiblind_estimate(block.Y_T, block.Y_D, block.X_T, rho, solver)
        H_hat = np.broadcast_to(result.H_hat, (dictionary.T,) + result.H_hat.shape)
        return np.array(H_hat), None
    raise ExperimentError(f"unknown estimator '{method}'")


def score_estimate(method: str, H_hat: np.ndarray, H_true: np.ndarray, T_D: int) -> EtaResult:
    """
    η of an estimate. Blind methods resolve the user permutation; pilot
    methods are tied to the pilot order and keep the identity.
    """
    if method in PILOT_ESTIMATORS:
        eta, shift = eta_metric(H_hat, H_true, T_D)
        K = H_true.shape[2]
        zero = np.sum(np.abs(H_hat) ** 2, axis=(0, 1)) == 0
        return EtaResult(eta_per_user=eta, best_delay_shift=shift, permutation=np.arange(K),
                         method_label=method, zero_estimate=zero)
    return resolve_permutation(H_hat, H_true, T_D, method_label=method)


def run_realization(
    config: ExperimentConfig,
    dictionary: Dictionary,
    rho_index: int,
    realization: int,
    with_crb: bool = True,
) -> RealizationOutcome:
    """
    Simulate one work item, run every configured estimator on it and score
    the estimates. Estimator failures are logged and recorded; the item
    still completes.
    """
    rho_db = config.scenario.rho_db[rho_index]
    block = simulate_realization(config, dictionary, rho_index, realization)
    outcome = RealizationOutcome(rho_db=rho_db, realization=realization)

    for method in config.estimators:
        record = MethodOutcome(method=method, rho_db=rho_db, realization=realization)
        try:
            H_hat, estimate = estimate_channel(method, block, dictionary, config)
            record.eta = score_estimate(method, H_hat, block.H_true, config.scenario.T_D)
            if estimate is not None:
                record.iterations = estimate.iterations
                record.converged = estimate.converged
                record.kkt_residual = estimate.kkt_residual
        except Exception as e:
            _, _, exec_tb = sys.exc_info()
            line_number = exec_tb.tb_lineno if exec_tb else "unknown"
            function_name = exec_tb.tb_frame.f_code.co_name if exec_tb else "unknown"
            _logger.error(
                f"{method} failed at rho={rho_db} dB, realization {realization} "
                f"(in '{function_name}' at line {line_number}): {e}"
            )
            record.error = f"{type(e).__name__}: {e}"
        outcome.methods.append(record)

    if with_crb:
        try:
            outcome.crb = crb_for_realization(block.realization, dictionary, block.rho, onebit=config.uses_onebit)
        except Exception as e:
            _logger.error(f"eta_CRB failed at rho={rho_db} dB, realization {realization}: {e}")
    return outcome


def _work_items(config: ExperimentConfig) -> List[Tuple[int, int]]:
    return [(i, r) for i in range(len(config.scenario.rho_db))
            for r in range(config.monte_carlo.n_realizations)]


def _crb_values(outcomes: Iterable[RealizationOutcome], rho_db: float, kind: str) -> Tuple[List[float], int]:
    values: List[float] = []
    singular = 0
    for outcome in outcomes:
        result = outcome.crb.get(kind)
        if outcome.rho_db != rho_db or result is None:
            continue
        if result.singular:
            singular += 1
            continue
        values.extend(result.eta.tolist())
    return values, singular


def run_experiment(config: ExperimentConfig, threads: Optional[int] = None) -> ExperimentResult:
    """
    Run all (SNR, realization) items and pool the per-user η of every
    method into CCDF tables on the configured threshold grid.

    Args:
        config (ExperimentConfig): Validated experiment.
        threads (int, optional): Worker cap; defaults to monte_carlo.threads.

    Raises:
        ExperimentError: If the dictionary cannot be built.
    """
    threads = threads or config.monte_carlo.threads
    try:
        dictionary = config.scenario.build_dictionary()
    except Exception as e:
        raise ExperimentError(f"cannot build the dictionary: {e}") from e
    items = _work_items(config)
    with_crb = config.output.eta_crb
    _logger.info(
        f"Experiment {config.config_hash()[:12]}: {len(items)} items, estimators={list(config.estimators)}, "
        f"threads={threads}"
    )

    outcomes = _map(lambda item: run_realization(config, dictionary, item[0], item[1], with_crb), items, threads)

    grid = eta_grid(config.output.eta_grid_points)
    tables: Dict[Tuple[str, float], CcdfTable] = {}
    failures: List[Dict[str, object]] = []
    for rho_db in config.scenario.rho_db:
        for method in config.estimators:
            values: List[float] = []
            for outcome in outcomes:
                if outcome.rho_db != rho_db:
                    continue
                for record in outcome.methods:
                    if record.method != method:
                        continue
                    if record.eta is None:
                        failures.append({"method": method, "rho_db": rho_db,
                                         "realization": record.realization, "error": record.error})
                    else:
                        values.extend(record.eta.eta_per_user.tolist())
            if values:
                tables[(method, rho_db)] = ccdf(values, grid)
            else:
                _logger.warning(f"No successful runs of {method} at rho={rho_db} dB")

    crb_rows: List[CrbRow] = []
    if with_crb:
        kinds = [CRB_IDEAL] + ([CRB_ONEBIT] if config.uses_onebit else [])
        for rho_db in config.scenario.rho_db:
            for kind in kinds:
                values, singular = _crb_values(outcomes, rho_db, kind)
                if values:
                    tables[(kind, rho_db)] = ccdf(values, grid)
                crb_rows.append(_crb_row(rho_db, kind, values, singular, dictionary))

    _logger.info(f"Experiment finished: {len(failures)} estimator failures")
    return ExperimentResult(tables=tables, crb_rows=crb_rows, outcomes=outcomes, failures=failures)


def _fisher_kind(kind: str, dictionary: Dictionary) -> str:
    if kind == CRB_IDEAL:
        return FisherKind.IDEAL_EXACT.value
    if dictionary.is_flat:
        return FisherKind.ONEBIT_LOW_SNR_FLAT.value
    return FisherKind.ONEBIT_LOW_SNR_WIDEBAND.value


def _crb_row(rho_db: float, kind: str, values: List[float], singular: int, dictionary: Dictionary) -> CrbRow:
    if singular:
        _logger.warning(f"{singular} singular Fisher matrices ({kind}) at rho={rho_db} dB excluded from the mean")
    mean = float(np.mean(values)) if values else float("nan")
    return CrbRow(rho_db=rho_db, eta_crb_mean=mean, kind=_fisher_kind(kind, dictionary),
                  n_used=len(values), n_singular=singular)


def crb_table(config: ExperimentConfig, threads: Optional[int] = None) -> List[CrbRow]:
    """
    Mean η_CRB of the ideal and the one-bit receiver for every SNR point,
    over the channels of the configured realizations. Singular Fisher
    matrices are counted and left out of the mean.
    """
    threads = threads or config.monte_carlo.threads
    dictionary = config.scenario.build_dictionary()
    items = _work_items(config)

    def evaluate(item: Tuple[int, int]) -> RealizationOutcome:
        rho_index, realization = item
        channel = draw_realization(config, dictionary, realization)
        rho = config.scenario.rho_linear[rho_index]
        return RealizationOutcome(rho_db=config.scenario.rho_db[rho_index], realization=realization,
                                  crb=crb_for_realization(channel, dictionary, rho, onebit=True))

    outcomes = _map(evaluate, items, threads)
    rows = []
    for rho_db in config.scenario.rho_db:
        for kind in (CRB_IDEAL, CRB_ONEBIT):
            values, singular = _crb_values(outcomes, rho_db, kind)
            rows.append(_crb_row(rho_db, kind, values, singular, dictionary))
    return rows


def estimate_rx_block(rx: RxBlock, config: ExperimentConfig) -> Tuple[str, SparseEstimate, np.ndarray]:
    """
    Sparse blind estimation of a stored block. One-bit blocks go to the EM
    estimator, unquantized blocks to the ideal one.

    Returns:
        (method, estimate, H_hat)

    Raises:
        ExperimentError: If the block does not match the configured scenario.
    """
    dictionary = config.scenario.build_dictionary()
    if (rx.N, rx.T, rx.T_D) != (dictionary.N, dictionary.T, dictionary.T_D):
        raise ExperimentError(
            f"block dims (N, T, T_D) = {(rx.N, rx.T, rx.T_D)} do not match the scenario "
            f"{(dictionary.N, dictionary.T, dictionary.T_D)}"
        )
    if rx.is_onebit:
        method = "onebit_sparse_blind"
        estimate = estimate_blind_onebit(rx, dictionary, rx.rho, config.solver_for(method), K=rx.K,
                                         window=config.onebit.window)
    else:
        method = "sparse_blind"
        estimate = estimate_blind(rx, dictionary, rx.rho, config.solver_for(method), K=rx.K)
    return method, estimate, channel_transfer(estimate.S_hat, dictionary)
