import numpy as np
import pytest

from app.config import ExperimentConfig
from models.txrx import RxBlock, onebit_block
from services import experiment
from services.crb import FisherKind
from services.experiment import (
    CRB_IDEAL,
    CRB_ONEBIT,
    ExperimentError,
    crb_table,
    draw_realization,
    estimate_rx_block,
    run_experiment,
    simulate_realization,
)


def _config(estimators=("sparse_blind", "subspace", "pilot_ls", "semiblind"), **scenario):
    payload = {
        "scenario": {"N": 4, "K": 2, "L": 1, "T": 48, "T_D": 0, "B_hz": 1e8, "fc_hz": 28e9,
                     "rho_db": [0.0, 10.0], "on_grid": True, **scenario},
        "estimators": list(estimators),
        "solver": {"default": {"max_iters": 40}},
        "pilots": {"T_T": 4},
        "monte_carlo": {"n_realizations": 3, "master_seed": 5},
        "output": {"eta_grid_points": 11},
    }
    return ExperimentConfig.from_dict(payload)


def test_channel_is_shared_across_snr_points():
    config = _config()
    dictionary = config.scenario.build_dictionary()
    low = simulate_realization(config, dictionary, 0, 1)
    high = simulate_realization(config, dictionary, 1, 1)
    np.testing.assert_array_equal(low.H_true, high.H_true)
    assert not np.array_equal(low.rx.y_freq, high.rx.y_freq)
    other = draw_realization(config, dictionary, 2)
    assert not np.array_equal(other.S, low.realization.S)


def test_pilot_blocks_split_the_observations():
    config = _config()
    block = simulate_realization(config, config.scenario.build_dictionary(), 0, 0)
    assert block.X_T.shape == (2, 4)
    assert block.Y_T.shape == (4, 4)
    assert block.Y_D.shape == (4, 44)
    assert block.rx.is_onebit


def test_results_do_not_depend_on_thread_count():
    config = _config()
    serial = run_experiment(config, threads=1)
    pooled = run_experiment(config, threads=4)
    assert serial.tables.keys() == pooled.tables.keys()
    for key, table in serial.tables.items():
        np.testing.assert_array_equal(table.prob, pooled.tables[key].prob)
    np.testing.assert_array_equal([row.eta_crb_mean for row in serial.crb_rows],
                                  [row.eta_crb_mean for row in pooled.crb_rows])


def test_tables_pool_every_user_of_every_realization():
    config = _config()
    result = run_experiment(config)
    for method in config.estimators:
        for rho_db in config.scenario.rho_db:
            table = result.tables[(method, rho_db)]
            assert table.n_samples == 6
            assert table.prob[0] == 1.0
    assert (CRB_IDEAL, 0.0) in result.tables
    assert not result.failures


def test_estimator_failures_are_recorded_and_the_run_completes(monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("diverged")

    monkeypatch.setattr(experiment, "semiblind_estimate", broken)
    config = _config()
    result = run_experiment(config)
    assert len(result.failures) == 6
    assert all(f["method"] == "semiblind" and "diverged" in f["error"] for f in result.failures)
    assert ("semiblind", 0.0) not in result.tables
    assert ("sparse_blind", 0.0) in result.tables


def test_onebit_runs_add_the_onebit_bound():
    config = _config(estimators=("onebit_sparse_blind", "onebit_subspace"))
    result = run_experiment(config)
    kinds = {row.kind for row in result.crb_rows}
    assert kinds == {FisherKind.IDEAL_EXACT.value, FisherKind.ONEBIT_LOW_SNR_FLAT.value}
    assert (CRB_ONEBIT, 10.0) in result.tables


def test_crb_table_covers_both_receivers():
    config = _config(estimators=("sparse_blind",))
    rows = crb_table(config)
    assert [(row.rho_db, row.kind) for row in rows] == [
        (0.0, FisherKind.IDEAL_EXACT.value),
        (0.0, FisherKind.ONEBIT_LOW_SNR_FLAT.value),
        (10.0, FisherKind.IDEAL_EXACT.value),
        (10.0, FisherKind.ONEBIT_LOW_SNR_FLAT.value),
    ]
    assert all(row.n_used + 2 * row.n_singular == 6 for row in rows)
    ideal = [row.eta_crb_mean for row in rows if row.kind == FisherKind.IDEAL_EXACT.value]
    assert ideal[1] > ideal[0]


def test_crb_table_uses_the_wideband_bound_with_delay_spread():
    config = _config(estimators=("sparse_blind",), T_D=1, B_hz=7e9, fc_hz=60.5e9, rho_db=[9.0])
    kinds = [row.kind for row in crb_table(config)]
    assert kinds == [FisherKind.IDEAL_EXACT.value, FisherKind.ONEBIT_LOW_SNR_WIDEBAND.value]


def test_stored_blocks_are_dispatched_by_receiver_type():
    config = _config(estimators=("sparse_blind",))
    block = simulate_realization(config, config.scenario.build_dictionary(), 1, 0)
    unquantized = RxBlock(y_freq=block.rx.y_freq, rho=block.rho, dims=block.rx.dims)
    method, estimate, H_hat = estimate_rx_block(unquantized, config)
    assert method == "sparse_blind"
    assert H_hat.shape == (48, 4, 2)
    assert np.all(np.diff(estimate.objective_trace) >= 0)

    quantized = onebit_block(block.rx.r_time, block.rho, block.rx.dims)
    method, _, _ = estimate_rx_block(quantized, config)
    assert method == "onebit_sparse_blind"


def test_stored_block_must_match_the_scenario(rng, complex_normal):
    config = _config(estimators=("sparse_blind",))
    rx = RxBlock(y_freq=complex_normal(rng, (32, 4)), rho=1.0, dims=(4, 2, 32, 0))
    with pytest.raises(ExperimentError):
        estimate_rx_block(rx, config)
