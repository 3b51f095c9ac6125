import csv
import json
import os

import numpy as np
import pytest
import yaml

from app.config import ExperimentConfig
from app.main import main
from models.txrx import RxBlock
from services.experiment import estimate_rx_block, simulate_realization
from tools.storage.block_codec import BlockCodec


SCENARIO = {
    "scenario": {"N": 4, "K": 2, "L": 1, "T": 40, "T_D": 0, "B_hz": 1e8, "fc_hz": 28e9,
                 "rho_db": [0.0, 6.0], "on_grid": True},
    "estimators": ["sparse_blind", "subspace", "onebit_sparse_blind"],
    "solver": {"default": {"max_iters": 30}},
    "monte_carlo": {"n_realizations": 2, "master_seed": 3},
    "output": {"eta_grid_points": 6},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "experiment.yaml"
    path.write_text(yaml.safe_dump(SCENARIO))
    return str(path)


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def test_experiment_writes_tables_and_manifest(config_path, tmp_path):
    out = str(tmp_path / "run")
    assert main(["experiment", "--config", config_path, "--out", out]) == 0
    for name in ("sparse_blind.csv", "subspace.csv", "onebit_sparse_blind.csv", "eta_crb.csv",
                 "eta_crb_summary.csv", "manifest.json"):
        assert os.path.exists(os.path.join(out, name))
    with open(os.path.join(out, "sparse_blind.csv"), newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["eta_threshold", "prob", "method", "rho_db", "n_samples"]
    assert len(rows) == 12
    with open(os.path.join(out, "manifest.json")) as f:
        manifest = json.load(f)
    assert manifest["master_seed"] == 3 and manifest["command"] == "experiment"


def test_experiment_output_is_byte_identical_across_runs_and_threads(config_path, tmp_path):
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["experiment", "--config", config_path, "--out", first]) == 0
    assert main(["experiment", "--config", config_path, "--out", second, "--threads", "3"]) == 0
    for name in ("sparse_blind.csv", "subspace.csv", "onebit_sparse_blind.csv", "eta_crb.csv"):
        assert _read(os.path.join(first, name)) == _read(os.path.join(second, name))


def test_seed_override_is_recorded(config_path, tmp_path):
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    main(["experiment", "--config", config_path, "--out", first])
    main(["experiment", "--config", config_path, "--out", second, "--seed", "4"])
    manifests = [json.loads(_read(os.path.join(out, "manifest.json"))) for out in (first, second)]
    assert [m["master_seed"] for m in manifests] == [3, 4]
    assert manifests[0]["config_hash"] != manifests[1]["config_hash"]


def test_crb_reports_both_receivers(config_path, tmp_path):
    out = str(tmp_path / "crb")
    assert main(["crb", "--config", config_path, "--out", out]) == 0
    with open(os.path.join(out, "eta_crb_table.csv"), newline="") as f:
        rows = list(csv.DictReader(f))
    assert [row["kind"] for row in rows] == ["ideal_exact", "onebit_low_snr_flat"] * 2
    with open(os.path.join(out, "eta_crb_counts.csv"), newline="") as f:
        assert "n_singular" in next(csv.reader(f))


def test_simulated_block_estimates_like_the_in_process_run(config_path, tmp_path, capsys):
    out = str(tmp_path / "blocks")
    assert main(["simulate", "--config", config_path, "--out", out, "--rho-index", "1"]) == 0
    block_path = capsys.readouterr().out.strip()
    assert block_path == os.path.join(out, "block_1_0.bin")

    assert main(["estimate", "--config", config_path, "--out", out, "--input", block_path]) == 0
    stored = BlockCodec().load_estimate(os.path.join(out, "block_1_0_estimate.bin"))
    with open(os.path.join(out, "block_1_0_estimate.yaml")) as f:
        diagnostics = yaml.safe_load(f)
    assert diagnostics["method"] == "sparse_blind"

    config = ExperimentConfig.load(config_path)
    block = simulate_realization(config, config.scenario.build_dictionary(), 1, 0)
    rx = RxBlock(y_freq=block.rx.y_freq, rho=block.rx.rho, dims=block.rx.dims)
    _, estimate, H_hat = estimate_rx_block(rx, config)
    np.testing.assert_array_equal(stored.S_hat, estimate.S_hat)
    np.testing.assert_array_equal(stored.H_hat, H_hat)
    assert diagnostics["iterations"] == estimate.iterations


def test_onebit_block_goes_to_the_onebit_estimator(config_path, tmp_path, capsys):
    out = str(tmp_path / "blocks")
    assert main(["simulate", "--config", config_path, "--out", out, "--onebit"]) == 0
    block_path = capsys.readouterr().out.strip()
    assert main(["estimate", "--config", config_path, "--out", out, "--input", block_path]) == 0
    with open(os.path.join(out, "block_0_0_estimate.yaml")) as f:
        assert yaml.safe_load(f)["method"] == "onebit_sparse_blind"


def test_missing_key_exits_with_invalid_input(tmp_path, capsys):
    payload = {**SCENARIO, "scenario": {k: v for k, v in SCENARIO["scenario"].items() if k != "T"}}
    path = tmp_path / "broken.yaml"
    path.write_text(yaml.safe_dump(payload))
    assert main(["experiment", "--config", str(path), "--out", str(tmp_path)]) == 1
    assert "scenario.T" in capsys.readouterr().err


def test_truncated_block_exits_with_invalid_input(config_path, tmp_path, capsys):
    out = str(tmp_path / "blocks")
    main(["simulate", "--config", config_path, "--out", out])
    block_path = capsys.readouterr().out.strip()
    with open(block_path, "rb") as f:
        data = f.read()
    with open(block_path, "wb") as f:
        f.write(data[:-7])
    assert main(["estimate", "--config", config_path, "--out", out, "--input", block_path]) == 1


def test_mismatched_block_exits_with_failure(config_path, tmp_path, rng, complex_normal):
    path = str(tmp_path / "other.bin")
    BlockCodec().save_rx(path, RxBlock(y_freq=complex_normal(rng, (20, 4)), rho=1.0, dims=(4, 2, 20, 0)))
    assert main(["estimate", "--config", config_path, "--out", str(tmp_path), "--input", path]) == 2


def test_rho_index_outside_the_scenario_is_invalid_input(config_path, tmp_path):
    assert main(["simulate", "--config", config_path, "--out", str(tmp_path), "--rho-index", "5"]) == 1
