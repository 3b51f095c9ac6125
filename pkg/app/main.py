import os
import sys
import argparse

from typing import List, Optional
from dotenv import load_dotenv


from app import __version__
from app.config import ConfigError, ExperimentConfig
from models.txrx import onebit_block, RxBlock
from services.blind_ideal import active_users
from services.experiment import (
    CRB_IDEAL,
    CRB_ONEBIT,
    crb_table,
    estimate_rx_block,
    run_experiment,
    simulate_realization,
)
from tools.logger import AppLogger
from tools.formatter import (
    write_ccdf_tables,
    write_crb_summary,
    write_diagnostics,
    write_eta_crb,
    write_manifest,
)
from tools.storage.block_codec import BlockCodec, BlockCodecError, EstimateRecord
from tools import utils as Utils


THREADS_ENV = "BLINDCHAN_THREADS"
DEFAULT_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "config", "config.yaml")
DEFAULT_ENV = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "config", ".env")


def load_environment_variables(env_path: str = DEFAULT_ENV) -> dict:
    """
    Load optional overrides from a .env file without replacing variables
    already set in the environment.

    :param env_path: Path to the .env file; a missing file is not an error
    :return: Dictionary with the recognized settings (None when unset)
    """
    if os.path.exists(env_path):
        load_dotenv(dotenv_path=env_path, override=False)
    threads = os.getenv(THREADS_ENV)
    try:
        threads_value = int(threads) if threads else None
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {threads!r}") from e
    return {"log_dir": os.getenv("BLINDCHAN_LOG_DIR"), "threads": threads_value}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindchan", description="Blind sparse channel estimation experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--clear-logs", action="store_true", help="truncate existing log files before running")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=DEFAULT_CONFIG, help="YAML experiment file")
        p.add_argument("--seed", type=int, default=None, help="override monte_carlo.master_seed")
        p.add_argument("--threads", type=int, default=None, help="worker cap (results do not depend on it)")
        p.add_argument("--out", default=None, help="output directory (default: output.path)")

    common(sub.add_parser("experiment", help="Monte-Carlo CCDF tables of the configured estimators"))
    common(sub.add_parser("crb", help="mean eta_CRB per SNR point"))

    estimate = sub.add_parser("estimate", help="sparse blind estimate of a stored block")
    common(estimate)
    estimate.add_argument("--input", required=True, help="received-block container")

    simulate = sub.add_parser("simulate", help="write one simulated block container")
    common(simulate)
    simulate.add_argument("--onebit", action="store_true", help="store only the one-bit samples")
    simulate.add_argument("--rho-index", type=int, default=0, help="index into scenario.rho_db")
    simulate.add_argument("--realization", type=int, default=0, help="realization index")
    return parser


def _load_config(args: argparse.Namespace, env: dict) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config)
    threads = args.threads if args.threads is not None else env.get("threads")
    return config.with_overrides(seed=args.seed, threads=threads, out=args.out)


def cmd_experiment(config: ExperimentConfig, logger: AppLogger) -> int:
    result = run_experiment(config)
    out_dir = config.output.path
    files = write_ccdf_tables(out_dir, result.tables, config.estimators)
    if config.output.eta_crb:
        files.append(write_eta_crb(out_dir, result.tables, [CRB_IDEAL, CRB_ONEBIT]))
        files.append(write_crb_summary(os.path.join(out_dir, "eta_crb_summary.csv"), result.crb_rows))
    write_manifest(out_dir, config.config_hash(), config.monte_carlo.master_seed, __version__,
                   "experiment", files, result.failures)
    logger.info(f"Experiment results written to {out_dir} ({len(result.failures)} failures)")
    return 0


def cmd_crb(config: ExperimentConfig, logger: AppLogger) -> int:
    rows = crb_table(config)
    out_dir = config.output.path
    path = write_crb_summary(os.path.join(out_dir, "eta_crb_table.csv"), rows)
    counts = write_crb_summary(os.path.join(out_dir, "eta_crb_counts.csv"), rows, with_counts=True)
    singular = sum(row.n_singular for row in rows)
    if singular:
        print(f"{singular} realizations with a singular Fisher matrix excluded", file=sys.stderr)
    write_manifest(out_dir, config.config_hash(), config.monte_carlo.master_seed, __version__,
                   "crb", [path, counts])
    logger.info(f"eta_CRB table written to {path}")
    return 0


def cmd_estimate(config: ExperimentConfig, input_path: str, logger: AppLogger) -> int:
    codec = BlockCodec()
    rx = codec.load_rx(input_path)
    method, estimate, H_hat = estimate_rx_block(rx, config)
    out_dir = config.output.path
    stem = os.path.splitext(os.path.basename(input_path))[0]
    codec.save_estimate(
        os.path.join(out_dir, f"{stem}_estimate.bin"),
        EstimateRecord(S_hat=estimate.S_hat, H_hat=H_hat, dims=rx.dims, rho=rx.rho, onebit=rx.is_onebit),
    )
    write_diagnostics(os.path.join(out_dir, f"{stem}_estimate.yaml"), {
        "method": method,
        "iterations": int(estimate.iterations),
        "final_objective": float(estimate.objective_trace[-1]),
        "kkt_residual": float(estimate.kkt_residual),
        "converged": bool(estimate.converged),
        "stop_reason": estimate.stop_reason,
        "final_step": float(estimate.final_step),
        "rank_deficient": bool(estimate.rank_deficient),
        "active_users": [bool(a) for a in active_users(estimate.S_hat)],
    })
    logger.info(f"{method} estimate of {input_path}: {estimate.iterations} iterations ({estimate.stop_reason})")
    return 0


def cmd_simulate(config: ExperimentConfig, rho_index: int, realization: int, onebit: bool, logger: AppLogger) -> int:
    if not 0 <= rho_index < len(config.scenario.rho_db):
        raise ConfigError(f"--rho-index {rho_index} outside scenario.rho_db")
    dictionary = config.scenario.build_dictionary()
    block = simulate_realization(config, dictionary, rho_index, realization)
    if onebit:
        rx = onebit_block(block.rx.r_time, block.rx.rho, block.rx.dims)
    else:
        rx = RxBlock(y_freq=block.rx.y_freq, rho=block.rx.rho, dims=block.rx.dims)
    path = os.path.join(config.output.path, f"block_{rho_index}_{realization}.bin")
    BlockCodec().save_rx(path, rx)
    logger.info(f"Simulated block written to {path}")
    print(path)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point: parse arguments, load environment and config, run the
    subcommand. Returns the process exit code (0 ok, 1 invalid input, 2 failure).
    """
    args = build_parser().parse_args(argv)
    try:
        env = load_environment_variables()
        if args.clear_logs:
            Utils.clear_files_in_directory()
        logger = AppLogger("main.log")
        config = _load_config(args, env)
        if args.command == "experiment":
            return cmd_experiment(config, logger)
        if args.command == "crb":
            return cmd_crb(config, logger)
        if args.command == "estimate":
            return cmd_estimate(config, args.input, logger)
        return cmd_simulate(config, args.rho_index, args.realization, args.onebit, logger)

    except (ConfigError, BlockCodecError) as e:
        error_message = f"Invalid input: {e}"
        AppLogger("main.log").error(error_message)
        print(error_message, file=sys.stderr)
        return 1
    except Exception as e:
        _, _, exec_tb = sys.exc_info()
        line_number = exec_tb.tb_lineno if exec_tb else "unknown"
        function_name = exec_tb.tb_frame.f_code.co_name if exec_tb else "unknown"
        error_message = f"Application failed in '{function_name}' at line {line_number}: {e}"
        AppLogger("main.log").error(error_message)
        print(error_message, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
