#!/usr/bin/env python3
"""
Risk-Sensitive Trading Agents

Trains and evaluates DQN-family and distributional (C51, QR-DQN, IQN) agents on
a daily futures market, with CVaR-based risk-sensitive action selection.

Usage:
    python risk_trading.py gen-data --n-days 1200 --data market.csv
    python risk_trading.py train --agent-kind iqn --alpha 0.3 --split 1
    python risk_trading.py eval --checkpoint out/checkpoint --split 1
    python risk_trading.py eval --checkpoint long --all-splits true
    python risk_trading.py ablate --agent-kind c51 --alphas 0.1,0.5,1 --jobs 4
    python risk_trading.py compare --agents dqn,c51,iqn --seeds 0,1,2
    python risk_trading.py calibrate-sigma

Market CSV format:
    day,delta,f0,f1,...
    0,0.52,0.13,-1.2,...
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .agents import BUILTIN_AGENTS, builtin_agent
from .config import RunConfig
from .eval_harness import (
    SweepResult,
    calibrate_sigma_hat,
    make_splits,
    run_ablation,
    run_comparison,
    run_test,
)
from .io import (
    SWEEP_COLUMNS,
    load_agent,
    load_csv,
    save_agent,
    save_json,
    save_rows,
    save_trajectory,
    write_csv,
)
from .market_data import generate_synthetic
from .models import ConfigError, ExperimentSplit, FileError, MarketSeries, RiskTradingError
from .output import (
    print_calibration,
    print_report_summary,
    print_series_summary,
    print_sweep_summary,
    print_training_summary,
)
from .cli import handle_error, parse_arguments
from .training import train
from .validation import print_validation_result, validate_run_config

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    "agent", "alpha", "runs", "pnl_mean", "pnl_median", "risky_pct_mean",
    "risky_pct_median", "risky_ratio_mean", "risky_ratio_median",
]


def output_dir(config: RunConfig) -> Path:
    path = Path(config["out"])
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise FileError(f"Cannot create output directory {path}: {e}")
    return path


def checkpoint_path(config: RunConfig) -> str:
    return config["checkpoint"] or str(Path(config["out"]) / "checkpoint")


def load_series(config: RunConfig) -> MarketSeries:
    series = load_csv(config["data"])
    logger.info(f"Loaded {len(series)} days with {series.feature_dim} raw features from {config['data']}")
    return series


def splits_for(config: RunConfig, series: MarketSeries) -> list[ExperimentSplit]:
    return make_splits(series, config["n_experiments"], config["test_days"])


def selected_split(config: RunConfig, series: MarketSeries) -> ExperimentSplit:
    splits = splits_for(config, series)
    index = config["split"]
    if not 0 <= index < len(splits):
        raise ConfigError(f"split must be in [0, {len(splits)}), got {index}")
    return splits[index]


def cmd_gen_data(config: RunConfig) -> None:
    series = generate_synthetic(config.generator_config())
    Path(config["data"]).parent.mkdir(parents=True, exist_ok=True)
    write_csv(series, config["data"])
    print_series_summary(series, config["data"])


def cmd_train(config: RunConfig) -> None:
    agent_config = config.agent_config()
    series = load_series(config)
    split = selected_split(config, series)
    out = output_dir(config)

    result = train(agent_config, series, split.train_range, config["seed"])
    checkpoint = checkpoint_path(config)
    save_agent(checkpoint, result.agent, result.pca_model)
    save_json(out / "training_log.json", result.log.to_dict())
    print_training_summary(result, split, checkpoint)


def cmd_eval(config: RunConfig) -> None:
    series = load_series(config)
    splits = splits_for(config, series) if config["all_splits"] else [selected_split(config, series)]
    out = output_dir(config)

    checkpoint = checkpoint_path(config)
    if checkpoint in BUILTIN_AGENTS:
        agent, pca_model, echo = builtin_agent(checkpoint), None, {"agent": checkpoint}
    else:
        agent, pca_model = load_agent(checkpoint)
        echo = agent.config.to_dict()

    for split in splits:
        report = run_test(agent, series, pca_model, split, seed=config["seed"], config=echo)
        save_json(out / f"report_split{split.index}.json", report.to_dict())
        save_trajectory(out / f"trajectory_split{split.index}.csv", report.trajectory)
        print_report_summary(report)


def save_sweep(out: Path, name: str, result: SweepResult) -> None:
    save_rows(out / f"{name}.csv", [row.to_dict() for row in result.rows], SWEEP_COLUMNS)
    save_rows(out / f"{name}_summary.csv", [row.to_dict() for row in result.summary], SUMMARY_COLUMNS)
    logger.info(f"Wrote {len(result.rows)} runs to {out / f'{name}.csv'}")


def cmd_ablate(config: RunConfig) -> None:
    agent_config = config.agent_config()
    series = load_series(config)
    out = output_dir(config)
    result = run_ablation(
        agent_config,
        series,
        splits_for(config, series),
        config.run_seeds(),
        alphas=config["alphas"],
        jobs=config["jobs"],
    )
    save_sweep(out, "ablation", result)
    print_sweep_summary(result.summary)


def cmd_compare(config: RunConfig) -> None:
    configs = [config.agent_config(kind=kind) for kind in config["agents"]]
    series = load_series(config)
    out = output_dir(config)
    result = run_comparison(configs, series, splits_for(config, series), config.run_seeds(), jobs=config["jobs"])
    save_sweep(out, "comparison", result)
    print_sweep_summary(result.summary)


def cmd_calibrate_sigma(config: RunConfig) -> None:
    series = load_series(config)
    out = output_dir(config)
    entries = []
    for split in splits_for(config, series):
        calibration = calibrate_sigma_hat(series, split)
        entries.append({"split": split.to_dict(), **calibration.to_dict()})
        print_calibration(split, calibration)
    save_json(out / "sigma_hat.json", entries)


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "compare": cmd_compare,
    "calibrate-sigma": cmd_calibrate_sigma,
}


def run_validation(args: argparse.Namespace, config: RunConfig) -> None:
    result = validate_run_config(config)
    print_validation_result(result, str(config.source) if config.source else None, args.verbose - args.quiet)
    if not result.is_valid:
        sys.exit(1)


def main(argv: Optional[Sequence[str]] = None) -> None:
    try:
        args, config = parse_arguments(argv)
    except RiskTradingError as e:
        handle_error(e)

    if args.validate:
        run_validation(args, config)
        return

    try:
        HANDLERS[args.command](config)
    except RiskTradingError as e:
        handle_error(e)


if __name__ == "__main__":
    main()
