from typing import Sequence

import numpy as np

from .eval_harness import EvalReport, SigmaCalibration, SweepSummary
from .models import ExperimentSplit, MarketSeries
from .training import TrainResult


def _fmt(value: float, spec: str = ".4f") -> str:
    return "n/a" if value is None or np.isnan(value) else format(value, spec)


def print_series_summary(series: MarketSeries, path: str) -> None:
    deltas = series.deltas
    print(f"Wrote {len(series)} days to {path}")
    print(f"  raw features: {series.feature_dim}")
    print(f"  delta mean {deltas.mean():.4f}, std {deltas.std():.4f}, min {deltas.min():.4f}, max {deltas.max():.4f}")


def print_training_summary(result: TrainResult, split: ExperimentSplit, checkpoint: str) -> None:
    log = result.log
    print(
        f"Trained {result.agent.name} (alpha={result.config.alpha}) on days "
        f"[{split.train_range.start}, {split.train_range.stop})"
    )
    print(f"  environment steps: {log.env_steps}, gradient steps: {log.gradient_steps}")
    if log.losses:
        tail = log.losses[-min(len(log.losses), 100):]
        print(f"  final loss (mean of last {len(tail)}): {np.mean(tail):.6g}")
    if log.episode_returns:
        tail = log.episode_returns[-min(len(log.episode_returns), 20):]
        print(f"  mean return of last {len(tail)} episodes: {np.mean(tail):.4f}")
    print(f"  checkpoint: {checkpoint}")


def print_report_summary(report: EvalReport) -> None:
    test = report.split.test_range
    print(f"{report.agent} on test days [{test.start}, {test.stop}), split {report.split.index}")
    print(f"  P&L: {report.pnl:.4f}")
    print(
        f"  risky states: {report.risky.risky_count}/{report.risky.n_states} "
        f"({_fmt(report.risky_pct, '.2%')}), ratio to riskiest policy {_fmt(report.risky_ratio, '.3f')}"
    )
    print(f"  sigma_hat: {report.sigma_hat:.6g}, hit rate: {_fmt(report.hit_rate, '.3f')}")


def print_calibration(split: ExperimentSplit, calibration: SigmaCalibration) -> None:
    test = split.test_range
    status = "" if calibration.reachable else " (target unreachable)"
    print(
        f"split {split.index} [{test.start}, {test.stop}): sigma_hat {calibration.sigma_hat:.6g}, "
        f"risky fraction {calibration.risky_fraction:.3f}, max {calibration.achievable_max:.3f}{status}"
    )


def print_sweep_summary(summary: Sequence[SweepSummary]) -> None:
    header = f"{'agent':<24} {'alpha':>6} {'runs':>5} {'pnl mean':>12} {'pnl median':>12} {'risky ratio':>12}"
    print(header)
    print("-" * len(header))
    for row in summary:
        print(
            f"{row.agent:<24} {row.alpha:>6.2f} {row.runs:>5} {row.pnl_mean:>12.4f} "
            f"{row.pnl_median:>12.4f} {_fmt(row.risky_ratio_mean, '>12.3f')}"
        )
