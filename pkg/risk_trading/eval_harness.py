"""
Walk-forward evaluation.

Each experiment trains on every day before its test window and is scored on that
window with greedy actions: cumulative P&L Σ c_t·Δ_{t+1} and the share of risky
states (|c_t| ≥ 7 while σ_t exceeds a threshold σ̂). σ̂ is calibrated per test
window so that about 40% of the states visited by the riskiest policy (always buy
three contracts) count as risky.
"""

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .agents import Agent, AgentConfig, builtin_agent, config_with
from .market_data import PcaModel
from .models import (
    EPISODE_LENGTH,
    WINDOW_LENGTH,
    DataError,
    EpisodeError,
    EpisodeSpec,
    ExperimentSplit,
    DayRange,
    InvalidParameterError,
    MarketSeries,
    StepRecord,
)
from .trading_env import TradingEnv, test_episodes


logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.1, 0.3, 0.5, 0.7, 0.9, 1.0)
DEFAULT_EXPERIMENTS = 4
DEFAULT_TEST_DAYS = 90
MIN_TRAIN_DAYS = WINDOW_LENGTH + EPISODE_LENGTH + 1
RISKY_POSITION = 7
RISKY_TARGET = 0.40
RISKY_TOLERANCE = 0.02
ACTING_STREAM = 101


def make_splits(
    series: MarketSeries,
    n_experiments: int = DEFAULT_EXPERIMENTS,
    test_days: int = DEFAULT_TEST_DAYS,
) -> list[ExperimentSplit]:
    """The last n non-overlapping test windows; each split trains on all earlier days."""
    if n_experiments < 1 or test_days < EPISODE_LENGTH:
        raise InvalidParameterError(
            f"need n_experiments >= 1 and test_days >= {EPISODE_LENGTH}, got {n_experiments}, {test_days}"
        )
    first_test = len(series) - n_experiments * test_days
    if first_test < MIN_TRAIN_DAYS:
        raise DataError(
            f"series of {len(series)} days too short for {n_experiments} test windows of "
            f"{test_days} days after {MIN_TRAIN_DAYS} training days"
        )
    splits = []
    for i in range(n_experiments):
        start = first_test + i * test_days
        splits.append(ExperimentSplit(
            index=i,
            train_range=DayRange(0, start),
            test_range=DayRange(start, start + test_days),
        ))
    return splits


def rollout(
    agent: Agent,
    env: TradingEnv,
    specs: Sequence[EpisodeSpec],
    rng: Optional[np.random.Generator] = None,
) -> list[StepRecord]:
    """Greedy episodes back to back; returns every step's record."""
    records: list[StepRecord] = []
    for spec in specs:
        state = env.reset(spec)
        done = False
        while not done:
            state, _, done = env.step(state, agent.act(state, rng))
        records.extend(env.trajectory)
    return records


def trajectory_pnl(trajectory: Sequence[StepRecord]) -> float:
    return float(sum(r.position_before * r.delta_next for r in trajectory))


def hit_rate(trajectory: Sequence[StepRecord]) -> float:
    """Share of states with an open position whose sign matches the next price move."""
    held = [r for r in trajectory if r.position_before != 0]
    if not held:
        return float("nan")
    hits = sum(1 for r in held if r.position_before * r.delta_next > 0.0)
    return hits / len(held)


def _risky_mask(trajectory: Sequence[StepRecord], sigma_hat: float) -> np.ndarray:
    positions = np.array([abs(r.position_before) for r in trajectory])
    sigmas = np.array([r.sigma for r in trajectory])
    return (positions >= RISKY_POSITION) & (sigmas > sigma_hat)


@dataclass
class RiskyStats:
    risky_count: int
    n_states: int
    riskiest_count: int
    fraction: float
    ratio: float

    def to_dict(self) -> dict:
        return {
            "risky_count": self.risky_count,
            "n_states": self.n_states,
            "riskiest_count": self.riskiest_count,
            "fraction": self.fraction,
            "ratio": None if np.isnan(self.ratio) else self.ratio,
        }


def risky_state_pct(
    trajectory: Sequence[StepRecord],
    sigma_hat: float,
    riskiest: Optional[Sequence[StepRecord]] = None,
) -> RiskyStats:
    """Raw risky fraction and the count ratio against the riskiest policy's trajectory.

    Without a riskiest trajectory the ratio is NaN.
    """
    if not trajectory:
        raise InvalidParameterError("risky-state share of an empty trajectory")
    risky_count = int(_risky_mask(trajectory, sigma_hat).sum())
    riskiest_count = int(_risky_mask(riskiest, sigma_hat).sum()) if riskiest else 0
    if riskiest_count:
        ratio = risky_count / riskiest_count
    else:
        ratio = float("nan")
        if riskiest:
            logger.warning(f"Riskiest policy has no risky states at sigma_hat={sigma_hat:.4g}; ratio undefined")
    return RiskyStats(
        risky_count=risky_count,
        n_states=len(trajectory),
        riskiest_count=riskiest_count,
        fraction=risky_count / len(trajectory),
        ratio=ratio,
    )


@dataclass
class SigmaCalibration:
    sigma_hat: float
    risky_fraction: float
    achievable_max: float
    reachable: bool

    def to_dict(self) -> dict:
        return {
            "sigma_hat": self.sigma_hat,
            "risky_fraction": self.risky_fraction,
            "achievable_max": self.achievable_max,
            "reachable": self.reachable,
        }


def calibrate_from_trajectory(trajectory: Sequence[StepRecord]) -> SigmaCalibration:
    """Largest σ̂ among the observed σ values (and one just below the smallest)
    at which the risky fraction still reaches 0.40 − 0.02."""
    if not trajectory:
        raise InvalidParameterError("cannot calibrate on an empty trajectory")
    n = len(trajectory)
    sigmas = np.array([r.sigma for r in trajectory])
    ladder = np.array([abs(r.position_before) >= RISKY_POSITION for r in trajectory])
    achievable = float(ladder.sum()) / n
    target = RISKY_TARGET - RISKY_TOLERANCE
    lowest = float(sigmas.min())

    if achievable < target:
        logger.warning(
            f"Risky fraction target {target:.2f} unreachable (at most {achievable:.3f}); "
            f"using sigma_hat = {lowest:.4g}"
        )
        fraction = float((ladder & (sigmas > lowest)).sum()) / n
        return SigmaCalibration(lowest, fraction, achievable, reachable=False)

    for candidate in np.unique(sigmas)[::-1]:
        fraction = float((ladder & (sigmas > candidate)).sum()) / n
        if fraction >= target:
            logger.debug(f"Calibrated sigma_hat = {candidate:.6g} (risky fraction {fraction:.3f})")
            return SigmaCalibration(float(candidate), fraction, achievable, reachable=True)
    below = float(np.nextafter(lowest, -np.inf))
    logger.debug(f"Calibrated sigma_hat just below the smallest sigma ({lowest:.6g})")
    return SigmaCalibration(below, achievable, achievable, reachable=True)


def riskiest_trajectory(series: MarketSeries, split: ExperimentSplit) -> list[StepRecord]:
    specs = _test_specs(series, split)
    return rollout(builtin_agent("long"), TradingEnv(series, None), specs)


def calibrate_sigma_hat(series: MarketSeries, split: ExperimentSplit) -> SigmaCalibration:
    return calibrate_from_trajectory(riskiest_trajectory(series, split))


def _test_specs(series: MarketSeries, split: ExperimentSplit) -> list[EpisodeSpec]:
    specs = test_episodes(len(series), split.test_range)
    if not specs:
        raise EpisodeError(
            f"test range [{split.test_range.start}, {split.test_range.stop}) shorter than one episode"
        )
    return specs


@dataclass
class EvalReport:
    agent: str
    pnl: float
    risky: RiskyStats
    sigma_hat: float
    hit_rate: float
    action_counts: dict[int, int]
    trajectory: list[StepRecord]
    split: ExperimentSplit
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def risky_pct(self) -> float:
        return self.risky.fraction

    @property
    def risky_ratio(self) -> float:
        return self.risky.ratio

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "seed": self.seed,
            "split": self.split.to_dict(),
            "pnl": self.pnl,
            "risky_pct": self.risky.fraction,
            "risky_ratio": None if np.isnan(self.risky.ratio) else self.risky.ratio,
            "risky": self.risky.to_dict(),
            "sigma_hat": self.sigma_hat,
            "hit_rate": None if np.isnan(self.hit_rate) else self.hit_rate,
            "n_states": len(self.trajectory),
            "action_counts": {str(a): n for a, n in sorted(self.action_counts.items())},
            "config": self.config,
        }


def run_test(
    agent: Agent,
    series: MarketSeries,
    pca_model: Optional[PcaModel],
    split: ExperimentSplit,
    seed: int = 0,
    sigma_hat: Optional[float] = None,
    config: Optional[dict] = None,
) -> EvalReport:
    """Greedy rollout over the tiled test window."""
    specs = _test_specs(series, split)
    agent.eval_mode()
    env = TradingEnv(series, pca_model)
    trajectory = rollout(agent, env, specs, np.random.default_rng([seed, ACTING_STREAM]))
    riskiest = riskiest_trajectory(series, split)
    if sigma_hat is None:
        sigma_hat = calibrate_from_trajectory(riskiest).sigma_hat

    counts: dict[int, int] = {}
    for record in trajectory:
        counts[record.action] = counts.get(record.action, 0) + 1
    report = EvalReport(
        agent=agent.name,
        pnl=trajectory_pnl(trajectory),
        risky=risky_state_pct(trajectory, sigma_hat, riskiest),
        sigma_hat=sigma_hat,
        hit_rate=hit_rate(trajectory),
        action_counts=counts,
        trajectory=trajectory,
        split=split,
        seed=seed,
        config=config or {},
    )
    logger.info(
        f"{report.agent} on test days [{split.test_range.start}, {split.test_range.stop}): "
        f"P&L {report.pnl:.4g}, risky {report.risky_pct:.3f}"
    )
    return report


@dataclass(frozen=True)
class SweepRow:
    agent: str
    alpha: float
    split: int
    seed: int
    pnl: float
    risky_pct: float
    risky_ratio: float
    sigma_hat: float

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "alpha": self.alpha,
            "split": self.split,
            "seed": self.seed,
            "pnl": self.pnl,
            "risky_pct": self.risky_pct,
            "risky_ratio": self.risky_ratio,
            "sigma_hat": self.sigma_hat,
        }


@dataclass(frozen=True)
class SweepSummary:
    agent: str
    alpha: float
    runs: int
    pnl_mean: float
    pnl_median: float
    risky_pct_mean: float
    risky_pct_median: float
    risky_ratio_mean: float
    risky_ratio_median: float

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "alpha": self.alpha,
            "runs": self.runs,
            "pnl_mean": self.pnl_mean,
            "pnl_median": self.pnl_median,
            "risky_pct_mean": self.risky_pct_mean,
            "risky_pct_median": self.risky_pct_median,
            "risky_ratio_mean": self.risky_ratio_mean,
            "risky_ratio_median": self.risky_ratio_median,
        }


@dataclass
class SweepResult:
    rows: list[SweepRow]
    summary: list[SweepSummary]


def _nan_stat(values: np.ndarray, stat) -> float:
    finite = values[~np.isnan(values)]
    return float(stat(finite)) if finite.size else float("nan")


def summarize(rows: Sequence[SweepRow]) -> list[SweepSummary]:
    """Mean and median per (agent, alpha), in order of first appearance."""
    groups: dict[tuple[str, float], list[SweepRow]] = {}
    for row in rows:
        groups.setdefault((row.agent, row.alpha), []).append(row)
    summary = []
    for (agent, alpha), members in groups.items():
        pnl = np.array([r.pnl for r in members])
        risky = np.array([r.risky_pct for r in members])
        ratio = np.array([r.risky_ratio for r in members])
        summary.append(SweepSummary(
            agent=agent,
            alpha=alpha,
            runs=len(members),
            pnl_mean=float(np.mean(pnl)),
            pnl_median=float(np.median(pnl)),
            risky_pct_mean=float(np.mean(risky)),
            risky_pct_median=float(np.median(risky)),
            risky_ratio_mean=_nan_stat(ratio, np.mean),
            risky_ratio_median=_nan_stat(ratio, np.median),
        ))
    return summary


def _run_one(task: tuple[dict, MarketSeries, ExperimentSplit, int]) -> SweepRow:
    """Train and test one (config, split, seed); top-level so worker processes can run it."""
    from .training import train

    config_data, series, split, seed = task
    config = AgentConfig.from_dict(config_data)
    result = train(config, series, split.train_range, seed)
    report = run_test(result.agent, series, result.pca_model, split, seed=seed)
    return SweepRow(
        agent=config.agent_kind.value,
        alpha=config.alpha,
        split=split.index,
        seed=seed,
        pnl=report.pnl,
        risky_pct=report.risky_pct,
        risky_ratio=report.risky_ratio,
        sigma_hat=report.sigma_hat,
    )


def _sweep(
    configs: Sequence[AgentConfig],
    series: MarketSeries,
    splits: Sequence[ExperimentSplit],
    seeds: Sequence[int],
    jobs: int = 1,
) -> SweepResult:
    if not configs or not splits or not seeds:
        raise InvalidParameterError("a sweep needs at least one configuration, split and seed")
    tasks = [
        (config.to_dict(), series, split, int(seed))
        for config in configs for split in splits for seed in seeds
    ]
    logger.info(f"Running {len(tasks)} train/test runs with {jobs} job(s)")
    if jobs <= 1:
        rows = [_run_one(task) for task in tasks]
    else:
        rows: list[Optional[SweepRow]] = [None] * len(tasks)
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(_run_one, task): i for i, task in enumerate(tasks)}
            for future in as_completed(futures):
                rows[futures[future]] = future.result()
    return SweepResult(rows=rows, summary=summarize(rows))


def run_ablation(
    config: AgentConfig,
    series: MarketSeries,
    splits: Sequence[ExperimentSplit],
    seeds: Sequence[int],
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    jobs: int = 1,
) -> SweepResult:
    """One run per (α, split, seed) with every other hyperparameter shared."""
    configs = [config_with(config, alpha=float(alpha)) for alpha in alphas]
    return _sweep(configs, series, splits, seeds, jobs)


def run_comparison(
    configs: Sequence[AgentConfig],
    series: MarketSeries,
    splits: Sequence[ExperimentSplit],
    seeds: Sequence[int],
    jobs: int = 1,
) -> SweepResult:
    """Same sweep across agent kinds at their configured α."""
    return _sweep(configs, series, splits, seeds, jobs)
