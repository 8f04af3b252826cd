"""
Trading MDP.

State: the last ten encoded business days, each [PCA features, Δ_t, c/10], plus the
current position c_t. Action: buy/sell a ∈ {−3, …, 3} contracts. Position update
c_{t+1} = min(10, max(c_t + a_t, −10)). Reward c_t·Δ_{t+1}/σ_{t+1} where σ_{t+1} is
the population σ of Δ_{t−8}, …, Δ_{t+1}. Episodes last five business days and start
flat.
"""

import logging
from typing import Optional

import numpy as np

from .market_data import PcaModel, pca_transform, rolling_sigmas
from .models import (
    EPISODE_LENGTH,
    GAMMA,
    MAX_POSITION,
    MAX_TRADE,
    WINDOW_LENGTH,
    DayRange,
    EnvState,
    EpisodeError,
    EpisodeSpec,
    InvalidParameterError,
    MarketSeries,
    StepRecord,
)


logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8
POSITION_SCALE = 1.0 / MAX_POSITION


def discount() -> float:
    return GAMMA


def clamp_position(c: int, a: int) -> int:
    if abs(a) > MAX_TRADE:
        raise InvalidParameterError(f"action {a} outside [-{MAX_TRADE}, {MAX_TRADE}]")
    if abs(c) > MAX_POSITION:
        raise InvalidParameterError(f"position {c} outside [-{MAX_POSITION}, {MAX_POSITION}]")
    return int(min(MAX_POSITION, max(c + a, -MAX_POSITION)))


def sharpe_reward(position: int, delta_next: float, sigma_next: float) -> float:
    if sigma_next < SIGMA_FLOOR:
        return 0.0
    return position * delta_next / sigma_next


def first_start_day() -> int:
    return WINDOW_LENGTH - 1


def training_episode(series_length: int, train_range: DayRange, rng: np.random.Generator) -> EpisodeSpec:
    """Uniformly drawn start day whose five decision days and next-day deltas stay in the range."""
    low = max(train_range.start, first_start_day())
    high = min(train_range.stop, series_length) - EPISODE_LENGTH - 1
    if high < low:
        raise EpisodeError(
            f"training range [{train_range.start}, {train_range.stop}) too short for one episode"
        )
    return EpisodeSpec(start_day=int(rng.integers(low, high + 1)))


def test_episodes(series_length: int, test_range: DayRange) -> list[EpisodeSpec]:
    """Contiguous, non-overlapping episodes tiling the test range.

    An episode starting at s is kept only if reset accepts it: s + 5 < series_length,
    since the fifth decision day needs Δ_{s+5}. A window ending at the series end
    therefore loses its final five days.
    """
    start = max(test_range.start, first_start_day())
    specs = []
    while start + EPISODE_LENGTH <= test_range.stop and start + EPISODE_LENGTH < series_length:
        specs.append(EpisodeSpec(start_day=start))
        start += EPISODE_LENGTH
    return specs


class TradingEnv:
    """One environment per rollout; the series and PCA model are shared read-only.

    `trajectory` collects a StepRecord per step since the last reset.
    """

    def __init__(self, series: MarketSeries, pca_model: Optional[PcaModel]):
        self.series = series
        self.pca_model = pca_model
        if pca_model is not None:
            reduced = pca_transform(pca_model, series.features)
        else:
            reduced = np.zeros((len(series), 0))
        self.encoded = np.concatenate([reduced, series.deltas[:, None]], axis=1)
        self.sigmas = rolling_sigmas(series)
        self.trajectory: list[StepRecord] = []

    @property
    def observation_dim(self) -> int:
        """Per-step width of a window row: encoded features plus the position channel."""
        return int(self.encoded.shape[1]) + 1

    def _row(self, day: int, position: int) -> np.ndarray:
        return np.append(self.encoded[day], position * POSITION_SCALE)

    def _check_spec(self, spec: EpisodeSpec) -> None:
        if spec.start_day < first_start_day():
            raise EpisodeError(
                f"start day {spec.start_day} needs {WINDOW_LENGTH} days of history"
            )
        if spec.start_day + spec.length >= len(self.series):
            raise EpisodeError(
                f"start day {spec.start_day} needs {spec.length} days of lookahead "
                f"in a series of length {len(self.series)}"
            )

    def reset(self, spec: EpisodeSpec) -> EnvState:
        self._check_spec(spec)
        self.trajectory = []
        day = spec.start_day
        window = np.stack([
            self._row(d, spec.initial_position) for d in range(day - WINDOW_LENGTH + 1, day + 1)
        ])
        return EnvState(
            window=window,
            position=spec.initial_position,
            day=day,
            steps_taken=0,
            raw_features=self.series.features[day],
        )

    def sigma(self, day: int) -> float:
        return float(self.sigmas[day])

    def step(self, state: EnvState, action: int) -> tuple[EnvState, float, bool]:
        if state.steps_taken >= EPISODE_LENGTH:
            raise EpisodeError("episode already finished")
        day = state.day
        if day + 1 >= len(self.series):
            raise EpisodeError(f"no delta after day {day}")

        next_position = clamp_position(state.position, action)
        delta_next = float(self.series.deltas[day + 1])
        sigma_next = self.sigma(day + 1)
        reward = sharpe_reward(state.position, delta_next, sigma_next)

        self.trajectory.append(StepRecord(
            day=day,
            position_before=state.position,
            action=int(action),
            delta_next=delta_next,
            sigma_next=sigma_next,
            reward=reward,
            sigma=self.sigma(day),
        ))

        window = np.vstack([state.window[1:], self._row(day + 1, next_position)])
        steps = state.steps_taken + 1
        next_state = EnvState(
            window=window,
            position=next_position,
            day=day + 1,
            steps_taken=steps,
            raw_features=self.series.features[day + 1],
        )
        return next_state, reward, steps >= EPISODE_LENGTH
