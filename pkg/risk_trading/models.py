from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Optional

import numpy as np


ACTIONS: tuple[int, ...] = (-3, -2, -1, 0, 1, 2, 3)
N_ACTIONS = len(ACTIONS)
MAX_TRADE = 3
MAX_POSITION = 10
WINDOW_LENGTH = 10
EPISODE_LENGTH = 5
GAMMA = 0.9


class AgentKind(Enum):
    DQN = "dqn"
    PRIORITIZED_DQN = "prioritized_dqn"
    DUELING_DQN = "dueling_dqn"
    PRIORITIZED_DUELING_DQN = "prioritized_dueling_dqn"
    C51 = "c51"
    QR_DQN = "qr_dqn"
    IQN = "iqn"
    EXTRA_TREES = "extra_trees"

    @property
    def is_dqn_family(self) -> bool:
        return self in (
            AgentKind.DQN,
            AgentKind.PRIORITIZED_DQN,
            AgentKind.DUELING_DQN,
            AgentKind.PRIORITIZED_DUELING_DQN,
        )

    @property
    def is_prioritized(self) -> bool:
        return self in (AgentKind.PRIORITIZED_DQN, AgentKind.PRIORITIZED_DUELING_DQN)

    @property
    def is_dueling(self) -> bool:
        return self in (AgentKind.DUELING_DQN, AgentKind.PRIORITIZED_DUELING_DQN)

    @property
    def is_distributional(self) -> bool:
        return self in (AgentKind.C51, AgentKind.QR_DQN, AgentKind.IQN)


def action_to_index(action: int) -> int:
    return int(action) + MAX_TRADE


def index_to_action(index: int) -> int:
    return ACTIONS[int(index)]


@dataclass(frozen=True)
class DayRange:
    """Half-open interval of day indices [start, stop)."""
    start: int
    stop: int

    def __len__(self) -> int:
        return max(0, self.stop - self.start)

    def __contains__(self, day: int) -> bool:
        return self.start <= day < self.stop

    def overlaps(self, other: "DayRange") -> bool:
        return self.start < other.stop and other.start < self.stop

    def to_dict(self) -> dict:
        return {"start": self.start, "stop": self.stop}


@dataclass(frozen=True)
class MarketSeries:
    """Business-day records: raw features o_t and price differences Δ_t (EUR/MWh)."""
    days: np.ndarray
    deltas: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return int(self.deltas.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def record(self, i: int) -> tuple[int, float, np.ndarray]:
        return int(self.days[i]), float(self.deltas[i]), self.features[i]


@dataclass(frozen=True)
class EnvState:
    window: np.ndarray
    position: int
    day: int
    steps_taken: int = 0
    raw_features: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class EpisodeSpec:
    start_day: int
    length: int = EPISODE_LENGTH
    initial_position: int = 0


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action: int
    reward: float
    next_state: EnvState
    done: bool


@dataclass(frozen=True)
class ExperimentSplit:
    index: int
    train_range: DayRange
    test_range: DayRange

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "train_range": self.train_range.to_dict(),
            "test_range": self.test_range.to_dict(),
        }


@dataclass
class StepRecord:
    day: int
    position_before: int
    action: int
    delta_next: float
    sigma_next: float
    reward: float
    sigma: float

    def to_dict(self) -> dict:
        return asdict(self)


class RiskTradingError(Exception):
    """Base exception for the risk trading toolkit."""
    pass


class ConfigError(RiskTradingError):
    """Configuration is invalid."""
    pass


class InvalidParameterError(RiskTradingError, ValueError):
    """An argument is outside its valid range."""
    pass


class ShapeError(RiskTradingError, ValueError):
    """Array dimensions do not match."""
    pass


class DataError(RiskTradingError):
    """Market data or day ranges are unusable."""
    pass


class FileError(DataError):
    """File operation failed."""
    pass


class EpisodeError(RiskTradingError):
    """Episode cannot be started or continued."""
    pass


class NumericFaultError(RiskTradingError):
    """A non-finite value reached the optimizer or a loss."""
    pass
