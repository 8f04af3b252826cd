"""
Extremely randomized trees baseline.

A classifier predicts the direction of the next price difference from the raw
features o_t; the prediction ŷ ∈ {0, 1} becomes the trade a_t = 3·ŷ (or
3·(2ŷ − 1) with the symmetric mapping, so a predicted fall sells).
"""

import logging
from typing import Optional

import numpy as np
from sklearn.ensemble import ExtraTreesClassifier

from .agents import Agent, AgentConfig
from .models import (
    MAX_TRADE,
    DataError,
    DayRange,
    EnvState,
    InvalidParameterError,
    MarketSeries,
    ShapeError,
)


logger = logging.getLogger(__name__)


def direction_labels(series: MarketSeries, day_range: DayRange) -> tuple[np.ndarray, np.ndarray]:
    """Rows o_t and labels 1{Δ_{t+1} > 0} for every t in the range with a next day."""
    stop = min(day_range.stop, len(series) - 1)
    if stop <= day_range.start:
        raise DataError(f"day range [{day_range.start}, {day_range.stop}) has no labelled days")
    features = series.features[day_range.start:stop]
    labels = (series.deltas[day_range.start + 1:stop + 1] > 0.0).astype(np.int64)
    return features, labels


def extra_trees_fit(
    features,
    labels,
    n_trees: int = 100,
    random_state: int = 0,
) -> ExtraTreesClassifier:
    """Fit on all rows (no bootstrap), √F candidate features per split, min 2 samples to split."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"features {x.shape} and labels {y.shape} do not line up")
    if x.shape[0] < 2:
        raise InvalidParameterError(f"need at least 2 training rows, got {x.shape[0]}")
    classes = np.unique(y)
    if classes.size < 2:
        raise InvalidParameterError(f"training labels contain a single class: {classes.tolist()}")
    if not set(classes.tolist()) <= {0, 1}:
        raise InvalidParameterError(f"labels must be 0 or 1, got {classes.tolist()}")

    model = ExtraTreesClassifier(
        n_estimators=n_trees,
        criterion="gini",
        max_features="sqrt",
        min_samples_split=2,
        bootstrap=False,
        random_state=random_state,
    )
    model.fit(x, y)
    logger.debug(f"Fitted {n_trees} extra trees on {x.shape[0]} rows, {x.shape[1]} features")
    return model


def extra_trees_predict(model: ExtraTreesClassifier, o_t) -> np.ndarray:
    """Predicted direction ŷ ∈ {0, 1} for one row or a matrix of rows."""
    x = np.asarray(o_t, dtype=np.float64)
    single = x.ndim == 1
    predictions = model.predict(np.atleast_2d(x)).astype(np.int64)
    return predictions[0] if single else predictions


def direction_to_action(y_hat: int, symmetric: bool = False) -> int:
    y_hat = int(y_hat)
    if symmetric:
        return MAX_TRADE * (2 * y_hat - 1)
    return MAX_TRADE * y_hat


class ExtraTreesAgent(Agent):
    """Acts on the raw features carried by the state; ignores the position."""

    def __init__(self, config: AgentConfig, model: ExtraTreesClassifier):
        self.config = config
        self.model = model
        self.name = config.agent_kind.value

    def act(self, state: EnvState, rng: Optional[np.random.Generator] = None) -> int:
        if state.raw_features is None:
            raise InvalidParameterError("extra-trees agent needs the raw features of the state")
        y_hat = extra_trees_predict(self.model, state.raw_features)
        return direction_to_action(y_hat, self.config.symmetric_mapping)


def train_extra_trees(
    config: AgentConfig,
    series: MarketSeries,
    train_range: DayRange,
    seed: int,
) -> ExtraTreesAgent:
    features, labels = direction_labels(series, train_range)
    model = extra_trees_fit(features, labels, n_trees=config.n_trees, random_state=seed % 2**32)
    accuracy = float(np.mean(extra_trees_predict(model, features) == labels))
    logger.info(f"Extra trees training accuracy {accuracy:.3f} on {labels.size} days")
    return ExtraTreesAgent(config, model)
