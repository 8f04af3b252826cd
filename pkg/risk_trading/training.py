"""
Training loop shared by every neural agent.

One environment step per loop iteration; once the replay buffer holds enough
transitions each step is followed by one gradient step and a soft target update.
All randomness comes from named streams derived from the run seed, so a run is
reproducible bit for bit.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .agents import (
    AgentConfig,
    NeuralAgent,
    build_agent,
    epsilon_greedy,
    make_batch,
)
from .extra_trees import ExtraTreesAgent, train_extra_trees
from .market_data import PcaModel, pca_fit
from .models import AgentKind, DayRange, MarketSeries, Transition
from .replay import PrioritizedReplay, UniformReplay
from .trading_env import TradingEnv, training_episode


logger = logging.getLogger(__name__)

STREAMS = ("init", "exploration", "iqn", "replay", "dropout", "episodes")


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per concern, each seeded from (seed, stream index)."""
    return {name: np.random.default_rng([seed, k]) for k, name in enumerate(STREAMS)}


def epsilon_at(step: int, config: AgentConfig) -> float:
    """Linear decay from epsilon_start to epsilon_end over the first decay fraction of training."""
    decay_steps = config.epsilon_decay_fraction * config.train_steps
    if decay_steps <= 0.0:
        return config.epsilon_end
    progress = min(1.0, step / decay_steps)
    return config.epsilon_start + progress * (config.epsilon_end - config.epsilon_start)


@dataclass
class TrainingLog:
    losses: list[float] = field(default_factory=list)
    episode_returns: list[float] = field(default_factory=list)
    env_steps: int = 0
    gradient_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "env_steps": self.env_steps,
            "gradient_steps": self.gradient_steps,
            "losses": self.losses,
            "episode_returns": self.episode_returns,
        }


@dataclass
class TrainResult:
    agent: Union[NeuralAgent, ExtraTreesAgent]
    log: TrainingLog
    pca_model: Optional[PcaModel]
    config: AgentConfig


def fit_features(config: AgentConfig, series: MarketSeries, train_range: DayRange) -> PcaModel:
    """PCA on the training range; the dimension is capped by the feature count and row count."""
    d = min(config.pca_dim, series.feature_dim, max(1, len(train_range) - 1))
    if d < config.pca_dim:
        logger.info(f"PCA dimension reduced from {config.pca_dim} to {d}")
    return pca_fit(series, train_range, d, solver=config.pca_solver)


def _learn(
    agent: NeuralAgent,
    replay: UniformReplay,
    config: AgentConfig,
    streams: dict[str, np.random.Generator],
) -> float:
    if isinstance(replay, PrioritizedReplay):
        picked = replay.sample_prioritized(config.batch_size, streams["replay"])
        indices = [index for index, _ in picked]
        batch = make_batch([transition for _, transition in picked])
        weights = None
        if config.importance_beta > 0.0:
            weights = replay.importance_weights(indices, config.importance_beta)
        result = agent.learn(batch, streams["dropout"], streams["iqn"], weights)
        replay.update_priorities(indices, result.priorities)
    else:
        batch = make_batch(replay.sample_uniform(config.batch_size, streams["replay"]))
        result = agent.learn(batch, streams["dropout"], streams["iqn"])
    return result.loss


def train(
    config: AgentConfig,
    series: MarketSeries,
    train_range: DayRange,
    seed: int,
    pca_model: Optional[PcaModel] = None,
) -> TrainResult:
    config.validate()
    if config.agent_kind is AgentKind.EXTRA_TREES:
        agent = train_extra_trees(config, series, train_range, seed)
        return TrainResult(agent=agent, log=TrainingLog(), pca_model=None, config=config)

    streams = make_streams(seed)
    if pca_model is None:
        pca_model = fit_features(config, series, train_range)
    env = TradingEnv(series, pca_model)
    agent = build_agent(config, env.observation_dim, streams["init"])
    log = TrainingLog()
    if config.train_steps == 0:
        return TrainResult(agent=agent, log=log, pca_model=pca_model, config=config)

    if config.agent_kind.is_prioritized:
        replay = PrioritizedReplay(config.replay_capacity)
    else:
        replay = UniformReplay(config.replay_capacity)
    start_learning = max(config.min_fill, config.batch_size)

    logger.info(
        f"Training {agent.name} (alpha={config.alpha}) for {config.train_steps} steps "
        f"on days [{train_range.start}, {train_range.stop})"
    )
    agent.train_mode()
    state = env.reset(training_episode(len(series), train_range, streams["episodes"]))
    episode_return = 0.0
    for step in range(config.train_steps):
        base_action = agent.act(state, streams["iqn"])
        action = epsilon_greedy(base_action, epsilon_at(step, config), streams["exploration"])
        next_state, reward, done = env.step(state, action)
        replay.push(Transition(state=state, action=action, reward=reward, next_state=next_state, done=done))
        log.env_steps += 1
        episode_return += reward

        if len(replay) >= start_learning:
            log.losses.append(_learn(agent, replay, config, streams))
            log.gradient_steps += 1

        if done:
            log.episode_returns.append(episode_return)
            episode_return = 0.0
            state = env.reset(training_episode(len(series), train_range, streams["episodes"]))
        else:
            state = next_state

        if (step + 1) % config.log_every == 0:
            recent_loss = float(np.mean(log.losses[-config.log_every:])) if log.losses else float("nan")
            recent_return = float(np.mean(log.episode_returns[-20:])) if log.episode_returns else float("nan")
            logger.info(
                f"step {step + 1}/{config.train_steps}: loss {recent_loss:.4g}, "
                f"mean episode return {recent_return:.4g}"
            )
    agent.eval_mode()
    return TrainResult(agent=agent, log=log, pca_model=pca_model, config=config)
