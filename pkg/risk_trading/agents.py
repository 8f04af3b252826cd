"""
Value-based trading agents.

DQN family: two online critics and two target critics; actions maximize the mean
of the online critics, TD targets use the minimum of the target critics at that
action. Dueling variants split each critic into a shared trunk and value /
advantage heads.

Distributional family: C51 (categorical over a fixed atom grid), QR-DQN (L
quantile values per action) and IQN (quantile function sampled at levels β).
Their risk-sensitive variants score actions by CVaR at a confidence level alpha
instead of the mean; alpha = 1 is the risk-neutral policy.

Every argmax breaks ties towards the lowest action index.
"""

import logging
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterator, Optional

import numpy as np

from .models import (
    ACTIONS,
    GAMMA,
    N_ACTIONS,
    WINDOW_LENGTH,
    AgentKind,
    EnvState,
    InvalidParameterError,
    NumericFaultError,
    ShapeError,
    Transition,
    action_to_index,
    index_to_action,
)
from .nn_core import (
    FinalActivation,
    Network,
    NetworkSpec,
    apply_gradients,
    backward,
    build_network,
    evaluate,
    forward,
    init_optimizer,
    soft_update,
)
from .risk_math import (
    PROB_FLOOR,
    AtomGrid,
    cvar_categorical_batch,
    project_categorical_batch,
    quantile_huber,
    quantile_huber_grad,
    tail_count,
)


logger = logging.getLogger(__name__)

PRESETS = ("full", "desk")
DESK_SHRINK = 4


@dataclass(frozen=True)
class AgentConfig:
    agent_kind: AgentKind = AgentKind.DQN
    alpha: float = 1.0
    preset: str = "desk"

    recurrent_layers: tuple[int, ...] = (32,)
    dense_layers: tuple[int, ...] = (16, 8)
    head_layers: tuple[int, ...] = (16,)
    psi_dim: int = 8
    dropout_rate: float = 0.3
    layer_norm: bool = False

    learning_rate: float = 1e-4
    batch_size: int = 32
    tau: float = 0.995

    n_atoms: int = 51
    v_min: float = -150.0
    v_max: float = 150.0
    n_quantiles: int = 51
    iqn_n: int = 64
    iqn_n_prime: int = 32
    iqn_k: int = 64
    embedding_dim: int = 32
    kappa: float = 1.0

    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.3
    replay_capacity: int = 100_000
    min_fill: int = 1_000
    train_steps: int = 20_000
    importance_beta: float = 0.0
    priority_epsilon: float = 1e-6

    swapped_projection: bool = False
    truncated_cvar: bool = False
    risk_adjusted_targets: bool = True

    n_trees: int = 100
    symmetric_mapping: bool = False
    pca_dim: int = 75
    pca_solver: str = "eigh"
    log_every: int = 1_000

    def validate(self) -> None:
        kind = self.agent_kind
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidParameterError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.kappa <= 0.0:
            raise InvalidParameterError(f"kappa must be positive, got {self.kappa}")
        if self.batch_size < 1:
            raise InvalidParameterError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.preset not in PRESETS:
            raise InvalidParameterError(f"unknown preset: {self.preset} (choose from {', '.join(PRESETS)})")
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidParameterError(f"tau must be in [0, 1], got {self.tau}")
        if self.learning_rate <= 0.0:
            raise InvalidParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise InvalidParameterError(
                f"need 0 <= epsilon_end <= epsilon_start <= 1, got {self.epsilon_end}, {self.epsilon_start}"
            )
        if not 0.0 <= self.epsilon_decay_fraction <= 1.0:
            raise InvalidParameterError(
                f"epsilon_decay_fraction must be in [0, 1], got {self.epsilon_decay_fraction}"
            )
        if self.replay_capacity < 1 or self.min_fill < 0 or self.train_steps < 0:
            raise InvalidParameterError("replay_capacity must be positive; min_fill and train_steps non-negative")
        if self.importance_beta < 0.0 or self.priority_epsilon < 0.0:
            raise InvalidParameterError("importance_beta and priority_epsilon must be non-negative")
        if self.n_atoms < 2 or not self.v_min < self.v_max:
            raise InvalidParameterError(
                f"need n_atoms >= 2 and v_min < v_max, got {self.n_atoms}, [{self.v_min}, {self.v_max}]"
            )
        if min(self.n_quantiles, self.iqn_n, self.iqn_n_prime, self.iqn_k, self.embedding_dim, self.psi_dim) < 1:
            raise InvalidParameterError("quantile counts, sample counts and embedding sizes must be positive")
        if kind is AgentKind.QR_DQN:
            tail_count(self.n_quantiles, self.alpha)
        if kind.is_dueling and not self.dense_layers:
            raise InvalidParameterError("dueling critics need at least one dense layer for the shared trunk")
        if kind is not AgentKind.EXTRA_TREES and not self.recurrent_layers:
            raise InvalidParameterError("sequence networks need at least one recurrent layer")
        if self.n_trees < 1 or self.pca_dim < 1 or self.log_every < 1:
            raise InvalidParameterError("n_trees, pca_dim and log_every must be positive")
        if self.pca_solver not in ("eigh", "power"):
            raise InvalidParameterError(f"pca_solver must be eigh or power, got {self.pca_solver}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["agent_kind"] = self.agent_kind.value
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    @staticmethod
    def from_dict(data: dict) -> "AgentConfig":
        known = {f.name: f for f in fields(AgentConfig)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise InvalidParameterError(f"unknown agent config keys: {', '.join(unknown)}")
        values = {}
        for key, value in data.items():
            if key == "agent_kind":
                value = AgentKind(value)
            elif isinstance(value, list):
                value = tuple(int(u) for u in value)
            values[key] = value
        return AgentConfig(**values)


# Architectures and optimizer settings per (kind, risk-sensitive).
_PAPER_ARCHITECTURES: dict[tuple[AgentKind, bool], dict] = {
    (AgentKind.DQN, False): dict(
        recurrent_layers=(128,), dense_layers=(64, 32), learning_rate=1e-4, batch_size=32,
    ),
    (AgentKind.PRIORITIZED_DQN, False): dict(
        recurrent_layers=(128,), dense_layers=(32, 16), learning_rate=5e-5, batch_size=128,
    ),
    (AgentKind.DUELING_DQN, False): dict(
        recurrent_layers=(128, 64), dense_layers=(64,), head_layers=(64,), learning_rate=5e-5, batch_size=64,
    ),
    (AgentKind.PRIORITIZED_DUELING_DQN, False): dict(
        recurrent_layers=(128, 64), dense_layers=(64,), head_layers=(64,), learning_rate=5e-5, batch_size=16,
    ),
    (AgentKind.C51, False): dict(
        recurrent_layers=(128,), dense_layers=(64, 64), learning_rate=5e-5, batch_size=32,
    ),
    (AgentKind.C51, True): dict(
        recurrent_layers=(128, 128), dense_layers=(128, 64), learning_rate=1e-4, batch_size=8,
    ),
    (AgentKind.QR_DQN, False): dict(
        recurrent_layers=(128, 128), dense_layers=(64, 64), learning_rate=1e-4, batch_size=16,
    ),
    (AgentKind.QR_DQN, True): dict(
        recurrent_layers=(128, 128), dense_layers=(64, 32), learning_rate=1e-4, batch_size=64,
    ),
    (AgentKind.IQN, False): dict(
        recurrent_layers=(128, 64), dense_layers=(), psi_dim=32, head_layers=(32,),
        embedding_dim=32, learning_rate=1e-4, batch_size=16,
    ),
    (AgentKind.IQN, True): dict(
        recurrent_layers=(128, 64), dense_layers=(), psi_dim=32, head_layers=(32,),
        embedding_dim=32, learning_rate=1e-4, batch_size=32,
    ),
}

_UNIT_KEYS = ("recurrent_layers", "dense_layers", "head_layers")


def _shrink(arch: dict) -> dict:
    shrunk = dict(arch)
    for key in _UNIT_KEYS:
        if key in shrunk:
            shrunk[key] = tuple(max(1, units // DESK_SHRINK) for units in shrunk[key])
    if "psi_dim" in shrunk:
        shrunk["psi_dim"] = max(1, shrunk["psi_dim"] // DESK_SHRINK)
    return shrunk


def preset_architecture(kind: AgentKind, alpha: float, preset: str) -> dict:
    """Network and optimizer fields of a preset; empty for Extra-Trees."""
    if preset not in PRESETS:
        raise InvalidParameterError(f"unknown preset: {preset} (choose from {', '.join(PRESETS)})")
    risk_sensitive = kind.is_distributional and alpha < 1.0
    arch = _PAPER_ARCHITECTURES.get((kind, risk_sensitive), {})
    return _shrink(arch) if preset == "desk" else dict(arch)


def default_config(kind, alpha: float = 1.0, preset: str = "desk", **overrides) -> AgentConfig:
    kind = AgentKind(kind)
    values = preset_architecture(kind, alpha, preset)
    values.update({key: value for key, value in overrides.items() if value is not None})
    config = AgentConfig(agent_kind=kind, alpha=alpha, preset=preset, **values)
    config.validate()
    return config


def _seed_stream(rng: np.random.Generator) -> Iterator[int]:
    while True:
        yield int(rng.integers(0, 2**31 - 1))


def _sequence_spec(
    config: AgentConfig,
    input_dim: int,
    recurrent: tuple[int, ...],
    dense: tuple[int, ...],
    output_dim: int,
    final: FinalActivation = FinalActivation.NONE,
    group_size: Optional[int] = None,
) -> NetworkSpec:
    return NetworkSpec(
        input_dim=input_dim,
        recurrent_layers=tuple(recurrent),
        dense_layers=tuple(dense),
        output_dim=output_dim,
        seq_len=WINDOW_LENGTH,
        dropout_rate=config.dropout_rate,
        final_activation=final,
        group_size=group_size,
        layer_norm=config.layer_norm,
    )


def _row_spec(
    config: AgentConfig,
    input_dim: int,
    dense: tuple[int, ...],
    output_dim: int,
    final: FinalActivation = FinalActivation.NONE,
) -> NetworkSpec:
    return NetworkSpec(
        input_dim=input_dim,
        dense_layers=tuple(dense),
        output_dim=output_dim,
        seq_len=0,
        dropout_rate=config.dropout_rate,
        final_activation=final,
        layer_norm=config.layer_norm,
    )


def greedy_index(scores: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; np.argmax already returns the first maximum."""
    return np.argmax(scores, axis=-1)


def dueling_q(value, advantages) -> np.ndarray:
    """Q_a = V + (A_a − mean_a A). Works on one state or a batch ((B, 1), (B, A))."""
    advantages = np.asarray(advantages, dtype=np.float64)
    return np.asarray(value, dtype=np.float64) + (advantages - advantages.mean(axis=-1, keepdims=True))


# Model wrappers. Each keeps its Networks in a name -> Network dict so optimizers,
# soft updates and checkpoints can treat every agent alike.

class QModel:
    """Seven Q-values per state, from one network or from a dueling trunk and heads."""

    def __init__(self, networks: dict[str, Network]):
        self.networks = networks

    @property
    def dueling(self) -> bool:
        return "trunk" in self.networks

    @staticmethod
    def build(config: AgentConfig, input_dim: int, seeds: Iterator[int], dueling: bool = False) -> "QModel":
        if not dueling:
            spec = _sequence_spec(config, input_dim, config.recurrent_layers, config.dense_layers, N_ACTIONS)
            return QModel({"q": build_network(spec, next(seeds))})
        trunk_out = config.dense_layers[-1]
        trunk = _sequence_spec(
            config, input_dim, config.recurrent_layers, config.dense_layers[:-1], trunk_out,
            final=FinalActivation.RELU,
        )
        return QModel({
            "trunk": build_network(trunk, next(seeds)),
            "value": build_network(_row_spec(config, trunk_out, config.head_layers, 1), next(seeds)),
            "advantage": build_network(_row_spec(config, trunk_out, config.head_layers, N_ACTIONS), next(seeds)),
        })

    def predict(self, windows) -> np.ndarray:
        if not self.dueling:
            return evaluate(self.networks["q"], windows)
        features = evaluate(self.networks["trunk"], windows)
        return dueling_q(evaluate(self.networks["value"], features), evaluate(self.networks["advantage"], features))

    def forward_train(self, windows, rng: Optional[np.random.Generator]) -> np.ndarray:
        if not self.dueling:
            return forward(self.networks["q"], windows, rng)
        features = forward(self.networks["trunk"], windows, rng)
        value = forward(self.networks["value"], features, rng)
        advantages = forward(self.networks["advantage"], features, rng)
        return dueling_q(value, advantages)

    def backward(self, d_q: np.ndarray) -> dict[str, np.ndarray]:
        if not self.dueling:
            grad, _ = backward(self.networks["q"], d_q)
            return {"q": grad}
        d_value = d_q.sum(axis=1, keepdims=True)
        d_advantage = d_q - d_q.mean(axis=1, keepdims=True)
        g_value, dv_features = backward(self.networks["value"], d_value)
        g_advantage, da_features = backward(self.networks["advantage"], d_advantage)
        g_trunk, _ = backward(self.networks["trunk"], dv_features + da_features)
        return {"trunk": g_trunk, "value": g_value, "advantage": g_advantage}

    def copy(self) -> "QModel":
        return QModel({name: net.copy() for name, net in self.networks.items()})


class CategoricalModel:
    """Per-action probability vectors over the atom grid: output (B, 7, n_atoms)."""

    def __init__(self, networks: dict[str, Network]):
        self.networks = networks

    @property
    def n_atoms(self) -> int:
        return self.networks["z"].spec.group_size

    @staticmethod
    def build(config: AgentConfig, input_dim: int, seeds: Iterator[int]) -> "CategoricalModel":
        spec = _sequence_spec(
            config, input_dim, config.recurrent_layers, config.dense_layers, N_ACTIONS * config.n_atoms,
            final=FinalActivation.SOFTMAX_PER_GROUP, group_size=config.n_atoms,
        )
        return CategoricalModel({"z": build_network(spec, next(seeds))})

    def predict(self, windows) -> np.ndarray:
        out = evaluate(self.networks["z"], windows)
        return out.reshape(out.shape[0], N_ACTIONS, self.n_atoms)

    def forward_train(self, windows, rng: Optional[np.random.Generator]) -> np.ndarray:
        out = forward(self.networks["z"], windows, rng)
        return out.reshape(out.shape[0], N_ACTIONS, self.n_atoms)

    def backward(self, d_probs: np.ndarray) -> dict[str, np.ndarray]:
        grad, _ = backward(self.networks["z"], d_probs.reshape(d_probs.shape[0], -1))
        return {"z": grad}

    def copy(self) -> "CategoricalModel":
        return CategoricalModel({name: net.copy() for name, net in self.networks.items()})


class QuantileModel:
    """L quantile values per action: output (B, 7, L)."""

    def __init__(self, networks: dict[str, Network]):
        self.networks = networks

    @property
    def n_quantiles(self) -> int:
        return self.networks["quantiles"].spec.output_dim // N_ACTIONS

    @staticmethod
    def build(config: AgentConfig, input_dim: int, seeds: Iterator[int]) -> "QuantileModel":
        spec = _sequence_spec(
            config, input_dim, config.recurrent_layers, config.dense_layers, N_ACTIONS * config.n_quantiles,
        )
        return QuantileModel({"quantiles": build_network(spec, next(seeds))})

    def predict(self, windows) -> np.ndarray:
        out = evaluate(self.networks["quantiles"], windows)
        return out.reshape(out.shape[0], N_ACTIONS, self.n_quantiles)

    def forward_train(self, windows, rng: Optional[np.random.Generator]) -> np.ndarray:
        out = forward(self.networks["quantiles"], windows, rng)
        return out.reshape(out.shape[0], N_ACTIONS, self.n_quantiles)

    def backward(self, d_quantiles: np.ndarray) -> dict[str, np.ndarray]:
        grad, _ = backward(self.networks["quantiles"], d_quantiles.reshape(d_quantiles.shape[0], -1))
        return {"quantiles": grad}

    def copy(self) -> "QuantileModel":
        return QuantileModel({name: net.copy() for name, net in self.networks.items()})


def cosine_embedding(betas, embedding_dim: int) -> np.ndarray:
    """(cos(π·1·β), …, cos(π·n·β)) along a new last axis."""
    i = np.arange(1, embedding_dim + 1, dtype=np.float64)
    return np.cos(np.pi * np.asarray(betas, dtype=np.float64)[..., None] * i)


class ImplicitQuantileModel:
    """T(s, a, β) = f(ψ(s) ⊙ φ(β)).

    ψ is the recurrent state encoder, φ a ReLU dense layer over the cosine
    embedding of β, f the head producing seven values.
    """

    def __init__(self, networks: dict[str, Network]):
        self.networks = networks
        self._psi: Optional[np.ndarray] = None
        self._phi: Optional[np.ndarray] = None

    @property
    def embedding_dim(self) -> int:
        return self.networks["phi"].spec.input_dim

    @staticmethod
    def build(config: AgentConfig, input_dim: int, seeds: Iterator[int]) -> "ImplicitQuantileModel":
        psi = _sequence_spec(
            config, input_dim, config.recurrent_layers, config.dense_layers, config.psi_dim,
            final=FinalActivation.RELU,
        )
        phi = _row_spec(config, config.embedding_dim, (), config.psi_dim, final=FinalActivation.RELU)
        head = _row_spec(config, config.psi_dim, config.head_layers, N_ACTIONS)
        return ImplicitQuantileModel({
            "psi": build_network(psi, next(seeds)),
            "phi": build_network(phi, next(seeds)),
            "head": build_network(head, next(seeds)),
        })

    def quantiles(self, windows, betas) -> np.ndarray:
        """Eval-mode values at levels `betas` (B, K): output (B, K, 7)."""
        betas = np.asarray(betas, dtype=np.float64)
        batch, k = betas.shape
        psi = evaluate(self.networks["psi"], windows)
        phi = evaluate(self.networks["phi"], cosine_embedding(betas, self.embedding_dim).reshape(batch * k, -1))
        out = evaluate(self.networks["head"], np.repeat(psi, k, axis=0) * phi)
        return out.reshape(batch, k, N_ACTIONS)

    def forward_train(self, windows, betas, rng: Optional[np.random.Generator]) -> np.ndarray:
        betas = np.asarray(betas, dtype=np.float64)
        batch, k = betas.shape
        self._psi = forward(self.networks["psi"], windows, rng)
        embedded = cosine_embedding(betas, self.embedding_dim).reshape(batch * k, -1)
        self._phi = forward(self.networks["phi"], embedded, rng)
        out = forward(self.networks["head"], np.repeat(self._psi, k, axis=0) * self._phi, rng)
        return out.reshape(batch, k, N_ACTIONS)

    def backward(self, d_out: np.ndarray) -> dict[str, np.ndarray]:
        if self._psi is None:
            raise ShapeError("backward called without a prior forward_train")
        batch, k, _ = d_out.shape
        g_head, d_hidden = backward(self.networks["head"], d_out.reshape(batch * k, N_ACTIONS))
        g_phi, _ = backward(self.networks["phi"], d_hidden * np.repeat(self._psi, k, axis=0))
        d_psi = (d_hidden * self._phi).reshape(batch, k, -1).sum(axis=1)
        g_psi, _ = backward(self.networks["psi"], d_psi)
        return {"psi": g_psi, "phi": g_phi, "head": g_head}

    def copy(self) -> "ImplicitQuantileModel":
        return ImplicitQuantileModel({name: net.copy() for name, net in self.networks.items()})


@dataclass
class CriticPair:
    online: tuple[QModel, QModel]
    target: tuple[QModel, QModel]

    def __post_init__(self):
        for online, target in zip(self.online, self.target):
            for name, net in online.networks.items():
                if target.networks[name].spec != net.spec:
                    raise ShapeError(f"target network '{name}' does not share its online spec")

    @staticmethod
    def build(config: AgentConfig, input_dim: int, seeds: Iterator[int]) -> "CriticPair":
        dueling = config.agent_kind.is_dueling
        online = (
            QModel.build(config, input_dim, seeds, dueling),
            QModel.build(config, input_dim, seeds, dueling),
        )
        return CriticPair(online=online, target=(online[0].copy(), online[1].copy()))

    def mean_q(self, windows) -> np.ndarray:
        return 0.5 * (self.online[0].predict(windows) + self.online[1].predict(windows))


@dataclass
class Batch:
    windows: np.ndarray
    action_indices: np.ndarray
    rewards: np.ndarray
    next_windows: np.ndarray
    dones: np.ndarray

    @property
    def size(self) -> int:
        return int(self.rewards.shape[0])


def make_batch(transitions: list[Transition]) -> Batch:
    if not transitions:
        raise InvalidParameterError("a batch needs at least one transition")
    return Batch(
        windows=np.stack([t.state.window for t in transitions]),
        action_indices=np.array([action_to_index(t.action) for t in transitions], dtype=np.int64),
        rewards=np.array([t.reward for t in transitions], dtype=np.float64),
        next_windows=np.stack([t.next_state.window for t in transitions]),
        dones=np.array([float(t.done) for t in transitions], dtype=np.float64),
    )


@dataclass
class LossResult:
    """Mean loss, per-network gradients keyed model -> network, per-transition loss terms."""
    loss: float
    grads: dict[str, dict[str, np.ndarray]]
    per_sample: np.ndarray
    targets: np.ndarray


def _weights(batch: Batch, weights) -> np.ndarray:
    if weights is None:
        return np.ones(batch.size)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (batch.size,):
        raise ShapeError(f"expected {batch.size} importance weights, got shape {weights.shape}")
    return weights


def _check_gamma(gamma: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameterError(f"gamma must be in [0, 1], got {gamma}")


# DQN family

def dqn_act(pair: CriticPair, state: EnvState) -> int:
    return index_to_action(greedy_index(pair.mean_q(state.window[None]))[0])


def dqn_td_targets(pair: CriticPair, rewards, next_windows, dones, gamma: float) -> np.ndarray:
    """r + γ·(1 − done)·min_j Q̄_j(s', a*) with a* from the online mean policy."""
    _check_gamma(gamma)
    a_star = greedy_index(pair.mean_q(next_windows))
    rows = np.arange(a_star.shape[0])
    q_min = np.minimum(
        pair.target[0].predict(next_windows)[rows, a_star],
        pair.target[1].predict(next_windows)[rows, a_star],
    )
    dones = np.asarray(dones, dtype=np.float64)
    return np.asarray(rewards, dtype=np.float64) + gamma * (1.0 - dones) * q_min


def dqn_td_target(pair: CriticPair, transition: Transition, gamma: float) -> float:
    if transition.done:
        return float(transition.reward)
    return float(dqn_td_targets(
        pair, [transition.reward], transition.next_state.window[None], [0.0], gamma,
    )[0])


def dqn_loss(
    pair: CriticPair,
    batch: Batch,
    gamma: float,
    rng: Optional[np.random.Generator] = None,
    weights=None,
) -> LossResult:
    """Sum over both critics of the (weighted) mean squared TD error."""
    y = dqn_td_targets(pair, batch.rewards, batch.next_windows, batch.dones, gamma)
    w = _weights(batch, weights)
    rows = np.arange(batch.size)
    total = 0.0
    grads = {}
    abs_td = np.zeros(batch.size)
    for name, model in zip(("q1", "q2"), pair.online):
        q = model.forward_train(batch.windows, rng)
        delta = q[rows, batch.action_indices] - y
        total += float(np.mean(w * delta * delta))
        d_q = np.zeros_like(q)
        d_q[rows, batch.action_indices] = 2.0 * w * delta / batch.size
        grads[name] = model.backward(d_q)
        abs_td += 0.5 * np.abs(delta)
    return LossResult(loss=total, grads=grads, per_sample=abs_td, targets=y)


# C51

def categorical_scores(probs: np.ndarray, grid: AtomGrid, alpha: float = 1.0, truncated: bool = False) -> np.ndarray:
    """CVaR_α (mean at α = 1) of every action's distribution: (…, 7, N) -> (…, 7)."""
    return cvar_categorical_batch(probs, grid.atoms, alpha, truncated)


def c51_act(
    model: CategoricalModel,
    state: EnvState,
    grid: AtomGrid,
    alpha: float = 1.0,
    truncated: bool = False,
) -> int:
    probs = model.predict(state.window[None])[0]
    return index_to_action(greedy_index(categorical_scores(probs, grid, alpha, truncated)))


def c51_loss(
    online: CategoricalModel,
    target: CategoricalModel,
    batch: Batch,
    grid: AtomGrid,
    gamma: float,
    rng: Optional[np.random.Generator] = None,
    alpha: float = 1.0,
    truncated: bool = False,
    swapped_weights: bool = False,
    weights=None,
) -> LossResult:
    """Cross-entropy between the projected target and the online distribution at a_t.

    a* maximizes the online score at s' (mean, or CVaR_α when alpha < 1); the target
    distribution at (s', a*) is shifted by r and γ (γ = 0 on terminal transitions)
    and projected onto the grid.
    """
    _check_gamma(gamma)
    w = _weights(batch, weights)
    rows = np.arange(batch.size)
    a_star = greedy_index(categorical_scores(online.predict(batch.next_windows), grid, alpha, truncated))
    target_probs = target.predict(batch.next_windows)[rows, a_star]
    m = project_categorical_batch(
        batch.rewards, gamma * (1.0 - batch.dones), target_probs, grid, swapped_weights,
    )

    probs = online.forward_train(batch.windows, rng)
    p = probs[rows, batch.action_indices]
    floored = np.maximum(p, PROB_FLOOR)
    per_sample = -(m * np.log(floored)).sum(axis=1)
    d_p = np.where(p > PROB_FLOOR, -m / floored, 0.0) * (w / batch.size)[:, None]
    d_probs = np.zeros_like(probs)
    d_probs[rows, batch.action_indices] = d_p
    return LossResult(
        loss=float(np.mean(w * per_sample)),
        grads={"main": online.backward(d_probs)},
        per_sample=per_sample,
        targets=m,
    )


# QR-DQN

def quantile_scores(quantiles: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    """Mean of the lowest ⌊αL⌋ sorted quantile values per action; the plain mean at α = 1."""
    quantiles = np.asarray(quantiles, dtype=np.float64)
    k = tail_count(quantiles.shape[-1], alpha)
    if alpha == 1.0:
        return quantiles.mean(axis=-1)
    return np.sort(quantiles, axis=-1)[..., :k].mean(axis=-1)


def qrdqn_act(model: QuantileModel, state: EnvState, n_quantiles: int, alpha: float = 1.0) -> int:
    tail_count(n_quantiles, alpha)
    quantiles = model.predict(state.window[None])[0]
    if quantiles.shape[-1] != n_quantiles:
        raise ShapeError(f"model produces {quantiles.shape[-1]} quantiles, expected {n_quantiles}")
    return index_to_action(greedy_index(quantile_scores(quantiles, alpha)))


def quantile_midpoints(n_quantiles: int) -> np.ndarray:
    """τ̂_i = (2i − 1) / 2L."""
    return (2.0 * np.arange(n_quantiles) + 1.0) / (2.0 * n_quantiles)


def qrdqn_loss(
    online: QuantileModel,
    target: QuantileModel,
    batch: Batch,
    n_quantiles: int,
    kappa: float,
    gamma: float,
    rng: Optional[np.random.Generator] = None,
    alpha: float = 1.0,
    weights=None,
) -> LossResult:
    """Σ_i mean_j ρ^κ_{τ̂_i}(r + γ·T̄(s', a*)_j − T(s, a)_i), averaged over the batch."""
    _check_gamma(gamma)
    if online.n_quantiles != n_quantiles:
        raise ShapeError(f"model produces {online.n_quantiles} quantiles, expected {n_quantiles}")
    w = _weights(batch, weights)
    rows = np.arange(batch.size)
    a_star = greedy_index(quantile_scores(online.predict(batch.next_windows), alpha))
    target_q = target.predict(batch.next_windows)[rows, a_star]
    targets = batch.rewards[:, None] + (gamma * (1.0 - batch.dones))[:, None] * target_q

    out = online.forward_train(batch.windows, rng)
    pred = out[rows, batch.action_indices]
    u = targets[:, None, :] - pred[:, :, None]
    tau = quantile_midpoints(n_quantiles)[None, :, None]
    per_sample = quantile_huber(u, tau, kappa).mean(axis=2).sum(axis=1)
    d_pred = -quantile_huber_grad(u, tau, kappa).mean(axis=2) * (w / batch.size)[:, None]
    d_out = np.zeros_like(out)
    d_out[rows, batch.action_indices] = d_pred
    return LossResult(
        loss=float(np.mean(w * per_sample)),
        grads={"main": online.backward(d_out)},
        per_sample=per_sample,
        targets=targets,
    )


# IQN

def iqn_act(
    model: ImplicitQuantileModel,
    state: EnvState,
    k: int,
    alpha: float,
    rng: np.random.Generator,
) -> int:
    """argmax_a of the mean of T(s, a, β_k) over K levels β_k ~ U(0, α)."""
    if k < 1:
        raise InvalidParameterError(f"K must be at least 1, got {k}")
    if not 0.0 < alpha <= 1.0:
        raise InvalidParameterError(f"alpha must be in (0, 1], got {alpha}")
    betas = rng.uniform(0.0, alpha, size=(1, k))
    values = model.quantiles(state.window[None], betas)[0].mean(axis=0)
    return index_to_action(greedy_index(values))


def iqn_loss(
    online: ImplicitQuantileModel,
    target: ImplicitQuantileModel,
    batch: Batch,
    n: int,
    n_prime: int,
    kappa: float,
    gamma: float,
    rng: np.random.Generator,
    k_policy: int = 64,
    alpha: float = 1.0,
    dropout_rng: Optional[np.random.Generator] = None,
    weights=None,
    betas: Optional[np.ndarray] = None,
    target_betas: Optional[np.ndarray] = None,
    policy_betas: Optional[np.ndarray] = None,
) -> LossResult:
    """(1/N′)·Σ_i Σ_j ρ^κ_{β_i}(r + γ·T̄(s', a*, β′_j) − T(s, a, β_i)), batch-averaged.

    β_i, β′_j ~ U(0, 1); a* averages the online values over K levels drawn from
    U(0, alpha). Levels can be fixed by passing the arrays explicitly.
    """
    _check_gamma(gamma)
    if n < 1 or n_prime < 1:
        raise InvalidParameterError(f"N and N' must be at least 1, got {n}, {n_prime}")
    size = batch.size
    if betas is None:
        betas = rng.uniform(0.0, 1.0, size=(size, n))
    if target_betas is None:
        target_betas = rng.uniform(0.0, 1.0, size=(size, n_prime))
    if policy_betas is None:
        policy_betas = rng.uniform(0.0, alpha, size=(size, k_policy))
    betas = np.asarray(betas, dtype=np.float64)

    w = _weights(batch, weights)
    rows = np.arange(size)
    a_star = greedy_index(online.quantiles(batch.next_windows, policy_betas).mean(axis=1))
    target_q = target.quantiles(batch.next_windows, target_betas)[rows, :, a_star]
    targets = batch.rewards[:, None] + (gamma * (1.0 - batch.dones))[:, None] * target_q

    out = online.forward_train(batch.windows, betas, dropout_rng)
    pred = out[rows, :, batch.action_indices]
    u = targets[:, None, :] - pred[:, :, None]
    tau = betas[:, :, None]
    per_sample = quantile_huber(u, tau, kappa).mean(axis=2).sum(axis=1)
    d_pred = -quantile_huber_grad(u, tau, kappa).mean(axis=2) * (w / size)[:, None]
    d_out = np.zeros_like(out)
    d_out[rows, :, batch.action_indices] = d_pred
    return LossResult(
        loss=float(np.mean(w * per_sample)),
        grads={"main": online.backward(d_out)},
        per_sample=per_sample,
        targets=targets,
    )


def epsilon_greedy(base_action: int, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidParameterError(f"epsilon must be in [0, 1], got {epsilon}")
    explore = rng.random() < epsilon
    random_action = ACTIONS[int(rng.integers(N_ACTIONS))]
    return random_action if explore else int(base_action)


# Agents

@dataclass
class LearnResult:
    loss: float
    priorities: np.ndarray


class Agent:
    """A policy over EnvStates. Trainable agents also implement `learn`."""

    name = "agent"

    def act(self, state: EnvState, rng: Optional[np.random.Generator] = None) -> int:
        raise NotImplementedError

    def train_mode(self) -> None:
        pass

    def eval_mode(self) -> None:
        pass


class ConstantAgent(Agent):
    """Always trades the same quantity."""

    def __init__(self, action: int, name: str):
        if action not in ACTIONS:
            raise InvalidParameterError(f"action {action} is not in {ACTIONS}")
        self.action = action
        self.name = name

    def act(self, state: EnvState, rng: Optional[np.random.Generator] = None) -> int:
        return self.action


BUILTIN_AGENTS = {
    "flat": 0,
    "long": ACTIONS[-1],
}


def builtin_agent(name: str) -> ConstantAgent:
    if name not in BUILTIN_AGENTS:
        raise InvalidParameterError(f"unknown built-in agent: {name}")
    return ConstantAgent(BUILTIN_AGENTS[name], name)


class NeuralAgent(Agent):
    """Online/target models with one Adam state per online network.

    `online` and `target` map a model name to a model wrapper; networks are
    addressed as "<model>.<network>".
    """

    def __init__(self, config: AgentConfig, online: dict, target: Optional[dict] = None):
        self.config = config
        self.name = config.agent_kind.value
        self.online = online
        self.target = target if target is not None else {name: model.copy() for name, model in online.items()}
        self.optimizers = {
            key: init_optimizer(net, config.learning_rate) for key, net in self._online_networks()
        }
        self.eval_mode()

    def _online_networks(self):
        for model_name, model in self.online.items():
            for net_name, net in model.networks.items():
                yield f"{model_name}.{net_name}", net

    def networks(self) -> dict[str, Network]:
        """Every network keyed "online.<model>.<net>" / "target.<model>.<net>"."""
        named = {}
        for prefix, models in (("online", self.online), ("target", self.target)):
            for model_name, model in models.items():
                for net_name, net in model.networks.items():
                    named[f"{prefix}.{model_name}.{net_name}"] = net
        return named

    def train_mode(self) -> None:
        for _, net in self._online_networks():
            net.train()
        for model in self.target.values():
            for net in model.networks.values():
                net.eval()

    def eval_mode(self) -> None:
        for net in self.networks().values():
            net.eval()

    def compute_loss(self, batch: Batch, dropout_rng, sample_rng, weights) -> LossResult:
        raise NotImplementedError

    def learn(
        self,
        batch: Batch,
        dropout_rng: Optional[np.random.Generator] = None,
        sample_rng: Optional[np.random.Generator] = None,
        weights=None,
    ) -> LearnResult:
        """One gradient step on every online network followed by a soft target update."""
        result = self.compute_loss(batch, dropout_rng, sample_rng, weights)
        if not np.isfinite(result.loss):
            raise NumericFaultError(f"{self.name}: non-finite loss {result.loss}")
        for model_name, per_net in result.grads.items():
            model = self.online[model_name]
            for net_name, grad in per_net.items():
                key = f"{model_name}.{net_name}"
                self.optimizers[key] = apply_gradients(model.networks[net_name], grad, self.optimizers[key])
        for model_name, model in self.online.items():
            for net_name, net in model.networks.items():
                soft_update(self.target[model_name].networks[net_name], net, self.config.tau)
        priorities = result.per_sample + self.config.priority_epsilon
        return LearnResult(loss=result.loss, priorities=priorities)

    def _risk_alpha(self) -> float:
        return self.config.alpha if self.config.risk_adjusted_targets else 1.0


class DqnAgent(NeuralAgent):
    """Plain, prioritized, dueling and prioritized-dueling DQN."""

    @property
    def pair(self) -> CriticPair:
        return CriticPair(
            online=(self.online["q1"], self.online["q2"]),
            target=(self.target["q1"], self.target["q2"]),
        )

    def act(self, state: EnvState, rng: Optional[np.random.Generator] = None) -> int:
        return dqn_act(self.pair, state)

    def compute_loss(self, batch, dropout_rng, sample_rng, weights) -> LossResult:
        return dqn_loss(self.pair, batch, GAMMA, dropout_rng, weights)


class C51Agent(NeuralAgent):

    @property
    def grid(self) -> AtomGrid:
        return AtomGrid(self.config.v_min, self.config.v_max, self.config.n_atoms)

    def act(self, state: EnvState, rng: Optional[np.random.Generator] = None) -> int:
        return c51_act(self.online["main"], state, self.grid, self.config.alpha, self.config.truncated_cvar)

    def compute_loss(self, batch, dropout_rng, sample_rng, weights) -> LossResult:
        return c51_loss(
            self.online["main"], self.target["main"], batch, self.grid, GAMMA,
            rng=dropout_rng,
            alpha=self._risk_alpha(),
            truncated=self.config.truncated_cvar,
            swapped_weights=self.config.swapped_projection,
            weights=weights,
        )


class QrDqnAgent(NeuralAgent):

    def act(self, state: EnvState, rng: Optional[np.random.Generator] = None) -> int:
        return qrdqn_act(self.online["main"], state, self.config.n_quantiles, self.config.alpha)

    def compute_loss(self, batch, dropout_rng, sample_rng, weights) -> LossResult:
        return qrdqn_loss(
            self.online["main"], self.target["main"], batch,
            self.config.n_quantiles, self.config.kappa, GAMMA,
            rng=dropout_rng,
            alpha=self._risk_alpha(),
            weights=weights,
        )


class IqnAgent(NeuralAgent):
    """IQN; `act` samples levels from `rng`, or from the agent's own stream if none is given."""

    def __init__(self, config: AgentConfig, online: dict, target: Optional[dict] = None, act_seed: int = 0):
        super().__init__(config, online, target)
        self._act_rng = np.random.default_rng(act_seed)

    def act(self, state: EnvState, rng: Optional[np.random.Generator] = None) -> int:
        return iqn_act(self.online["main"], state, self.config.iqn_k, self.config.alpha, rng or self._act_rng)

    def compute_loss(self, batch, dropout_rng, sample_rng, weights) -> LossResult:
        if sample_rng is None:
            sample_rng = self._act_rng
        return iqn_loss(
            self.online["main"], self.target["main"], batch,
            self.config.iqn_n, self.config.iqn_n_prime, self.config.kappa, GAMMA,
            sample_rng,
            k_policy=self.config.iqn_k,
            alpha=self._risk_alpha(),
            dropout_rng=dropout_rng,
            weights=weights,
        )


def build_models(config: AgentConfig, input_dim: int, seeds: Iterator[int]) -> dict:
    kind = config.agent_kind
    if kind.is_dqn_family:
        return {
            "q1": QModel.build(config, input_dim, seeds, kind.is_dueling),
            "q2": QModel.build(config, input_dim, seeds, kind.is_dueling),
        }
    if kind is AgentKind.C51:
        return {"main": CategoricalModel.build(config, input_dim, seeds)}
    if kind is AgentKind.QR_DQN:
        return {"main": QuantileModel.build(config, input_dim, seeds)}
    if kind is AgentKind.IQN:
        return {"main": ImplicitQuantileModel.build(config, input_dim, seeds)}
    raise InvalidParameterError(f"{kind.value} has no neural models")


def agent_class(kind: AgentKind) -> type:
    if kind.is_dqn_family:
        return DqnAgent
    classes = {AgentKind.C51: C51Agent, AgentKind.QR_DQN: QrDqnAgent, AgentKind.IQN: IqnAgent}
    if kind not in classes:
        raise InvalidParameterError(f"{kind.value} is not a neural agent")
    return classes[kind]


def build_agent(config: AgentConfig, input_dim: int, rng: np.random.Generator) -> NeuralAgent:
    """Freshly initialized neural agent; target networks start as copies of the online ones."""
    config.validate()
    cls = agent_class(config.agent_kind)
    online = build_models(config, input_dim, _seed_stream(rng))
    agent = cls(config, online)
    n_params = sum(net.n_params for _, net in agent._online_networks())
    logger.debug(f"Built {agent.name} agent (alpha={config.alpha}) with {n_params} online parameters")
    return agent


def with_networks(config: AgentConfig, named: dict[str, Network]) -> NeuralAgent:
    """Rebuild an agent from networks keyed like `NeuralAgent.networks()`."""
    online: dict[str, dict[str, Network]] = {}
    target: dict[str, dict[str, Network]] = {}
    for key, net in named.items():
        prefix, model_name, net_name = key.split(".")
        side = online if prefix == "online" else target
        side.setdefault(model_name, {})[net_name] = net
    wrapper = {
        AgentKind.C51: CategoricalModel,
        AgentKind.QR_DQN: QuantileModel,
        AgentKind.IQN: ImplicitQuantileModel,
    }.get(config.agent_kind, QModel)
    cls = agent_class(config.agent_kind)
    return cls(
        config,
        {name: wrapper(nets) for name, nets in online.items()},
        {name: wrapper(nets) for name, nets in target.items()},
    )


def config_with(config: AgentConfig, **changes) -> AgentConfig:
    updated = replace(config, **changes)
    updated.validate()
    return updated
