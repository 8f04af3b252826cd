from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from .agents import AgentConfig, default_config
from .eval_harness import DEFAULT_ALPHAS, DEFAULT_EXPERIMENTS, DEFAULT_TEST_DAYS
from .market_data import GeneratorConfig
from .models import AgentKind, ConfigError, InvalidParameterError


CONFIG_SEARCH_PATHS = [
    "risk_trading.yaml",
    ".risktradingrc",
]


@dataclass(frozen=True)
class Setting:
    kind: str
    default: Any
    help: str


# Agent settings default to None: the preset (or AgentConfig) value applies.
CONFIG_SCHEMA: dict[str, Setting] = {
    # run
    "seed": Setting("int", 0, "Master seed for data generation, training and evaluation"),
    "out": Setting("str", "out", "Output directory"),
    "jobs": Setting("int", 1, "Concurrent runs in ablate/compare"),
    "data": Setting("str", "market.csv", "Market CSV written by gen-data and read by every other command"),
    "checkpoint": Setting("optional_str", None, "Agent checkpoint directory, or the built-in agents flat / long"),
    # synthetic market
    "n_days": Setting("int", 1000, "Business days to generate"),
    "raw_dim": Setting("int", 256, "Raw feature dimension F"),
    "n_informative": Setting("int", 8, "Feature coordinates carrying the next day's regime"),
    "drifts": Setting("float_list", [0.5, 0.0, -0.5], "Drift level per drift regime"),
    "sigmas": Setting("float_list", [1.0, 3.0], "Volatility per volatility regime"),
    "persistence": Setting("float", 0.95, "Probability a regime chain keeps its state"),
    "noise_scale": Setting("float", 0.5, "Noise on the informative coordinates"),
    # experiments
    "n_experiments": Setting("int", DEFAULT_EXPERIMENTS, "Walk-forward experiments"),
    "test_days": Setting("int", DEFAULT_TEST_DAYS, "Days per test window"),
    "split": Setting("int", 0, "Experiment index used by train and eval"),
    "all_splits": Setting("bool", False, "eval: report on every walk-forward split instead of split"),
    "seeds": Setting("int_list", None, "Seeds for ablate/compare (default: [seed])"),
    "alphas": Setting("float_list", list(DEFAULT_ALPHAS), "Confidence levels for ablate"),
    "agents": Setting("str_list", ["dqn", "c51", "qr_dqn", "iqn", "extra_trees"], "Agent kinds for compare"),
    # agent
    "agent_kind": Setting("str", "dqn", "One of: " + ", ".join(k.value for k in AgentKind)),
    "alpha": Setting("float", 1.0, "CVaR confidence level in (0, 1]; 1 is risk-neutral"),
    "preset": Setting("str", "desk", "Architecture preset: full or desk (units / 4)"),
    "recurrent_layers": Setting("int_list", None, "LSTM units per layer"),
    "dense_layers": Setting("int_list", None, "Dense units per layer"),
    "head_layers": Setting("int_list", None, "Dense units of dueling heads and the IQN head"),
    "psi_dim": Setting("optional_int", None, "IQN state embedding width"),
    "dropout_rate": Setting("optional_float", None, "Dropout after dense layers"),
    "layer_norm": Setting("optional_bool", None, "Layer normalization on dense layers"),
    "learning_rate": Setting("optional_float", None, "Adam learning rate"),
    "batch_size": Setting("optional_int", None, "Replay batch size"),
    "tau": Setting("optional_float", None, "Soft update coefficient"),
    "n_atoms": Setting("optional_int", None, "C51 atoms"),
    "v_min": Setting("optional_float", None, "C51 lowest atom"),
    "v_max": Setting("optional_float", None, "C51 highest atom"),
    "n_quantiles": Setting("optional_int", None, "QR-DQN quantiles L"),
    "iqn_n": Setting("optional_int", None, "IQN online samples N"),
    "iqn_n_prime": Setting("optional_int", None, "IQN target samples N'"),
    "iqn_k": Setting("optional_int", None, "IQN policy samples K"),
    "embedding_dim": Setting("optional_int", None, "IQN cosine embedding size n"),
    "kappa": Setting("optional_float", None, "Quantile Huber threshold"),
    "epsilon_start": Setting("optional_float", None, "Initial exploration rate"),
    "epsilon_end": Setting("optional_float", None, "Final exploration rate"),
    "epsilon_decay_fraction": Setting("optional_float", None, "Share of training spent decaying epsilon"),
    "replay_capacity": Setting("optional_int", None, "Replay buffer capacity"),
    "min_fill": Setting("optional_int", None, "Transitions stored before learning starts"),
    "train_steps": Setting("optional_int", None, "Environment steps"),
    "importance_beta": Setting("optional_float", None, "Prioritized replay importance exponent (0 = off)"),
    "priority_epsilon": Setting("optional_float", None, "Added to refreshed priorities"),
    "swapped_projection": Setting("optional_bool", None, "Use the swapped C51 projection weights"),
    "truncated_cvar": Setting("optional_bool", None, "Score C51 actions with the truncated CVaR estimator"),
    "risk_adjusted_targets": Setting("optional_bool", None, "Pick training target actions by CVaR"),
    "n_trees": Setting("optional_int", None, "Extra-Trees ensemble size"),
    "symmetric_mapping": Setting("optional_bool", None, "Extra-Trees: predicted fall sells 3"),
    "pca_dim": Setting("optional_int", None, "PCA dimension d"),
    "pca_solver": Setting("optional_str", None, "PCA solver: eigh or power"),
    "log_every": Setting("optional_int", None, "Training progress log interval"),
}

AGENT_KEYS = [
    "recurrent_layers", "dense_layers", "head_layers", "psi_dim", "dropout_rate", "layer_norm",
    "learning_rate", "batch_size", "tau", "n_atoms", "v_min", "v_max", "n_quantiles", "iqn_n",
    "iqn_n_prime", "iqn_k", "embedding_dim", "kappa", "epsilon_start", "epsilon_end",
    "epsilon_decay_fraction", "replay_capacity", "min_fill", "train_steps", "importance_beta",
    "priority_epsilon", "swapped_projection", "truncated_cvar", "risk_adjusted_targets",
    "n_trees", "symmetric_mapping", "pca_dim", "pca_solver", "log_every",
]


def normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


def normalize_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("true", "1", "yes", "y", "on"):
        return True
    if text in ("false", "0", "no", "n", "off"):
        return False
    raise ValueError(f"not a boolean: {value}")


def _as_list(value: Any) -> list:
    if isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(value, str):
        return [part.strip() for part in value.strip("[]").split(",") if part.strip()]
    return [value]


def coerce(key: str, value: Any) -> Any:
    """Convert a file or command-line value to the type the schema declares."""
    if key not in CONFIG_SCHEMA:
        raise ConfigError(f"Unknown config key: {key}")
    kind = CONFIG_SCHEMA[key].kind
    try:
        if kind.startswith("optional_"):
            if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
                return None
            kind = kind[len("optional_"):]
        if value is None and kind.endswith("_list"):
            return None
        if kind == "int":
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError(f"not an integer: {value}")
            return int(float(value))
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError(f"not a number: {value}")
            return float(value)
        if kind == "bool":
            return normalize_bool(value)
        if kind == "str":
            return str(value)
        if kind == "int_list":
            return [int(v) for v in _as_list(value)]
        if kind == "float_list":
            return [float(v) for v in _as_list(value)]
        if kind == "str_list":
            return [str(v) for v in _as_list(value)]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {key}: {e}")
    raise ConfigError(f"Unsupported setting type {kind} for {key}")


def find_config_file(config_path: Optional[str]) -> Optional[Path]:
    """Explicit path first, then ./risk_trading.yaml, then ./.risktradingrc."""
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {config_path}")
        return path
    for rel_path in CONFIG_SEARCH_PATHS:
        path = Path(rel_path)
        if path.exists():
            return path
    return None


def load_config(config_path: Path) -> dict:
    """Load a flat YAML mapping; keys are normalized and checked against the schema."""
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Error parsing config file {config_path}: {e}")
    except OSError as e:
        raise ConfigError(f"Error reading config file: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {config_path} must be a flat key: value mapping")
    values = {}
    for raw_key, value in data.items():
        key = normalize_key(str(raw_key))
        if isinstance(value, dict):
            raise ConfigError(f"Config key {key} must not be nested")
        values[key] = coerce(key, value)
    return values


def parse_overrides(tokens: Sequence[str]) -> dict:
    """`--key value` / `--key=value` pairs from the command line."""
    overrides = {}
    tokens = list(tokens)
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--"):
            raise ConfigError(f"Unexpected argument: {token}")
        if "=" in token:
            key, raw = token[2:].split("=", 1)
            i += 1
        else:
            key = token[2:]
            if i + 1 >= len(tokens):
                raise ConfigError(f"Missing value for --{key}")
            raw = tokens[i + 1]
            i += 2
        key = normalize_key(key)
        try:
            value = yaml.safe_load(raw) if raw.strip() else raw
        except yaml.YAMLError:
            value = raw
        overrides[key] = coerce(key, value)
    return overrides


@dataclass
class RunConfig:
    """Every setting, resolved as: command line > config file > schema default."""
    values: dict[str, Any]
    source: Optional[Path] = None
    overridden: set[str] = field(default_factory=set)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def __getattr__(self, key: str) -> Any:
        values = self.__dict__.get("values")
        if values is not None and key in values:
            return values[key]
        raise AttributeError(key)

    def to_dict(self) -> dict:
        return dict(self.values)

    def run_seeds(self) -> list[int]:
        return list(self.values["seeds"]) if self.values["seeds"] else [self.values["seed"]]

    def generator_config(self) -> GeneratorConfig:
        try:
            cfg = GeneratorConfig(
                n_days=self["n_days"],
                raw_dim=self["raw_dim"],
                n_informative=self["n_informative"],
                drifts=tuple(self["drifts"]),
                sigmas=tuple(self["sigmas"]),
                persistence=self["persistence"],
                noise_scale=self["noise_scale"],
                seed=self["seed"],
            )
            cfg.validate()
        except InvalidParameterError as e:
            raise ConfigError(str(e))
        return cfg

    def agent_config(self, kind: Optional[str] = None, alpha: Optional[float] = None) -> AgentConfig:
        overrides = {}
        for key in AGENT_KEYS:
            value = self.values.get(key)
            if value is None:
                continue
            overrides[key] = tuple(value) if isinstance(value, list) else value
        try:
            return default_config(
                kind or self["agent_kind"],
                alpha=self["alpha"] if alpha is None else alpha,
                preset=self["preset"],
                **overrides,
            )
        except (InvalidParameterError, ValueError) as e:
            raise ConfigError(f"Invalid agent configuration: {e}")


def build_run_config(file_values: dict, overrides: dict, source: Optional[Path] = None) -> RunConfig:
    values = {key: setting.default for key, setting in CONFIG_SCHEMA.items()}
    for key, value in file_values.items():
        values[key] = coerce(key, value)
    for key, value in overrides.items():
        values[key] = coerce(key, value)
    return RunConfig(values=values, source=source, overridden=set(overrides))
