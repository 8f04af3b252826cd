from .models import (
    ACTIONS,
    N_ACTIONS,
    MAX_TRADE,
    MAX_POSITION,
    WINDOW_LENGTH,
    EPISODE_LENGTH,
    GAMMA,
    AgentKind,
    DayRange,
    MarketSeries,
    EnvState,
    EpisodeSpec,
    Transition,
    ExperimentSplit,
    StepRecord,
    RiskTradingError,
    ConfigError,
    InvalidParameterError,
    ShapeError,
    DataError,
    FileError,
    EpisodeError,
    NumericFaultError,
)

from .risk_math import (
    AtomGrid,
    CategoricalValueDistribution,
    QuantileSet,
    cvar_categorical,
    var_categorical,
    cvar_quantiles,
    project_categorical,
    quantile_huber,
)

from .market_data import (
    GeneratorConfig,
    PcaModel,
    generate_synthetic,
    pca_fit,
    pca_transform,
    rolling_sigma,
)

from .trading_env import (
    TradingEnv,
    sharpe_reward,
    training_episode,
    test_episodes,
)

from .agents import (
    AgentConfig,
    default_config,
    build_agent,
    builtin_agent,
)

from .training import train

from .eval_harness import (
    make_splits,
    run_test,
    calibrate_sigma_hat,
    run_ablation,
    run_comparison,
)

from .io import (
    load_csv,
    write_csv,
    save_agent,
    load_agent,
)

from .main import main

logger = __import__('logging').getLogger(__name__)
