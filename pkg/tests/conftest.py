import os
from pathlib import Path

import numpy as np
import pytest

from risk_trading import GeneratorConfig, MarketSeries, generate_synthetic, write_csv


REPO_ROOT = Path(__file__).resolve().parent.parent


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains agents for thousands of steps")


def series_from_deltas(deltas, features=None, n_features: int = 4, seed: int = 0) -> MarketSeries:
    deltas = np.asarray(deltas, dtype=np.float64)
    if features is None:
        features = np.random.default_rng(seed).standard_normal((len(deltas), n_features))
    return MarketSeries(
        days=np.arange(len(deltas), dtype=np.int64),
        deltas=deltas,
        features=np.asarray(features, dtype=np.float64),
    )


@pytest.fixture
def make_series():
    return series_from_deltas


@pytest.fixture
def up_market():
    """Deterministic market that rises by exactly 1 every day."""
    return series_from_deltas(np.ones(60))


@pytest.fixture
def small_config():
    return GeneratorConfig(n_days=240, raw_dim=12, n_informative=4, seed=3)


@pytest.fixture
def small_series(small_config):
    return generate_synthetic(small_config)


@pytest.fixture
def market_csv(tmp_path, small_series):
    path = tmp_path / "market.csv"
    write_csv(small_series, path)
    return str(path)


@pytest.fixture
def repo_root():
    return str(REPO_ROOT)


@pytest.fixture
def cli_env():
    env = dict(os.environ)
    env["PYTHONPATH"] = str(REPO_ROOT) + os.pathsep + env.get("PYTHONPATH", "")
    return env
