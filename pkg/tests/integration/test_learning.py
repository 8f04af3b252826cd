import os

import numpy as np
import pytest

from risk_trading import (
    DayRange,
    GeneratorConfig,
    builtin_agent,
    default_config,
    generate_synthetic,
    make_splits,
    run_test,
    train,
)
from risk_trading.eval_harness import run_ablation
from risk_trading.models import ExperimentSplit


pytestmark = pytest.mark.slow

SMALL_NETWORK = dict(
    recurrent_layers=(16,), dropout_rate=0.0, learning_rate=1e-3, batch_size=32,
    min_fill=500, replay_capacity=10_000, pca_dim=2,
)


def jobs() -> int:
    return max(1, min(5, os.cpu_count() or 1))


@pytest.fixture(scope="module")
def rising_market():
    """One upward drift regime, low noise relative to the drift, informative features."""
    cfg = GeneratorConfig(
        n_days=600, raw_dim=2, n_informative=2, drifts=(2.0,), sigmas=(1.0,), noise_scale=0.1, seed=4,
    )
    return generate_synthetic(cfg)


@pytest.fixture(scope="module")
def two_volatility_market():
    """Positive drift with a calm and a turbulent regime; features announce tomorrow's regime."""
    cfg = GeneratorConfig(
        n_days=800, raw_dim=2, n_informative=2, drifts=(2.0,), sigmas=(1.0, 4.0),
        persistence=0.9, noise_scale=0.1, seed=5,
    )
    return generate_synthetic(cfg)


class TestLearnability:
    def test_dqn_learns_to_hold_a_rising_market(self, make_series):
        rng = np.random.default_rng(0)
        deltas = 0.1 + 0.1 * rng.standard_normal(400)
        series = make_series(deltas, n_features=4)
        split = ExperimentSplit(index=0, train_range=DayRange(0, 360), test_range=DayRange(360, 400))
        config = default_config(
            "dqn", recurrent_layers=(8,), dense_layers=(8,), learning_rate=1e-3, dropout_rate=0.0,
            train_steps=4000, min_fill=200, pca_dim=2,
        )
        result = train(config, series, split.train_range, seed=0)
        report = run_test(result.agent, series, result.pca_model, split)
        assert report.pnl > 0.0

    @pytest.mark.parametrize("kind,extra", [
        ("dqn", dict(dense_layers=(16,))),
        ("c51", dict(dense_layers=(16,), n_atoms=51, v_min=-100.0, v_max=100.0)),
    ])
    def test_close_to_always_long_over_three_seeds(self, rising_market, kind, extra):
        split = make_splits(rising_market, n_experiments=1, test_days=100)[0]
        baseline = run_test(builtin_agent("long"), rising_market, None, split).pnl
        assert baseline > 0.0

        config = default_config(kind, train_steps=8000, **SMALL_NETWORK, **extra)
        pnls = []
        for seed in range(3):
            result = train(config, rising_market, split.train_range, seed=seed)
            pnls.append(run_test(result.agent, rising_market, result.pca_model, split, seed=seed).pnl)
        assert np.mean(pnls) >= 0.9 * baseline


class TestRiskAversion:
    def test_iqn_risky_ratio_falls_with_alpha(self, two_volatility_market):
        splits = make_splits(two_volatility_market, n_experiments=1, test_days=200)
        config = default_config(
            "iqn", train_steps=8000, psi_dim=16, head_layers=(16,), embedding_dim=16,
            iqn_n=8, iqn_n_prime=8, iqn_k=16, **SMALL_NETWORK,
        )
        result = run_ablation(config, two_volatility_market, splits, seeds=range(5), alphas=[1.0, 0.5, 0.1], jobs=jobs())

        ratios = {row.alpha: row.risky_ratio_mean for row in result.summary}
        assert all(np.isfinite(r) for r in ratios.values())
        ordered = [ratios[1.0], ratios[0.5], ratios[0.1]]
        inversions = sum(later > earlier for earlier, later in zip(ordered, ordered[1:]))
        assert inversions <= 1
        assert ratios[0.1] < 0.5 * ratios[1.0]
