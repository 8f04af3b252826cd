import numpy as np
import pytest
import yaml

from risk_trading import (
    DataError,
    DayRange,
    EnvState,
    FileError,
    StepRecord,
    build_agent,
    default_config,
    load_agent,
    load_csv,
    pca_fit,
    save_agent,
    write_csv,
)
from risk_trading.extra_trees import train_extra_trees
from risk_trading.io import (
    format_float,
    load_json,
    load_network,
    load_pca,
    load_trajectory,
    network_bytes,
    network_from_bytes,
    save_json,
    save_network,
    save_pca,
    save_trajectory,
)


def tiny_agent(kind: str = "c51", alpha: float = 0.5, seed: int = 0):
    config = default_config(
        kind, alpha=alpha, recurrent_layers=(3,), dense_layers=(4,), head_layers=(3,), psi_dim=3,
        n_atoms=11, v_min=-10.0, v_max=10.0, n_quantiles=4, iqn_n=4, iqn_n_prime=4, iqn_k=4, embedding_dim=4,
    )
    return build_agent(config, 4, np.random.default_rng(seed))


def sample_state(seed: int = 0) -> EnvState:
    return EnvState(window=np.random.default_rng(seed).standard_normal((10, 4)), position=2, day=9)


class TestMarketCsv:
    def test_round_trip_is_exact(self, tmp_path, small_series):
        path = tmp_path / "market.csv"
        write_csv(small_series, path)
        loaded = load_csv(path)
        assert np.array_equal(loaded.days, small_series.days)
        assert np.array_equal(loaded.deltas, small_series.deltas)
        assert np.array_equal(loaded.features, small_series.features)

    def test_float_format(self):
        assert format_float(0.1) == "0.10000000000000001"
        assert float(format_float(1 / 3)) == 1 / 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileError):
            load_csv(tmp_path / "missing.csv")

    def test_empty_file(self, tmp_path):
        path = tmp_path / "market.csv"
        path.write_text("")
        with pytest.raises(DataError, match="empty"):
            load_csv(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "market.csv"
        path.write_text("date,change\n0,1.0\n")
        with pytest.raises(DataError, match="line 1"):
            load_csv(path)

    def test_misnamed_feature_columns(self, tmp_path):
        path = tmp_path / "market.csv"
        path.write_text("day,delta,f1\n0,1.0,2.0\n")
        with pytest.raises(DataError, match="line 1"):
            load_csv(path)

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "market.csv"
        path.write_text("day,delta,f0\n0,1.0,2.0\n1,1.0\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "market.csv"
        path.write_text("day,delta,f0\n0,abc,2.0\n")
        with pytest.raises(DataError, match="line 2"):
            load_csv(path)

    def test_days_must_increase(self, tmp_path):
        path = tmp_path / "market.csv"
        path.write_text("day,delta,f0\n0,1.0,2.0\n0,1.0,2.0\n")
        with pytest.raises(DataError, match="does not increase"):
            load_csv(path)

    def test_no_rows(self, tmp_path):
        path = tmp_path / "market.csv"
        path.write_text("day,delta,f0\n")
        with pytest.raises(DataError):
            load_csv(path)


class TestNetworkFiles:
    def test_round_trip(self, tmp_path):
        net = tiny_agent("dqn", 1.0).networks()["online.q1.q"]
        path = tmp_path / "net.bin"
        save_network(net, path)
        loaded = load_network(path)
        assert loaded.spec == net.spec
        assert np.array_equal(loaded.params, net.params)

    def test_bad_magic(self):
        with pytest.raises(FileError, match="magic"):
            network_from_bytes(b"NOTANET0" + b"\x00" * 32)

    def test_truncated(self):
        data = network_bytes(tiny_agent("dqn", 1.0).networks()["online.q1.q"])
        with pytest.raises(FileError):
            network_from_bytes(data[:-8])

    def test_missing(self, tmp_path):
        with pytest.raises(FileError):
            load_network(tmp_path / "missing.bin")


class TestPcaFiles:
    def test_round_trip(self, tmp_path, small_series):
        model = pca_fit(small_series, DayRange(0, 200), d=3)
        path = tmp_path / "pca.bin"
        save_pca(model, path)
        loaded = load_pca(path)
        assert np.array_equal(loaded.mean, model.mean)
        assert np.array_equal(loaded.components, model.components)
        assert np.array_equal(loaded.explained_variance, model.explained_variance)

    def test_truncated(self, tmp_path, small_series):
        path = tmp_path / "pca.bin"
        save_pca(pca_fit(small_series, DayRange(0, 200), d=3), path)
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(FileError):
            load_pca(path)


class TestReports:
    def test_trajectory_file(self, tmp_path):
        records = [
            StepRecord(day=10, position_before=3, action=-1, delta_next=0.25, sigma_next=1.5, reward=0.5, sigma=1.25),
            StepRecord(day=11, position_before=2, action=0, delta_next=-1.0, sigma_next=1.0, reward=-2.0, sigma=1.5),
        ]
        path = tmp_path / "trajectory.csv"
        save_trajectory(path, records)
        assert path.read_text().splitlines()[0] == "day,position_before,action,delta_next,sigma_next,reward,sigma"
        assert load_trajectory(path) == records

    def test_json_is_sorted(self, tmp_path):
        path = tmp_path / "report.json"
        save_json(path, {"b": 1, "a": [1.5]})
        assert path.read_text().startswith('{\n  "a"')
        assert load_json(path) == {"a": [1.5], "b": 1}

    def test_corrupt_json(self, tmp_path):
        path = tmp_path / "report.json"
        path.write_text("{")
        with pytest.raises(FileError):
            load_json(path)


class TestAgentCheckpoints:
    @pytest.mark.parametrize("kind,alpha", [
        ("dqn", 1.0),
        ("prioritized_dueling_dqn", 1.0),
        ("c51", 0.5),
        ("qr_dqn", 0.5),
        ("iqn", 0.5),
    ])
    def test_restored_agent_acts_identically(self, tmp_path, small_series, kind, alpha):
        agent = tiny_agent(kind, alpha, seed=3)
        pca = pca_fit(small_series, DayRange(0, 200), d=2)
        save_agent(tmp_path / "ckpt", agent, pca)
        restored, restored_pca = load_agent(tmp_path / "ckpt")
        assert restored.config == agent.config
        assert np.array_equal(restored_pca.components, pca.components)
        for key, net in agent.networks().items():
            assert np.array_equal(restored.networks()[key].params, net.params)
        for seed in range(3):
            state = sample_state(seed)
            assert restored.act(state, np.random.default_rng(seed)) == agent.act(state, np.random.default_rng(seed))

    def test_extra_trees(self, tmp_path, small_series):
        config = default_config("extra_trees", n_trees=5)
        agent = train_extra_trees(config, small_series, DayRange(0, 200), seed=0)
        save_agent(tmp_path / "ckpt", agent, None)
        restored, pca = load_agent(tmp_path / "ckpt")
        assert pca is None
        np.testing.assert_array_equal(
            restored.model.predict(small_series.features), agent.model.predict(small_series.features),
        )

    def test_missing_description(self, tmp_path):
        (tmp_path / "ckpt").mkdir()
        with pytest.raises(FileError, match="agent.yaml"):
            load_agent(tmp_path / "ckpt")

    def test_truncated_network(self, tmp_path):
        save_agent(tmp_path / "ckpt", tiny_agent("dqn", 1.0), None)
        path = tmp_path / "ckpt" / "online.q1.q.bin"
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(FileError):
            load_agent(tmp_path / "ckpt")

    def test_missing_network(self, tmp_path):
        save_agent(tmp_path / "ckpt", tiny_agent("dqn", 1.0), None)
        (tmp_path / "ckpt" / "target.q2.q.bin").unlink()
        with pytest.raises(FileError):
            load_agent(tmp_path / "ckpt")

    def test_description_disagrees_with_networks(self, tmp_path):
        save_agent(tmp_path / "ckpt", tiny_agent("dqn", 1.0), None)
        description = tmp_path / "ckpt" / "agent.yaml"
        echo = yaml.safe_load(description.read_text())
        echo["agent"]["recurrent_layers"] = [5]
        description.write_text(yaml.safe_dump(echo))
        with pytest.raises(FileError, match="does not match"):
            load_agent(tmp_path / "ckpt")

    def test_unknown_config_key(self, tmp_path):
        save_agent(tmp_path / "ckpt", tiny_agent("dqn", 1.0), None)
        description = tmp_path / "ckpt" / "agent.yaml"
        echo = yaml.safe_load(description.read_text())
        echo["agent"]["momentum"] = 0.9
        description.write_text(yaml.safe_dump(echo))
        with pytest.raises(FileError):
            load_agent(tmp_path / "ckpt")
