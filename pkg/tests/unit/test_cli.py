import pytest

from risk_trading import ConfigError, DataError, EpisodeError, FileError, InvalidParameterError, NumericFaultError
from risk_trading.cli import COMMANDS, create_parser, exit_code, parse_arguments


@pytest.fixture(autouse=True)
def no_config_files(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


class TestParser:
    def test_every_command_is_registered(self):
        parser = create_parser()
        for command in COMMANDS:
            assert parser.parse_known_args([command])[0].command == command

    def test_command_required(self):
        with pytest.raises(SystemExit):
            create_parser().parse_args([])

    def test_no_abbreviations(self):
        args, extra = create_parser().parse_known_args(["train", "--verb"])
        assert extra == ["--verb"]
        assert args.verbose == 0


class TestParseArguments:
    def test_defaults(self):
        args, config = parse_arguments(["train"])
        assert args.command == "train"
        assert not args.validate
        assert config.seed == 0
        assert config.out == "out"
        assert config.source is None

    def test_common_flags(self):
        _, config = parse_arguments(["ablate", "--seed", "4", "--out", "runs", "--jobs", "3"])
        assert (config.seed, config.out, config.jobs) == (4, "runs", 3)
        assert {"seed", "out", "jobs"} <= config.overridden

    def test_key_overrides(self):
        _, config = parse_arguments(["train", "--agent-kind", "iqn", "--alpha", "0.3", "--train-steps=50"])
        assert config.agent_kind == "iqn"
        assert config.alpha == 0.3
        assert config.train_steps == 50

    def test_eval_checkpoint(self):
        _, config = parse_arguments(["eval", "--checkpoint", "long"])
        assert config.checkpoint == "long"

    def test_all_splits(self):
        _, config = parse_arguments(["eval", "--checkpoint", "flat", "--all-splits", "true"])
        assert config.all_splits is True
        _, config = parse_arguments(["eval"])
        assert config.all_splits is False

    def test_config_file_then_command_line(self, tmp_path):
        config_file = tmp_path / "run.yaml"
        config_file.write_text("alpha: 0.3\nseed: 9\n")
        _, config = parse_arguments(["train", "-c", str(config_file), "--alpha", "0.7"])
        assert config.alpha == 0.7
        assert config.seed == 9
        assert config.source == config_file

    def test_config_file_discovered(self, tmp_path):
        (tmp_path / "risk_trading.yaml").write_text("n_days: 400\n")
        _, config = parse_arguments(["gen-data"])
        assert config.n_days == 400

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_arguments(["train", "--momentum", "3"])

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_arguments(["train", "-c", str(tmp_path / "missing.yaml")])

    def test_validate_flag(self):
        args, _ = parse_arguments(["compare", "--validate"])
        assert args.validate


class TestExitCode:
    def test_usage_errors(self):
        assert exit_code(ConfigError("x")) == 1
        assert exit_code(InvalidParameterError("x")) == 1

    def test_data_errors(self):
        assert exit_code(DataError("x")) == 2
        assert exit_code(FileError("x")) == 2
        assert exit_code(EpisodeError("x")) == 2

    def test_numeric_fault(self):
        assert exit_code(NumericFaultError("x")) == 3
