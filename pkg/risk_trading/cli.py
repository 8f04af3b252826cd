import argparse
import logging
import sys
from typing import NoReturn, Optional, Sequence

from .config import (
    CONFIG_SCHEMA,
    RunConfig,
    build_run_config,
    find_config_file,
    load_config,
    parse_overrides,
)
from .models import (
    DataError,
    EpisodeError,
    NumericFaultError,
)


logger = logging.getLogger(__name__)

COMMANDS = {
    "gen-data": "Generate a synthetic market CSV",
    "train": "Train one agent on one walk-forward split",
    "eval": "Evaluate a checkpoint or built-in agent on the test window",
    "ablate": "Sweep the CVaR confidence level over splits and seeds",
    "compare": "Compare agent kinds over splits and seeds",
    "calibrate-sigma": "Calibrate the risky-state volatility threshold per split",
}

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def setup_logging(verbosity: int) -> None:
    """Map -v/-q counts to log levels.

      2+: DEBUG   (-vv)
       1: INFO    (-v)
       0: WARNING (default)
      -1: ERROR   (-q)
    else: CRITICAL
    """
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    elif verbosity == 0:
        level = logging.WARNING
    elif verbosity == -1:
        level = logging.ERROR
    else:
        level = logging.CRITICAL

    logging.basicConfig(
        level=level,
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument(
        "-c", "--config",
        default=None,
        help="Path to config file (default: ./risk_trading.yaml or ./.risktradingrc)"
    )
    common.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Master seed (default: 0)"
    )
    common.add_argument(
        "--out",
        default=None,
        help="Output directory (default: out)"
    )
    common.add_argument(
        "--jobs",
        type=int,
        default=None,
        help="Concurrent runs for ablate and compare (default: 1)"
    )
    common.add_argument(
        "-v", "--verbose",
        action="count",
        default=0,
        help="Increase output verbosity (-v, -vv)"
    )
    common.add_argument(
        "-q", "--quiet",
        action="count",
        default=0,
        help="Decrease output verbosity (-q, -qq)"
    )
    common.add_argument(
        "--validate",
        action="store_true",
        help="Validate the resolved configuration and exit"
    )
    return common


def create_parser() -> argparse.ArgumentParser:
    common = _common_arguments()
    parser = argparse.ArgumentParser(
        prog="risk_trading.py",
        allow_abbrev=False,
        description="Risk-sensitive distributional RL agents for futures trading",
        epilog=(
            "Any config key can be overridden with --key value, e.g. --agent-kind iqn --alpha 0.3. "
            f"Keys: {', '.join(sorted(CONFIG_SCHEMA))}"
        ),
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for name, help_text in COMMANDS.items():
        sub = subparsers.add_parser(
            name, parents=[common], help=help_text, description=help_text, allow_abbrev=False,
        )
        if name == "eval":
            sub.add_argument(
                "--checkpoint",
                default=None,
                help="Checkpoint directory, or built-in agent 'flat' / 'long' (default: <out>/checkpoint)"
            )
    return parser


def parse_arguments(argv: Optional[Sequence[str]] = None) -> tuple[argparse.Namespace, RunConfig]:
    """Parse the command line and resolve the run configuration.

    Precedence: explicit flags and --key overrides > config file > defaults.
    """
    parser = create_parser()
    args, extra = parser.parse_known_args(argv)
    setup_logging(args.verbose - args.quiet)

    overrides = parse_overrides(extra)
    for key in ("seed", "out", "jobs"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if getattr(args, "checkpoint", None) is not None:
        overrides["checkpoint"] = args.checkpoint

    config_file = find_config_file(args.config)
    file_values = {}
    if config_file:
        file_values = load_config(config_file)
        logger.info(f"Loaded config from: {config_file}")
    return args, build_run_config(file_values, overrides, config_file)


def exit_code(error: Exception) -> int:
    if isinstance(error, NumericFaultError):
        return EXIT_NUMERIC
    if isinstance(error, (DataError, EpisodeError)):
        return EXIT_DATA
    return EXIT_USAGE


def handle_error(error: Exception) -> NoReturn:
    """Log the error and exit with its code (1 usage/config, 2 data, 3 numeric fault)."""
    logger.error(f"Error: {error}")
    sys.exit(exit_code(error))
