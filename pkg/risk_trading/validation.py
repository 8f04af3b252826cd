"""
Run configuration validation.

Type checks happen while the configuration is loaded (config.coerce); this module
checks that the resolved values make sense together: agent hyperparameters, the
synthetic market, the walk-forward layout and the sweep settings.
"""

from dataclasses import dataclass, field
from typing import Optional

from .config import RunConfig
from .eval_harness import MIN_TRAIN_DAYS
from .models import EPISODE_LENGTH, AgentKind, ConfigError


@dataclass
class ValidationResult:
    is_valid: bool
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def error_count(self) -> int:
        return len(self.errors)

    @property
    def warning_count(self) -> int:
        return len(self.warnings)


def check_agent(config: RunConfig, errors: list[str], warnings: list[str]) -> None:
    kinds = [config["agent_kind"]] + list(config["agents"])
    for kind in kinds:
        if kind not in {k.value for k in AgentKind}:
            errors.append(f"Unknown agent kind: {kind}")
            return
    try:
        agent = config.agent_config()
    except ConfigError as e:
        errors.append(str(e))
        return
    if agent.agent_kind is AgentKind.EXTRA_TREES:
        return
    if agent.min_fill >= agent.train_steps > 0:
        warnings.append(
            f"min_fill ({agent.min_fill}) >= train_steps ({agent.train_steps}): no gradient step will run"
        )
    if agent.pca_dim > config["raw_dim"]:
        warnings.append(f"pca_dim ({agent.pca_dim}) exceeds raw_dim ({config['raw_dim']}); it will be capped")
    if agent.agent_kind is AgentKind.QR_DQN and agent.alpha < 1.0:
        product = agent.alpha * agent.n_quantiles
        if abs(product - round(product)) > 1e-9:
            warnings.append(
                f"alpha * n_quantiles = {product:g} is not an integer; the CVaR tail uses {int(product)} quantiles"
            )
    if not agent.agent_kind.is_distributional and agent.alpha < 1.0:
        warnings.append(f"alpha = {agent.alpha} has no effect on {agent.agent_kind.value}")


def check_market(config: RunConfig, errors: list[str]) -> None:
    try:
        config.generator_config()
    except ConfigError as e:
        errors.append(str(e))


def check_experiments(config: RunConfig, errors: list[str], warnings: list[str]) -> None:
    n, test_days = config["n_experiments"], config["test_days"]
    if n < 1:
        errors.append(f"n_experiments must be at least 1, got {n}")
    if test_days < EPISODE_LENGTH:
        errors.append(f"test_days must be at least {EPISODE_LENGTH}, got {test_days}")
    elif config["n_days"] - n * test_days < MIN_TRAIN_DAYS:
        warnings.append(
            f"{n} test windows of {test_days} days leave fewer than {MIN_TRAIN_DAYS} training days "
            f"in a generated series of {config['n_days']} days"
        )
    if not 0 <= config["split"] < max(n, 1):
        errors.append(f"split must be in [0, {n}), got {config['split']}")
    if config["jobs"] < 1:
        errors.append(f"jobs must be at least 1, got {config['jobs']}")
    if config["seed"] < 0 or any(s < 0 for s in config.run_seeds()):
        errors.append("seeds must be non-negative")
    if not config["alphas"]:
        errors.append("alphas must not be empty")
    for alpha in config["alphas"]:
        if not 0.0 < alpha <= 1.0:
            errors.append(f"alpha {alpha} in alphas is outside (0, 1]")


def validate_run_config(config: RunConfig) -> ValidationResult:
    errors: list[str] = []
    warnings: list[str] = []
    check_agent(config, errors, warnings)
    check_market(config, errors)
    check_experiments(config, errors, warnings)
    return ValidationResult(is_valid=not errors, errors=errors, warnings=warnings)


def print_validation_result(result: ValidationResult, source: Optional[str], verbosity: int = 0) -> None:
    if verbosity < 0:
        return

    print("=== Config Validation ===")
    print(f"File: {source or '(defaults)'}")
    print()

    if result.warnings:
        print("Warnings:")
        for warning in result.warnings:
            print(f"  ⚠ {warning}")
        print()

    if result.errors:
        print("Errors:")
        for error in result.errors:
            print(f"  ✗ {error}")
        print()

    status = "PASSED" if result.is_valid else "FAILED"
    parts = []
    if result.error_count > 0:
        parts.append(f"{result.error_count} error{'s' if result.error_count != 1 else ''}")
    if result.warning_count > 0:
        parts.append(f"{result.warning_count} warning{'s' if result.warning_count != 1 else ''}")

    status_str = f"{status} ({', '.join(parts)})" if parts else status
    print(f"Status: {status_str}")
