"""
Return-distribution representations and risk functionals.

Categorical distributions live on a fixed atom grid (C51 heads); quantile sets are
L equally weighted quantile values (QR-DQN heads). Both support VaR/CVaR at a
confidence level alpha, where alpha = 1 is the plain expectation.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .models import InvalidParameterError, ShapeError


PROB_FLOOR = 1e-12
MASS_TOLERANCE = 1e-9
DEFAULT_KAPPA = 1.0
DEFAULT_N_QUANTILES = 51


@dataclass(frozen=True)
class AtomGrid:
    v_min: float
    v_max: float
    n_atoms: int = 51

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise InvalidParameterError(f"v_min ({self.v_min}) must be below v_max ({self.v_max})")
        if self.n_atoms < 2:
            raise InvalidParameterError(f"n_atoms must be at least 2, got {self.n_atoms}")

    @property
    def delta_z(self) -> float:
        return (self.v_max - self.v_min) / (self.n_atoms - 1)

    @cached_property
    def atoms(self) -> np.ndarray:
        return self.v_min + np.arange(self.n_atoms) * self.delta_z


@dataclass(frozen=True)
class CategoricalValueDistribution:
    grid: AtomGrid
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.shape != (self.grid.n_atoms,):
            raise ShapeError(f"expected {self.grid.n_atoms} probabilities, got shape {probs.shape}")
        if np.any(probs < 0.0) or abs(probs.sum() - 1.0) > MASS_TOLERANCE:
            raise InvalidParameterError("probabilities must be non-negative and sum to 1")

    def mean(self) -> float:
        return float(distribution_mean(self.probs, self.grid.atoms))


@dataclass(frozen=True)
class QuantileSet:
    """L quantile values at implicit levels τ_i = i / L. Values need not be sorted."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        object.__setattr__(self, "values", values)
        if values.size < 1:
            raise InvalidParameterError("a quantile set needs at least one value")

    @property
    def n_quantiles(self) -> int:
        return int(self.values.size)

    @property
    def levels(self) -> np.ndarray:
        return np.arange(1, self.n_quantiles + 1) / self.n_quantiles


def _check_alpha(alpha: float, allow_one: bool = True) -> None:
    upper_ok = alpha <= 1.0 if allow_one else alpha < 1.0
    if not (alpha > 0.0 and upper_ok):
        bound = "(0, 1]" if allow_one else "(0, 1)"
        raise InvalidParameterError(f"confidence level must be in {bound}, got {alpha}")


def distribution_mean(probs: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """Expected value along the last axis of `probs`."""
    return np.asarray(probs, dtype=np.float64) @ atoms


def cvar_categorical_batch(
    probs: np.ndarray,
    atoms: np.ndarray,
    alpha: float,
    truncated: bool = False,
) -> np.ndarray:
    """Lower CVaR along the last axis of `probs` (atoms ascending).

    With cumulative masses c_i the tail mass on atom i is min(c_i, α) − min(c_{i−1}, α);
    the boundary atom only contributes the part of its mass that lies inside the tail.
    `truncated=True` gives the older estimator (1/α)·Σ_{z_i ≤ VaR_α} z_i·p_i, which
    counts the whole boundary atom.
    """
    _check_alpha(alpha)
    probs = np.asarray(probs, dtype=np.float64)
    if alpha == 1.0:
        return distribution_mean(probs, atoms)
    cum = np.cumsum(probs, axis=-1)
    if truncated:
        var_index = np.argmax(cum >= alpha - MASS_TOLERANCE, axis=-1)
        tail = np.arange(probs.shape[-1]) <= var_index[..., None]
        return ((probs * tail) @ atoms) / alpha
    cum = np.minimum(cum, alpha)
    prev = np.concatenate([np.zeros(cum.shape[:-1] + (1,)), cum[..., :-1]], axis=-1)
    return ((cum - prev) @ atoms) / alpha


def cvar_categorical(dist: CategoricalValueDistribution, alpha: float, truncated: bool = False) -> float:
    """CVaR_α of a categorical distribution; α = 1 is the mean."""
    return float(cvar_categorical_batch(dist.probs, dist.grid.atoms, alpha, truncated))


def var_categorical(dist: CategoricalValueDistribution, alpha: float) -> float:
    """Smallest atom whose cumulative mass reaches α."""
    _check_alpha(alpha, allow_one=False)
    cum = np.cumsum(dist.probs)
    index = int(np.argmax(cum >= alpha - MASS_TOLERANCE))
    return float(dist.grid.atoms[index])


def tail_count(n_quantiles: int, alpha: float) -> int:
    _check_alpha(alpha)
    k = int(np.floor(alpha * n_quantiles + MASS_TOLERANCE))
    if k < 1:
        raise InvalidParameterError(
            f"confidence level unresolvable at this L: alpha={alpha}, L={n_quantiles}"
        )
    return k


def cvar_quantiles(q: QuantileSet, alpha: float) -> float:
    """Mean of the first ⌊αL⌋ quantile values, in the order given."""
    k = tail_count(q.n_quantiles, alpha)
    return float(q.values[:k].mean())


def project_categorical_batch(
    rewards: np.ndarray,
    gammas: np.ndarray,
    probs: np.ndarray,
    grid: AtomGrid,
    swapped_weights: bool = False,
) -> np.ndarray:
    """Project r + γ·Z onto the atom grid, one row per (reward, gamma, probs) triple.

    Each shifted atom splits its mass between the two neighbouring grid atoms in
    proportion to proximity; an exact hit keeps the full mass. `swapped_weights`
    reproduces the variant that gives the lower atom (b − l) and the upper (u − b).
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    rewards = np.asarray(rewards, dtype=np.float64).reshape(-1, 1)
    gammas = np.asarray(gammas, dtype=np.float64).reshape(-1, 1)
    batch, n_atoms = probs.shape
    if n_atoms != grid.n_atoms:
        raise ShapeError(f"expected {grid.n_atoms} atoms, got {n_atoms}")

    tz = np.clip(rewards + gammas * grid.atoms[None, :], grid.v_min, grid.v_max)
    b = (tz - grid.v_min) / grid.delta_z
    lower = np.floor(b).astype(np.int64)
    upper = np.ceil(b).astype(np.int64)
    lower = np.clip(lower, 0, n_atoms - 1)
    upper = np.clip(upper, 0, n_atoms - 1)
    exact = lower == upper

    if swapped_weights:
        w_lower = b - lower
        w_upper = upper - b
    else:
        w_lower = upper - b
        w_upper = b - lower
    w_lower = np.where(exact, 1.0, w_lower)
    w_upper = np.where(exact, 0.0, w_upper)

    m = np.zeros((batch, n_atoms))
    rows = np.repeat(np.arange(batch)[:, None], n_atoms, axis=1)
    np.add.at(m, (rows, lower), probs * w_lower)
    np.add.at(m, (rows, upper), probs * w_upper)
    return m


def project_categorical(
    reward: float,
    gamma: float,
    source: CategoricalValueDistribution,
    swapped_weights: bool = False,
) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParameterError(f"gamma must be in [0, 1], got {gamma}")
    if not np.isfinite(reward):
        raise InvalidParameterError(f"reward must be finite, got {reward}")
    return project_categorical_batch(
        np.array([reward]), np.array([gamma]), source.probs[None, :], source.grid, swapped_weights
    )[0]


def cross_entropy(target_m, predicted) -> float:
    """−Σ m_i·log(max(p_i, 1e-12))."""
    m = np.asarray(target_m, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if m.shape != p.shape:
        raise ShapeError(f"length mismatch: {m.shape} vs {p.shape}")
    return float(-(m * np.log(np.maximum(p, PROB_FLOOR))).sum())


def huber(u, kappa: float = DEFAULT_KAPPA):
    abs_u = np.abs(u)
    return np.where(abs_u <= kappa, 0.5 * u * u, kappa * (abs_u - 0.5 * kappa))


def quantile_huber(u, tau, kappa: float = DEFAULT_KAPPA):
    """|τ − 1{u<0}|·L_κ(u)/κ. Broadcasts over arrays; returns a float for scalar input."""
    if kappa <= 0.0:
        raise InvalidParameterError(f"kappa must be positive, got {kappa}")
    u = np.asarray(u, dtype=np.float64)
    weight = np.abs(tau - (u < 0.0).astype(np.float64))
    loss = weight * huber(u, kappa) / kappa
    return float(loss) if loss.ndim == 0 else loss


def quantile_huber_grad(u, tau, kappa: float = DEFAULT_KAPPA) -> np.ndarray:
    """Derivative of quantile_huber with respect to u."""
    if kappa <= 0.0:
        raise InvalidParameterError(f"kappa must be positive, got {kappa}")
    u = np.asarray(u, dtype=np.float64)
    weight = np.abs(tau - (u < 0.0).astype(np.float64))
    return weight * np.clip(u, -kappa, kappa) / kappa
