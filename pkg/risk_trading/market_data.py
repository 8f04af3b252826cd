"""
Market data provisioning.

Synthetic regime-switching price-difference series, PCA feature reduction fitted on
a training day range, and the rolling volatility used to normalize rewards.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .models import (
    WINDOW_LENGTH,
    DataError,
    DayRange,
    InvalidParameterError,
    MarketSeries,
    ShapeError,
)


logger = logging.getLogger(__name__)

DEFAULT_PCA_DIM = 75
POWER_TOLERANCE = 1e-10
POWER_MAX_ITERATIONS = 10_000


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic market: a drift-regime chain and a volatility-regime chain.

    Each chain stays in its state with probability `persistence` and otherwise jumps
    uniformly to one of the other states. The first `n_informative` feature
    coordinates carry the next day's regime levels plus Gaussian noise of scale
    `noise_scale`; even informative coordinates carry the drift level, odd ones the
    volatility level, both divided by their largest magnitude.
    """
    n_days: int = 1000
    raw_dim: int = 256
    n_informative: int = 8
    drifts: tuple[float, ...] = (0.5, 0.0, -0.5)
    sigmas: tuple[float, ...] = (1.0, 3.0)
    persistence: float = 0.95
    noise_scale: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.n_days < 1:
            raise InvalidParameterError(f"n_days must be positive, got {self.n_days}")
        if self.raw_dim < 1:
            raise InvalidParameterError(f"raw_dim must be positive, got {self.raw_dim}")
        if not 0 <= self.n_informative <= self.raw_dim:
            raise InvalidParameterError(
                f"n_informative must be in [0, raw_dim={self.raw_dim}], got {self.n_informative}"
            )
        if not self.drifts or not self.sigmas:
            raise InvalidParameterError("at least one drift regime and one volatility regime are needed")
        if any(s <= 0.0 for s in self.sigmas):
            raise InvalidParameterError(f"volatility levels must be positive, got {self.sigmas}")
        if not 0.0 <= self.persistence <= 1.0:
            raise InvalidParameterError(f"persistence must be in [0, 1], got {self.persistence}")
        if self.noise_scale < 0.0:
            raise InvalidParameterError(f"noise_scale must be non-negative, got {self.noise_scale}")


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def input_dim(self) -> int:
        return int(self.components.shape[0])

    @property
    def dim(self) -> int:
        return int(self.components.shape[1])


def _regime_chain(n_states: int, persistence: float, steps: int, rng: np.random.Generator) -> np.ndarray:
    states = np.zeros(steps, dtype=np.int64)
    if n_states == 1:
        return states
    states[0] = rng.integers(n_states)
    stays = rng.random(steps) < persistence
    jumps = rng.integers(1, n_states, size=steps)
    for t in range(1, steps):
        states[t] = states[t - 1] if stays[t] else (states[t - 1] + jumps[t]) % n_states
    return states


def generate_synthetic(cfg: GeneratorConfig) -> MarketSeries:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    steps = cfg.n_days + 1
    drift_states = _regime_chain(len(cfg.drifts), cfg.persistence, steps, rng)
    vol_states = _regime_chain(len(cfg.sigmas), cfg.persistence, steps, rng)

    drifts = np.asarray(cfg.drifts, dtype=np.float64)
    sigmas = np.asarray(cfg.sigmas, dtype=np.float64)
    days = slice(0, cfg.n_days)
    deltas = drifts[drift_states[days]] + sigmas[vol_states[days]] * rng.standard_normal(cfg.n_days)

    features = rng.standard_normal((cfg.n_days, cfg.raw_dim))
    if cfg.n_informative:
        drift_scale = max(np.abs(drifts).max(), 1e-12)
        sigma_scale = sigmas.max()
        upcoming = slice(1, steps)
        drift_level = drifts[drift_states[upcoming]] / drift_scale
        vol_level = sigmas[vol_states[upcoming]] / sigma_scale
        noise = cfg.noise_scale * rng.standard_normal((cfg.n_days, cfg.n_informative))
        for k in range(cfg.n_informative):
            level = drift_level if k % 2 == 0 else vol_level
            features[:, k] = level + noise[:, k]

    logger.debug(f"Generated {cfg.n_days} synthetic days with {cfg.raw_dim} raw features")
    return MarketSeries(
        days=np.arange(cfg.n_days, dtype=np.int64),
        deltas=deltas,
        features=features,
    )


def stationary_moments(cfg: GeneratorConfig) -> tuple[float, float]:
    """Mean and standard deviation of Δ under the chains' (uniform) stationary laws."""
    drifts = np.asarray(cfg.drifts, dtype=np.float64)
    sigmas = np.asarray(cfg.sigmas, dtype=np.float64)
    mean = drifts.mean()
    variance = (sigmas ** 2).mean() + (drifts ** 2).mean() - mean ** 2
    return float(mean), float(np.sqrt(variance))


def _check_range(series: MarketSeries, day_range: DayRange) -> None:
    if day_range.start < 0 or day_range.stop > len(series) or len(day_range) == 0:
        raise DataError(f"day range [{day_range.start}, {day_range.stop}) outside series of length {len(series)}")


def _orient(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude coordinate is positive."""
    lead = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _power_components(cov: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-d eigenpairs by power iteration with deflation.

    Iterates are kept orthogonal to earlier components, so a degenerate (zero)
    spectrum still yields an orthonormal basis.
    """
    dim = cov.shape[0]
    rng = np.random.default_rng(0)
    work = cov.copy()
    scale = max(float(np.trace(cov)), 1.0)
    vectors = np.zeros((dim, d))
    values = np.zeros(d)
    for k in range(d):
        previous = vectors[:, :k]
        v = rng.standard_normal(dim)
        v -= previous @ (previous.T @ v)
        v /= np.linalg.norm(v)
        for iteration in range(POWER_MAX_ITERATIONS):
            w = work @ v
            w -= previous @ (previous.T @ w)
            norm = np.linalg.norm(w)
            if norm <= POWER_TOLERANCE * scale:
                break
            eigenvalue = float(v @ w)
            if np.linalg.norm(w - eigenvalue * v) <= POWER_TOLERANCE * scale:
                v = w / norm
                break
            v = w / norm
        else:
            logger.warning(f"Power iteration for component {k} stopped at {POWER_MAX_ITERATIONS} iterations")
        v -= previous @ (previous.T @ v)
        v /= np.linalg.norm(v)
        values[k] = float(v @ cov @ v)
        vectors[:, k] = v
        work -= values[k] * np.outer(v, v)
    return values, vectors


def pca_fit(series: MarketSeries, day_range: DayRange, d: int = DEFAULT_PCA_DIM, solver: str = "eigh") -> PcaModel:
    """Fit PCA on the raw features of `day_range` only.

    Components are the top-d eigenvectors of the sample covariance in descending
    eigenvalue order, each oriented so its largest-magnitude coordinate is positive.
    """
    _check_range(series, day_range)
    rows = series.features[day_range.start:day_range.stop]
    if rows.shape[0] < 2:
        raise DataError(f"PCA needs at least 2 rows, got {rows.shape[0]}")
    if not 1 <= d <= series.feature_dim:
        raise InvalidParameterError(f"PCA dimension must be in [1, {series.feature_dim}], got {d}")

    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / (rows.shape[0] - 1)

    if solver == "eigh":
        values, vectors = np.linalg.eigh(cov)
        order = np.argsort(values)[::-1][:d]
        values, vectors = values[order], vectors[:, order]
    elif solver == "power":
        values, vectors = _power_components(cov, d)
    else:
        raise InvalidParameterError(f"unknown PCA solver: {solver}")

    values = np.maximum(values, 0.0)
    logger.debug(f"PCA kept {d} of {series.feature_dim} dimensions, explained variance {values.sum():.4g}")
    return PcaModel(mean=mean, components=_orient(vectors), explained_variance=values)


def pca_transform(model: PcaModel, o_t) -> np.ndarray:
    """componentsᵀ·(o_t − mean); accepts one vector or a matrix of rows."""
    x = np.asarray(o_t, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ShapeError(f"expected feature dimension {model.input_dim}, got {x.shape[-1]}")
    return (x - model.mean) @ model.components


def pca_inverse(model: PcaModel, x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) @ model.components.T + model.mean


def rolling_sigma(series: MarketSeries, t: int, window: int = WINDOW_LENGTH) -> float:
    """Population standard deviation of Δ_{t−window+1}, …, Δ_t."""
    if t < window - 1:
        raise DataError(f"rolling sigma at day {t} needs {window} days of history")
    if t >= len(series):
        raise DataError(f"day {t} beyond series of length {len(series)}")
    return float(np.std(series.deltas[t - window + 1:t + 1]))


def rolling_sigmas(series: MarketSeries, window: int = WINDOW_LENGTH) -> np.ndarray:
    """rolling_sigma for every day; NaN during warm-up."""
    sigmas = np.full(len(series), np.nan)
    if len(series) >= window:
        windows = np.lib.stride_tricks.sliding_window_view(series.deltas, window)
        sigmas[window - 1:] = windows.std(axis=1)
    return sigmas
