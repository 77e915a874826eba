"""Second-stage linear combiner over per-series one-step forecasts.

Stage one produces, for every month of a fit range, the vector of per-series
forecasts next to the realized values. Stage two fits a ridge regression
(intercept unpenalized) mapping that forecast vector to the realized vector,
so cross-series information corrects each individual forecast.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .timeseries import TimeSeriesPanel


class SeriesForecaster(Protocol):
    """One-step forecaster for a single series."""

    def predict_next(self, lags_raw: np.ndarray) -> float:
        """Forecast the next value from a raw lag window, most recent first."""
        ...


@dataclass(frozen=True)
class FirstStageMatrix:
    """Per-month vectors of first-stage forecasts aligned with realized values."""

    forecasts: np.ndarray  # (n_fit, M)
    targets: np.ndarray  # (n_fit, M)

    def __post_init__(self) -> None:
        f, y = np.asarray(self.forecasts), np.asarray(self.targets)
        if f.shape != y.shape or f.ndim != 2:
            raise ValueError(f"forecasts {f.shape} and targets {y.shape} must be matching matrices")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(y))):
            raise ValueError("first-stage values must be finite")

    @property
    def n_fit(self) -> int:
        return self.forecasts.shape[0]

    @property
    def n_series(self) -> int:
        return self.forecasts.shape[1]

    def rows(self, selection: range) -> "FirstStageMatrix":
        return FirstStageMatrix(
            forecasts=self.forecasts[selection.start : selection.stop],
            targets=self.targets[selection.start : selection.stop],
        )


@dataclass(frozen=True)
class CombinerWeights:
    """M x (M+1) linear map; the last column is the intercept."""

    weights: np.ndarray
    ridge_penalty: float

    def __post_init__(self) -> None:
        # contiguous layout keeps BLAS results identical across fit/reload paths
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if w.ndim != 2 or w.shape[1] != w.shape[0] + 1:
            raise ValueError(f"weights must be M x (M+1), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("combiner weights must be finite")
        if self.ridge_penalty < 0:
            raise ValueError(f"ridge penalty must be nonnegative, got {self.ridge_penalty}")

    @property
    def n_series(self) -> int:
        return self.weights.shape[0]


def build_first_stage(
    forecasters: Sequence[SeriesForecaster],
    panel: TimeSeriesPanel,
    fit_range: range,
    lag_order: int,
) -> FirstStageMatrix:
    """One-step forecasts for every month of ``fit_range``, paired with actuals.

    Lag windows are drawn from panel actuals, so the range must start at or
    after ``lag_order``. The forecasters must have been fitted on data that
    does not extend past the range start.
    """
    if len(forecasters) != panel.n_series:
        raise ValueError(f"{len(forecasters)} forecasters for {panel.n_series} series")
    if len(fit_range) == 0:
        raise ValueError("empty fit range")
    if fit_range.start < lag_order or fit_range.stop > panel.n_months:
        raise ValueError(
            f"fit range {fit_range.start}..{fit_range.stop} infeasible for "
            f"{panel.n_months} months with {lag_order} lags"
        )
    values = panel.values
    f = np.empty((len(fit_range), panel.n_series))
    for row, t in enumerate(fit_range):
        window = values[t - lag_order : t]
        for s, forecaster in enumerate(forecasters):
            f[row, s] = forecaster.predict_next(window[::-1, s])
    return FirstStageMatrix(forecasts=f, targets=values[fit_range.start : fit_range.stop].copy())


def _augment(forecasts: np.ndarray) -> np.ndarray:
    return np.hstack([forecasts, np.ones((forecasts.shape[0], 1))])


def fit_combiner(stage: FirstStageMatrix, ridge_penalty: float) -> CombinerWeights:
    """Ridge-regularized least squares from forecast vectors to realized vectors.

    Solves W = Y^T F~ (F~^T F~ + penalty * I0)^-1 with F~ the forecasts plus a
    ones column and I0 the identity zeroed at the intercept coordinate.
    """
    if ridge_penalty < 0:
        raise ValueError(f"ridge penalty must be nonnegative, got {ridge_penalty}")
    m = stage.n_series
    if stage.n_fit < m + 1:
        raise ValueError(f"need at least M+1={m + 1} fit rows for an M={m} combiner, got {stage.n_fit}")
    f_aug = _augment(stage.forecasts)
    gram = f_aug.T @ f_aug
    penalty_mask = np.eye(m + 1)
    penalty_mask[m, m] = 0.0  # intercept unpenalized
    try:
        solution = np.linalg.solve(gram + ridge_penalty * penalty_mask, f_aug.T @ stage.targets)
    except np.linalg.LinAlgError:
        raise ValueError(
            "normal equations are singular; supply a positive ridge penalty"
        ) from None
    return CombinerWeights(weights=solution.T, ridge_penalty=float(ridge_penalty))


def combine(weights: CombinerWeights, f_star: np.ndarray) -> np.ndarray:
    """Apply the combiner to one vector of first-stage forecasts."""
    f_star = np.asarray(f_star, dtype=np.float64)
    if f_star.shape != (weights.n_series,):
        raise ValueError(f"expected {weights.n_series} forecasts, got shape {f_star.shape}")
    return weights.weights @ np.append(f_star, 1.0)


def combiner_mse(weights: CombinerWeights, stage: FirstStageMatrix) -> float:
    """Mean squared error of combined forecasts against the stage targets."""
    predicted = _augment(stage.forecasts) @ weights.weights.T
    return float(np.mean((predicted - stage.targets) ** 2))


def select_ridge_penalty(
    stage_train: FirstStageMatrix,
    stage_valid: FirstStageMatrix,
    grid: Sequence[float],
) -> float:
    """Grid-search the penalty minimizing combined-forecast MSE on held-out rows.

    Ties break toward the larger penalty; penalties whose fit fails (singular
    normal equations at 0) are skipped.
    """
    if len(grid) == 0:
        raise ValueError("penalty grid is empty")
    best_penalty = None
    best_mse = np.inf
    for penalty in sorted(grid):
        try:
            weights = fit_combiner(stage_train, penalty)
        except ValueError:
            continue
        mse = combiner_mse(weights, stage_valid)
        if mse <= best_mse:
            best_penalty, best_mse = penalty, mse
    if best_penalty is None:
        raise ValueError("no penalty in the grid produced a solvable combiner")
    return float(best_penalty)


@dataclass(frozen=True)
class MimoForecaster:
    """Per-series one-step forecasters plus an optional combiner.

    ``one_step`` maps a raw history matrix (months x series, newest row last)
    to the combined vector of next-month forecasts; with ``combiner=None`` the
    per-series forecasts pass through untouched (the independent baseline).
    """

    series_names: tuple[str, ...]
    lag_order: int
    first_stage: tuple[SeriesForecaster, ...]
    combiner: CombinerWeights | None = None

    def __post_init__(self) -> None:
        if len(self.first_stage) != len(self.series_names):
            raise ValueError("one first-stage forecaster per series is required")
        if self.combiner is not None and self.combiner.n_series != len(self.series_names):
            raise ValueError("combiner dimension does not match the series count")

    @property
    def n_series(self) -> int:
        return len(self.series_names)

    def first_stage_vector(self, history: np.ndarray) -> np.ndarray:
        history = np.asarray(history, dtype=np.float64)
        if history.ndim != 2 or history.shape[1] != self.n_series:
            raise ValueError(f"history must be months x {self.n_series}, got {history.shape}")
        if history.shape[0] < self.lag_order:
            raise ValueError(f"need {self.lag_order} months of history, got {history.shape[0]}")
        window = history[-self.lag_order :][::-1]  # most recent first
        return np.array(
            [fc.predict_next(window[:, s]) for s, fc in enumerate(self.first_stage)]
        )

    def one_step(self, history: np.ndarray) -> np.ndarray:
        f = self.first_stage_vector(history)
        return combine(self.combiner, f) if self.combiner is not None else f
