"""Experiment orchestration: synthetic panels, pipeline fitting, recursive
multi-step forecasting and rolling-origin evaluation.

Conventions fixed here:

* An *origin* t is the first forecasted month; the forecaster sees panel rows
  [0, t) plus its own chained forecasts. Step k of a recursion started at t
  targets month t + k - 1.
* Model names: ``mimo-gpr`` (per-series GP + combiner), ``mimo-mlp``
  (per-series LM-trained networks + combiner, one network size per horizon),
  ``independent-gpr`` (per-series GP, no combiner).
* All randomness flows from one seed; the stream for component c, series s,
  restart r is spawned at the key (c, s, r) of that seed (components:
  1 = GP fitting, 2 = network training).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import gpr, mimo, mlp
from .timeseries import Month, SplitSpec, TimeSeriesPanel, embed, fit_standardizer, split

MODEL_NAMES = ("mimo-gpr", "mimo-mlp", "independent-gpr")

_GPR_COMPONENT = 1
_MLP_COMPONENT = 2


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic sub-seed for a component path under the run seed."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(path)).generate_state(1)[0])


def thread_count(n_tasks: int) -> int:
    """Worker count for per-series work; MIMOGPR_THREADS caps it, absent means auto."""
    cap = os.environ.get("MIMOGPR_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_tasks))


def _run_indexed(tasks: Sequence[Callable[[], object]]) -> list:
    """Run independent tasks, possibly on a thread pool; results keep task order."""
    workers = thread_count(len(tasks))
    if workers == 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


@dataclass(frozen=True)
class SyntheticSpec:
    """Seasonal sinusoid-plus-trend panel with equicorrelated Gaussian innovations."""

    n_series: int
    n_months: int
    seasonal_amplitude: float = 20.0
    trend_slope: float = 0.0
    cross_correlation: float = 0.0
    noise_std: float = 1.0
    seed: int = 0
    level: float = 100.0
    start_month: Month = Month(1999, 1)

    def __post_init__(self) -> None:
        if self.n_series < 1:
            raise ValueError(f"need at least one series, got {self.n_series}")
        if self.n_months < 48:
            raise ValueError(f"need at least 48 months, got {self.n_months}")
        if not 0.0 <= self.cross_correlation < 1.0:
            raise ValueError(f"cross-correlation must lie in [0, 1), got {self.cross_correlation}")
        if self.noise_std < 0:
            raise ValueError(f"noise std must be nonnegative, got {self.noise_std}")


def generate_synthetic_panel(spec: SyntheticSpec) -> TimeSeriesPanel:
    """Deterministic (per seed) panel: level + trend*t + seasonal sine + noise.

    Series s gets phase 2 pi s / M; innovations share pairwise correlation
    ``cross_correlation`` via an equicorrelation Gaussian draw.
    """
    m, n = spec.n_series, spec.n_months
    t = np.arange(n, dtype=np.float64)[:, None]
    phases = 2.0 * np.pi * np.arange(m) / m
    deterministic = (
        spec.level
        + spec.trend_slope * t
        + spec.seasonal_amplitude * np.sin(2.0 * np.pi * t / 12.0 + phases)
    )
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal((n, m))
    if spec.noise_std > 0:
        rho = spec.cross_correlation
        cov = spec.noise_std**2 * ((1.0 - rho) * np.eye(m) + rho * np.ones((m, m)))
        noise = z @ np.linalg.cholesky(cov).T
    else:
        noise = np.zeros((n, m))
    names = tuple(f"s{j + 1:02d}" for j in range(m))
    return TimeSeriesPanel(start_month=spec.start_month, series_names=names, values=deterministic + noise)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a rolling evaluation run needs."""

    lag_order: int = 12
    split: SplitSpec = SplitSpec(train_len=96, valid_len=60)
    horizons: tuple[int, ...] = (1, 2, 3, 6)
    models: tuple[str, ...] = ("mimo-gpr", "mimo-mlp")
    seed: int = 0
    refit_policy: str = "fit-once"
    eval_window: range | None = None  # forecast origins; None = all feasible test origins
    gpr_restarts: int = 5
    mlp_restarts: int = 10
    ridge_grid: tuple[float, ...] = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    combiner_per_horizon: bool = False

    def __post_init__(self) -> None:
        hs = tuple(self.horizons)
        if not hs or any(h < 1 for h in hs) or list(hs) != sorted(set(hs)):
            raise ValueError(f"horizons must be positive, sorted and unique, got {hs}")
        object.__setattr__(self, "horizons", hs)
        object.__setattr__(self, "models", tuple(self.models))
        unknown = [m for m in self.models if m not in MODEL_NAMES]
        if unknown:
            raise ValueError(f"unknown model name(s) {unknown}; choose from {MODEL_NAMES}")
        if self.refit_policy not in ("fit-once", "refit-each-origin"):
            raise ValueError(f"refit_policy must be fit-once or refit-each-origin, got {self.refit_policy!r}")
        if self.lag_order < 1:
            raise ValueError(f"lag order must be >= 1, got {self.lag_order}")
        if self.split.train_len < self.lag_order + 1:
            raise ValueError(
                f"train_len {self.split.train_len} too short for lag order {self.lag_order}"
            )


@dataclass(frozen=True)
class ForecastRecord:
    """One scored forecast: issued at ``origin`` for month origin + horizon - 1.

    ``window_start``/``window_stop`` tag the panel rows whose actuals seeded
    the recursion (construction audit trail); ``target_index`` is the panel
    row being forecast.
    """

    series: str
    origin: Month
    horizon: int
    forecast: float
    actual: float
    window_start: int
    window_stop: int
    target_index: int


def recursive_forecast(forecaster: mimo.MimoForecaster, history: np.ndarray, horizon: int) -> np.ndarray:
    """Chain one-step forecasts: each step's output joins the lag history.

    Returns an (horizon, M) array; row 0 is the plain one-step forecast.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    history = np.asarray(history, dtype=np.float64)
    if history.shape[0] < forecaster.lag_order:
        raise ValueError(
            f"need at least {forecaster.lag_order} months of history, got {history.shape[0]}"
        )
    steps = np.empty((horizon, history.shape[1]))
    extended = history
    for k in range(horizon):
        steps[k] = forecaster.one_step(extended)
        extended = np.vstack([extended, steps[k]])
    return steps


@dataclass(frozen=True)
class PerHorizonCombinedForecaster:
    """Independent per-series recursion with a horizon-specific combiner at the end."""

    base: mimo.MimoForecaster  # must carry no combiner
    combiners: Mapping[int, mimo.CombinerWeights]

    @property
    def lag_order(self) -> int:
        return self.base.lag_order

    def forecast(self, history: np.ndarray, horizon: int) -> np.ndarray:
        steps = recursive_forecast(self.base, history, horizon)
        steps[horizon - 1] = mimo.combine(self.combiners[horizon], steps[horizon - 1])
        return steps


def multi_step(forecaster, history: np.ndarray, horizon: int) -> np.ndarray:
    """Multi-step forecast for either forecaster flavour."""
    if hasattr(forecaster, "forecast"):
        return forecaster.forecast(history, horizon)
    return recursive_forecast(forecaster, history, horizon)


@dataclass(frozen=True)
class FittedModelSet:
    """Per-horizon forecasters for one model name (shared objects when the
    model does not depend on the horizon)."""

    name: str
    lag_order: int
    by_horizon: Mapping[int, object]
    metadata: dict = field(default_factory=dict)

    def forecaster(self, horizon: int):
        return self.by_horizon[horizon]


def _series_dataset(series: np.ndarray, upto: int, lag_order: int):
    """Standardized lag embedding of series[:upto] plus its standardizer."""
    dataset = embed(series[:upto], lag_order)
    standardizer = fit_standardizer(dataset)
    return standardizer.apply(dataset), standardizer


def fit_gpr_models(
    panel: TimeSeriesPanel,
    lag_order: int,
    train_len: int,
    restarts: int,
    seed: int,
    warm: Sequence[gpr.GprModel] | None = None,
) -> list[gpr.GprModel]:
    """Fit one GP per series on the first ``train_len`` months.

    With ``warm`` given, each fit starts (restart 0) at the corresponding
    previous hyperparameters.
    """

    def one(s: int) -> Callable[[], gpr.GprModel]:
        def task() -> gpr.GprModel:
            z, standardizer = _series_dataset(panel.values[:, s], train_len, lag_order)
            config = gpr.FitConfig(restarts=restarts, seed=derive_seed(seed, _GPR_COMPONENT, s))
            initial = warm[s].hyperparams if warm is not None else None
            return gpr.fit(z, config, standardizer=standardizer, initial=initial)

        return task

    return _run_indexed([one(s) for s in range(panel.n_series)])


def _split_for_penalty_search(stage: mimo.FirstStageMatrix) -> tuple[mimo.FirstStageMatrix, mimo.FirstStageMatrix]:
    """Head/tail split of a first-stage matrix for penalty selection."""
    tail = max(1, stage.n_fit // 4)
    head = stage.n_fit - tail
    if head < stage.n_series + 1:  # too short to fit on the head alone
        return stage, stage
    return stage.rows(range(0, head)), stage.rows(range(head, stage.n_fit))


def _fit_combiner_for_stage(
    stage: mimo.FirstStageMatrix, ridge_grid: Sequence[float], penalty: float | None = None
) -> mimo.CombinerWeights:
    """Select a penalty on a held-out tail (unless pinned) and fit on the full stage."""
    if penalty is None:
        head, tail = _split_for_penalty_search(stage)
        penalty = mimo.select_ridge_penalty(head, tail, ridge_grid)
    return mimo.fit_combiner(stage, penalty)


def _independent_multistep_stage(
    models: Sequence[gpr.GprModel],
    panel: TimeSeriesPanel,
    target_range: range,
    lag_order: int,
    horizon: int,
) -> mimo.FirstStageMatrix:
    """h-step independent recursive forecasts for each target month in the range."""
    base = mimo.MimoForecaster(
        series_names=panel.series_names,
        lag_order=lag_order,
        first_stage=tuple(models),
        combiner=None,
    )
    if target_range.start - horizon + 1 - lag_order < 0:
        raise ValueError("target range too early for the requested horizon and lag order")
    f = np.empty((len(target_range), panel.n_series))
    for row, t in enumerate(target_range):
        origin = t - horizon + 1
        history = panel.values[origin - lag_order : origin]
        f[row] = recursive_forecast(base, history, horizon)[horizon - 1]
    return mimo.FirstStageMatrix(forecasts=f, targets=panel.values[target_range.start : target_range.stop].copy())


def _assemble_mimo_gpr(
    panel: TimeSeriesPanel,
    config: ExperimentConfig,
    models: list[gpr.GprModel],
    valid_range: range,
    pinned: dict[int, float] | float | None = None,
) -> FittedModelSet:
    """Wrap fitted GP models with combiner(s) estimated over ``valid_range``.

    ``pinned`` fixes the ridge penalty (per horizon for the per-horizon
    variant) instead of re-running the grid search; refits use it.
    """
    stage = mimo.build_first_stage(models, panel, valid_range, config.lag_order)
    if not config.combiner_per_horizon:
        penalty = pinned if isinstance(pinned, float) else None
        combiner = _fit_combiner_for_stage(stage, config.ridge_grid, penalty=penalty)
        forecaster = mimo.MimoForecaster(
            series_names=panel.series_names,
            lag_order=config.lag_order,
            first_stage=tuple(models),
            combiner=combiner,
        )
        by_horizon = {h: forecaster for h in config.horizons}
        meta = {"ridge_penalty": combiner.ridge_penalty, "gpr_models": models, "combiner": combiner}
        return FittedModelSet("mimo-gpr", config.lag_order, by_horizon, meta)

    base = mimo.MimoForecaster(
        series_names=panel.series_names,
        lag_order=config.lag_order,
        first_stage=tuple(models),
        combiner=None,
    )
    combiners: dict[int, mimo.CombinerWeights] = {}
    for h in config.horizons:
        stage_h = (
            stage
            if h == 1
            else _independent_multistep_stage(models, panel, valid_range, config.lag_order, h)
        )
        penalty = pinned.get(h) if isinstance(pinned, dict) else None
        combiners[h] = _fit_combiner_for_stage(stage_h, config.ridge_grid, penalty=penalty)
    forecaster = PerHorizonCombinedForecaster(base=base, combiners=combiners)
    by_horizon = {h: forecaster for h in config.horizons}
    meta = {"gpr_models": models, "combiners": combiners}
    return FittedModelSet("mimo-gpr", config.lag_order, by_horizon, meta)


def fit_mimo_gpr(panel: TimeSeriesPanel, config: ExperimentConfig) -> FittedModelSet:
    """GP first stage on the training months, combiner on the validation months."""
    train, valid, _ = split(panel, config.split)
    models = fit_gpr_models(panel, config.lag_order, train.stop, config.gpr_restarts, config.seed)
    return _assemble_mimo_gpr(panel, config, models, valid)


def fit_independent_gpr(
    panel: TimeSeriesPanel, config: ExperimentConfig, models: Sequence[gpr.GprModel] | None = None
) -> FittedModelSet:
    """Per-series GP baseline without the cross-series combiner."""
    train, _, _ = split(panel, config.split)
    if models is None:
        models = fit_gpr_models(panel, config.lag_order, train.stop, config.gpr_restarts, config.seed)
    forecaster = mimo.MimoForecaster(
        series_names=panel.series_names,
        lag_order=config.lag_order,
        first_stage=tuple(models),
        combiner=None,
    )
    by_horizon = {h: forecaster for h in config.horizons}
    return FittedModelSet("independent-gpr", config.lag_order, by_horizon, {"gpr_models": list(models)})


def fit_mlp_models(
    panel: TimeSeriesPanel,
    lag_order: int,
    train_len: int,
    valid_len: int,
    hidden_units: int,
    restarts: int,
    seed: int,
    horizon_tag: int,
    warm: Sequence[mlp.MlpSeriesForecaster] | None = None,
) -> list[mlp.MlpSeriesForecaster]:
    """Train one network per series; validation is the slice after the train window."""

    def one(s: int) -> Callable[[], mlp.MlpSeriesForecaster]:
        def task() -> mlp.MlpSeriesForecaster:
            series = panel.values[:, s]
            full = embed(series[: train_len + valid_len], lag_order)
            train_rows = train_len - lag_order
            train_ds = _slice_dataset(full, 0, train_rows)
            valid_ds = _slice_dataset(full, train_rows, len(full))
            standardizer = fit_standardizer(train_ds)
            config = mlp.TrainConfig(
                restarts=restarts, seed=derive_seed(seed, _MLP_COMPONENT, s, horizon_tag)
            )
            params = mlp.train_lm(
                standardizer.apply(train_ds),
                standardizer.apply(valid_ds),
                hidden_units,
                config,
                initial=warm[s].params if warm is not None else None,
            )
            return mlp.MlpSeriesForecaster(params=params, standardizer=standardizer)

        return task

    return _run_indexed([one(s) for s in range(panel.n_series)])


def _slice_dataset(dataset, start: int, stop: int):
    from .timeseries import SupervisedDataset

    return SupervisedDataset(
        inputs=dataset.inputs[start:stop],
        targets=dataset.targets[start:stop],
        lag_order=dataset.lag_order,
        origin_index=dataset.origin_index + start,
    )


def fit_mimo_mlp(panel: TimeSeriesPanel, config: ExperimentConfig) -> FittedModelSet:
    """Per-horizon network sizes, each wrapped in its own combiner."""
    train, valid, _ = split(panel, config.split)
    by_horizon: dict[int, mimo.MimoForecaster] = {}
    meta: dict = {"mlp": {}}
    for h in config.horizons:
        q = mlp.hidden_units_for_horizon(h)
        forecasters = fit_mlp_models(
            panel, config.lag_order, train.stop, len(valid), q, config.mlp_restarts, config.seed, h
        )
        stage = mimo.build_first_stage(forecasters, panel, valid, config.lag_order)
        combiner = _fit_combiner_for_stage(stage, config.ridge_grid)
        by_horizon[h] = mimo.MimoForecaster(
            series_names=panel.series_names,
            lag_order=config.lag_order,
            first_stage=tuple(forecasters),
            combiner=combiner,
        )
        meta["mlp"][h] = {"forecasters": forecasters, "combiner": combiner}
    return FittedModelSet("mimo-mlp", config.lag_order, by_horizon, meta)


def fit_model_sets(panel: TimeSeriesPanel, config: ExperimentConfig) -> dict[str, FittedModelSet]:
    """Fit every requested model, sharing the GP first stage where possible."""
    sets: dict[str, FittedModelSet] = {}
    shared_gpr: list[gpr.GprModel] | None = None
    if any(name in ("mimo-gpr", "independent-gpr") for name in config.models):
        train, valid, _ = split(panel, config.split)
        shared_gpr = fit_gpr_models(
            panel, config.lag_order, train.stop, config.gpr_restarts, config.seed
        )
    for name in config.models:
        if name == "mimo-gpr":
            sets[name] = _assemble_mimo_gpr(panel, config, shared_gpr, valid)
        elif name == "independent-gpr":
            sets[name] = fit_independent_gpr(panel, config, models=shared_gpr)
        elif name == "mimo-mlp":
            sets[name] = fit_mimo_mlp(panel, config)
    return sets


def default_eval_window(panel: TimeSeriesPanel, config: ExperimentConfig) -> range:
    """All test-segment origins whose longest-horizon target stays in the panel."""
    _, _, test = split(panel, config.split)
    max_h = max(config.horizons)
    stop = panel.n_months - max_h + 1
    window = range(test.start, stop)
    if len(window) < 1:
        raise ValueError(
            f"no feasible forecast origins: test starts at {test.start}, horizon {max_h} "
            f"needs origins before {stop}"
        )
    return window


def _check_eval_window(panel: TimeSeriesPanel, config: ExperimentConfig) -> range:
    window = config.eval_window
    if window is None:
        return default_eval_window(panel, config)
    _, _, test = split(panel, config.split)
    max_h = max(config.horizons)
    if len(window) < 1:
        raise ValueError("evaluation window is empty")
    if window.start < test.start:
        raise ValueError(
            f"evaluation window starts at row {window.start}, inside the fitting segment "
            f"(test starts at {test.start})"
        )
    if window.stop - 1 + max_h - 1 > panel.n_months - 1:
        raise ValueError(
            f"origin {window.stop - 1} at horizon {max_h} targets beyond the panel end"
        )
    return window


def _refit_sets(
    panel: TimeSeriesPanel,
    config: ExperimentConfig,
    origin: int,
    sets: dict[str, FittedModelSet],
) -> dict[str, FittedModelSet]:
    """Refit every model with data through origin-1 (training grows, the
    validation-role segment slides to the ``valid_len`` months before the origin)."""
    valid_len = config.split.valid_len
    shifted = replace(config, split=SplitSpec(train_len=origin - valid_len, valid_len=valid_len))
    new_sets: dict[str, FittedModelSet] = {}
    shared_gpr: list[gpr.GprModel] | None = None
    for name, fitted in sets.items():
        if name in ("mimo-gpr", "independent-gpr"):
            if shared_gpr is None:
                prev = fitted.metadata["gpr_models"]
                shared_gpr = fit_gpr_models(
                    panel, config.lag_order, origin - valid_len, 1, config.seed, warm=prev
                )
            if name == "mimo-gpr":
                if config.combiner_per_horizon:
                    pinned: dict[int, float] | float = {
                        h: c.ridge_penalty for h, c in fitted.metadata["combiners"].items()
                    }
                else:
                    pinned = fitted.metadata["ridge_penalty"]
                new_sets[name] = _assemble_mimo_gpr(
                    panel, config, shared_gpr, range(origin - valid_len, origin), pinned=pinned
                )
            else:
                new_sets[name] = fit_independent_gpr(panel, shifted, models=shared_gpr)
        elif name == "mimo-mlp":
            by_horizon: dict[int, mimo.MimoForecaster] = {}
            meta: dict = {"mlp": {}}
            for h in config.horizons:
                q = mlp.hidden_units_for_horizon(h)
                prev = fitted.metadata["mlp"][h]["forecasters"]
                forecasters = fit_mlp_models(
                    panel, config.lag_order, origin - valid_len, valid_len, q, 1,
                    config.seed, h, warm=prev,
                )
                stage = mimo.build_first_stage(
                    forecasters, panel, range(origin - valid_len, origin), config.lag_order
                )
                penalty = fitted.metadata["mlp"][h]["combiner"].ridge_penalty
                combiner = _fit_combiner_for_stage(stage, config.ridge_grid, penalty=penalty)
                by_horizon[h] = mimo.MimoForecaster(
                    series_names=panel.series_names,
                    lag_order=config.lag_order,
                    first_stage=tuple(forecasters),
                    combiner=combiner,
                )
                meta["mlp"][h] = {"forecasters": forecasters, "combiner": combiner}
            new_sets[name] = FittedModelSet(name, config.lag_order, by_horizon, meta)
    return new_sets


def rolling_evaluate(
    panel: TimeSeriesPanel, config: ExperimentConfig
) -> dict[str, list[ForecastRecord]]:
    """Score every requested model over a window of rolling forecast origins.

    At each origin t the lag history holds actuals for rows [t - p, t) only;
    later months are reached by chaining the model's own forecasts. Under
    ``refit-each-origin`` the pipelines are refitted as the origin advances
    (warm-started, training window growing); the first origin always uses the
    initial fit, so both policies coincide there. Records are sorted by
    (series, origin, horizon) per model.
    """
    window = _check_eval_window(panel, config)
    p = config.lag_order
    sets = fit_model_sets(panel, config)
    records: dict[str, list[ForecastRecord]] = {name: [] for name in config.models}

    current = sets
    for origin in window:
        if config.refit_policy == "refit-each-origin" and origin != window.start:
            current = _refit_sets(panel, config, origin, current)
        history = panel.values[origin - p : origin]
        for name in config.models:
            fitted = current[name]
            for h in config.horizons:
                steps = multi_step(fitted.forecaster(h), history, h)
                target = origin + h - 1
                for s, series_name in enumerate(panel.series_names):
                    records[name].append(
                        ForecastRecord(
                            series=series_name,
                            origin=panel.month_at(origin),
                            horizon=h,
                            forecast=float(steps[h - 1, s]),
                            actual=float(panel.values[target, s]),
                            window_start=origin - p,
                            window_stop=origin,
                            target_index=target,
                        )
                    )

    for name in records:
        records[name].sort(key=lambda r: (r.series, (r.origin.year, r.origin.month), r.horizon))
    return records


def records_to_csv(records: Mapping[str, list[ForecastRecord]]) -> str:
    """Flatten per-model records to CSV (model,series,origin,h,forecast,actual)."""
    lines = ["model,series,origin,h,forecast,actual"]
    for name in sorted(records):
        for r in records[name]:
            lines.append(f"{name},{r.series},{r.origin},{r.horizon},{r.forecast!r},{r.actual!r}")
    return "\n".join(lines) + "\n"


def audit_information_hygiene(
    records: Mapping[str, list[ForecastRecord]], panel: TimeSeriesPanel
) -> list[str]:
    """Exhaustive index audit of every record's lag window; returns violations."""
    problems: list[str] = []
    for name, recs in records.items():
        for r in recs:
            origin_index = panel.index_of(r.origin)
            if r.window_stop > origin_index:
                problems.append(f"{name}/{r.series}@{r.origin}/h{r.horizon}: window reaches row {r.window_stop}")
            if r.target_index != origin_index + r.horizon - 1:
                problems.append(f"{name}/{r.series}@{r.origin}/h{r.horizon}: target row {r.target_index} misaligned")
            if r.window_start <= r.target_index < r.window_stop:
                problems.append(f"{name}/{r.series}@{r.origin}/h{r.horizon}: lag window contains the target month")
            if not math.isfinite(r.forecast):
                problems.append(f"{name}/{r.series}@{r.origin}/h{r.horizon}: non-finite forecast")
    return problems
