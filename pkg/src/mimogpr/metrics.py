"""Forecast-accuracy statistics: MAPE, relative MAPE, the Diebold-Mariano
test with a Newey-West long-run variance, its small-sample correction, and
the share of periods with lower absolute error.

Conventions: errors are e_t = y_t - yhat_t; the DM statistic is negative when
the first (candidate) model's losses are smaller; ties in the
lower-absolute-error share count as zero (strict inequality).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .exceptions import DegenerateDataError
from .harness import ForecastRecord

# Conventional two-sided 5% reference value printed next to the exact
# Student-t quantile in comparison tables.
REFERENCE_DM_CRITICAL = 2.028


@dataclass(frozen=True)
class ErrorSeries:
    """Forecast errors with the actuals retained for percentage denominators."""

    errors: np.ndarray
    actuals: np.ndarray
    horizon: int

    def __post_init__(self) -> None:
        e = np.asarray(self.errors, dtype=np.float64)
        a = np.asarray(self.actuals, dtype=np.float64)
        object.__setattr__(self, "errors", e)
        object.__setattr__(self, "actuals", a)
        if e.ndim != 1 or e.shape != a.shape or len(e) < 1:
            raise ValueError(f"errors {e.shape} and actuals {a.shape} must be matching nonempty vectors")
        if not (np.all(np.isfinite(e)) and np.all(np.isfinite(a))):
            raise ValueError("errors and actuals must be finite")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")

    def __len__(self) -> int:
        return len(self.errors)


def error_series_from_records(records: Sequence[ForecastRecord], horizon: int) -> ErrorSeries:
    """Collect e_t = actual - forecast for one horizon, ordered by origin."""
    picked = sorted(
        (r for r in records if r.horizon == horizon),
        key=lambda r: (r.origin.year, r.origin.month),
    )
    if not picked:
        raise ValueError(f"no records at horizon {horizon}")
    return ErrorSeries(
        errors=np.array([r.actual - r.forecast for r in picked]),
        actuals=np.array([r.actual for r in picked]),
        horizon=horizon,
    )


def mape(es: ErrorSeries) -> float:
    """Mean absolute percentage error, in percent."""
    if np.any(es.actuals == 0):
        raise ValueError("zero actual encountered; percentage error undefined")
    return float(100.0 * np.mean(np.abs(es.errors / es.actuals)))


def rmape(candidate: ErrorSeries, benchmark: ErrorSeries) -> float:
    """Candidate-to-benchmark MAPE ratio; below 1 favours the candidate."""
    if len(candidate) != len(benchmark) or candidate.horizon != benchmark.horizon:
        raise ValueError("error series must cover the same periods and horizon")
    benchmark_mape = mape(benchmark)
    if benchmark_mape == 0:
        raise ValueError("benchmark MAPE is zero; the ratio is undefined")
    return mape(candidate) / benchmark_mape


def _losses(es: ErrorSeries, loss: str) -> np.ndarray:
    if loss == "absolute":
        return np.abs(es.errors)
    if loss == "squared":
        return es.errors**2
    raise ValueError(f"loss must be 'absolute' or 'squared', got {loss!r}")


def dm_test(e_a: ErrorSeries, e_b: ErrorSeries, horizon: int, loss: str = "absolute") -> float:
    """Equal-predictive-accuracy statistic on the loss differential.

    d_t = L(e_A,t) - L(e_B,t); the long-run variance uses Bartlett weights
    with truncation lag horizon - 1 and the 1/n autocovariance divisor:
    V = g_0 + 2 sum_{k<h} (1 - k/h) g_k, and the statistic is
    dbar / sqrt(V / n). Negative values mean the first model's losses are
    smaller.
    """
    if len(e_a) != len(e_b):
        raise ValueError("error series must have equal length")
    n = len(e_a)
    if n < 2:
        raise ValueError(f"need at least 2 periods, got {n}")
    d = _losses(e_a, loss) - _losses(e_b, loss)
    d_bar = float(np.mean(d))
    centered = d - d_bar
    variance = float(centered @ centered) / n
    for k in range(1, horizon):
        gamma_k = float(centered[k:] @ centered[:-k]) / n
        variance += 2.0 * (1.0 - k / horizon) * gamma_k
    if variance <= 0:
        raise DegenerateDataError("identical losses - test undefined (zero long-run variance)")
    return d_bar / np.sqrt(variance / n)


def mdm_factor(n: int, horizon: int) -> float:
    """Small-sample correction factor sqrt((n + 1 - 2h + h(h-1)/n) / n)."""
    if n <= horizon:
        raise ValueError(f"need more periods than the horizon, got n={n}, h={horizon}")
    return float(np.sqrt((n + 1 - 2 * horizon + horizon * (horizon - 1) / n) / n))


def mdm_test(dm_stat: float, n: int, horizon: int) -> float:
    """Small-sample corrected DM statistic, referred to Student-t with n-1 df."""
    return dm_stat * mdm_factor(n, horizon)


def plae(e_a: ErrorSeries, e_b: ErrorSeries) -> float:
    """Percentage of periods where |e_A| is strictly below |e_B| (ties score 0)."""
    if len(e_a) != len(e_b):
        raise ValueError("error series must have equal length")
    wins = np.abs(e_a.errors) < np.abs(e_b.errors)
    return float(100.0 * np.mean(wins))


def t_critical(n: int, level: float = 0.05) -> float:
    """Two-sided Student-t critical value with n - 1 degrees of freedom."""
    if n < 2:
        raise ValueError(f"need at least 2 periods, got {n}")
    return float(stats.t.ppf(1.0 - level / 2.0, df=n - 1))


@dataclass(frozen=True)
class ComparisonResult:
    """Candidate-vs-benchmark statistics over one (series, horizon) cell.

    ``dm_stat``/``mdm_stat`` are None when the loss differential has zero
    variance (identical losses). ``critical_value`` is the conventional
    reference printed in tables; ``exact_t_critical`` is the Student-t(n-1)
    5% two-sided quantile for the actual sample size.
    """

    rmape: float
    dm_stat: float | None
    mdm_stat: float | None
    plae_pct: float
    n: int
    critical_value: float = REFERENCE_DM_CRITICAL
    exact_t_critical: float = float("nan")


def compare(candidate: ErrorSeries, benchmark: ErrorSeries, loss: str = "absolute") -> ComparisonResult:
    """All comparison statistics for one aligned pair of error series."""
    if len(candidate) != len(benchmark) or candidate.horizon != benchmark.horizon:
        raise ValueError("error series must cover the same periods and horizon")
    try:
        dm = dm_test(candidate, benchmark, candidate.horizon, loss)
        mdm = mdm_test(dm, len(candidate), candidate.horizon)
    except DegenerateDataError:
        dm = None
        mdm = None
    return ComparisonResult(
        rmape=rmape(candidate, benchmark),
        dm_stat=dm,
        mdm_stat=mdm,
        plae_pct=plae(candidate, benchmark),
        n=len(candidate),
        exact_t_critical=t_critical(len(candidate)),
    )


@dataclass(frozen=True)
class EvaluationReport:
    """Per-series, per-horizon comparison grid for one candidate/benchmark pair."""

    candidate: str
    benchmark: str
    series_names: tuple[str, ...]
    horizons: tuple[int, ...]
    cells: Mapping[str, Mapping[int, ComparisonResult]]


def build_report(
    candidate_name: str,
    benchmark_name: str,
    candidate_records: Sequence[ForecastRecord],
    benchmark_records: Sequence[ForecastRecord],
    loss: str = "absolute",
) -> EvaluationReport:
    """Assemble the comparison grid from two record sets of one evaluation run."""
    series_names = tuple(sorted({r.series for r in candidate_records}))
    horizons = tuple(sorted({r.horizon for r in candidate_records}))
    cells: dict[str, dict[int, ComparisonResult]] = {}
    for name in series_names:
        cand_series = [r for r in candidate_records if r.series == name]
        bench_series = [r for r in benchmark_records if r.series == name]
        cells[name] = {}
        for h in horizons:
            cand = error_series_from_records(cand_series, h)
            bench = error_series_from_records(bench_series, h)
            cells[name][h] = compare(cand, bench, loss)
    return EvaluationReport(
        candidate=candidate_name,
        benchmark=benchmark_name,
        series_names=series_names,
        horizons=horizons,
        cells=cells,
    )


def _fmt(value: float | None, digits: int = 3) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def accuracy_table_csv(report: EvaluationReport) -> str:
    """Comparison grid as CSV: one rMAPE/DM/M-DM row block per series."""
    lines = ["series,statistic," + ",".join(f"h={h}" for h in report.horizons)]
    for name in report.series_names:
        row = report.cells[name]
        lines.append(f"{name},rMAPE," + ",".join(_fmt(row[h].rmape) for h in report.horizons))
        lines.append(f"{name},DM," + ",".join(_fmt(row[h].dm_stat) for h in report.horizons))
        lines.append(f"{name},M-DM," + ",".join(_fmt(row[h].mdm_stat) for h in report.horizons))
    return "\n".join(lines) + "\n"


def plae_table_csv(report: EvaluationReport) -> str:
    """Lower-absolute-error share grid as CSV, one decimal."""
    lines = ["series," + ",".join(f"h={h}" for h in report.horizons)]
    for name in report.series_names:
        row = report.cells[name]
        lines.append(f"{name}," + ",".join(f"{row[h].plae_pct:.1f}" for h in report.horizons))
    return "\n".join(lines) + "\n"


def markdown_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    fmt_row = lambda cells: "| " + " | ".join(c.ljust(widths[i]) for i, c in enumerate(cells)) + " |"
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([fmt_row(header), sep, *(fmt_row(r) for r in rows)]) + "\n"


def accuracy_table_markdown(report: EvaluationReport) -> str:
    """Markdown twin of the accuracy grid, with a critical-value footnote."""
    header = ["Series", "Statistic", *(f"h = {h}" for h in report.horizons)]
    rows = []
    for name in report.series_names:
        row = report.cells[name]
        rows.append([name, "rMAPE", *(_fmt(row[h].rmape) for h in report.horizons)])
        rows.append(["", "DM", *(_fmt(row[h].dm_stat) or "-" for h in report.horizons)])
        rows.append(["", "M-DM", *(_fmt(row[h].mdm_stat) or "-" for h in report.horizons)])
    any_cell = next(iter(report.cells.values()))[report.horizons[0]]
    note = (
        f"\nrMAPE below 1 favours {report.candidate} over {report.benchmark}; a negative DM sign "
        f"means {report.benchmark} has the bigger errors. Reference 5% critical value "
        f"{any_cell.critical_value}; exact Student-t(n-1) value {any_cell.exact_t_critical:.3f} "
        f"for n = {any_cell.n}.\n"
    )
    title = f"Forecast accuracy: {report.candidate} vs. {report.benchmark}\n\n"
    return title + markdown_table(header, rows) + note


def plae_table_markdown(report: EvaluationReport) -> str:
    """Markdown twin of the lower-absolute-error share grid."""
    header = ["Series", *(f"h = {h}" for h in report.horizons)]
    rows = [
        [name, *(f"{report.cells[name][h].plae_pct:.1f}" for h in report.horizons)]
        for name in report.series_names
    ]
    title = (
        f"Share of periods with lower absolute error: {report.candidate} "
        f"with respect to {report.benchmark}\n\n"
    )
    return title + markdown_table(header, rows)
