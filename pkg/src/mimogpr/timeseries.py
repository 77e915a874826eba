"""Monthly panel handling: ingestion, descriptive statistics, lag embedding,
chronological splitting and per-series standardization.

A panel is a date-indexed matrix of M monthly series with no gaps and no
missing cells. All types are immutable after construction and all operations
are pure, so values can be shared freely across threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DegenerateDataError, PanelFormatError


@dataclass(frozen=True, order=True)
class Month:
    """A calendar month, serialized as YYYY-MM."""

    year: int
    month: int

    def __post_init__(self) -> None:
        if not 1 <= self.month <= 12:
            raise ValueError(f"month out of range: {self.month}")

    @classmethod
    def parse(cls, text: str) -> "Month":
        parts = text.strip().split("-")
        if len(parts) != 2 or len(parts[0]) != 4:
            raise ValueError(f"expected YYYY-MM, got {text!r}")
        return cls(int(parts[0]), int(parts[1]))

    def shift(self, k: int) -> "Month":
        total = self.year * 12 + (self.month - 1) + k
        return Month(total // 12, total % 12 + 1)

    def offset_from(self, other: "Month") -> int:
        return (self.year - other.year) * 12 + (self.month - other.month)

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeriesPanel:
    """n consecutive monthly observations of M named series."""

    start_month: Month
    series_names: tuple[str, ...]
    values: np.ndarray  # (n, M)

    def __post_init__(self) -> None:
        object.__setattr__(self, "series_names", tuple(self.series_names))
        object.__setattr__(self, "values", _readonly(self.values))
        v = self.values
        if v.ndim != 2:
            raise ValueError(f"values must be a 2-d matrix, got shape {v.shape}")
        n, m = v.shape
        if n < 2 or m < 1:
            raise ValueError(f"panel needs n >= 2 rows and M >= 1 series, got {n}x{m}")
        if m != len(self.series_names):
            raise ValueError(f"{len(self.series_names)} names for {m} value columns")
        if any(not name for name in self.series_names):
            raise ValueError("series names must be nonempty")
        if len(set(self.series_names)) != m:
            raise ValueError("series names must be unique")
        if not np.all(np.isfinite(v)):
            i, j = np.argwhere(~np.isfinite(v))[0]
            raise ValueError(f"non-finite value for series {self.series_names[j]!r} at month {self.month_at(int(i))}")

    @property
    def n_months(self) -> int:
        return self.values.shape[0]

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    def month_at(self, i: int) -> Month:
        return self.start_month.shift(i)

    def index_of(self, month: Month) -> int:
        i = month.offset_from(self.start_month)
        if not 0 <= i < self.n_months:
            raise ValueError(f"month {month} outside panel range {self.start_month}..{self.month_at(self.n_months - 1)}")
        return i

    def series(self, name: str) -> np.ndarray:
        return self.values[:, self.series_names.index(name)]


@dataclass(frozen=True)
class SupervisedDataset:
    """Lag-embedded (inputs, targets) pairs for one series.

    Row i of ``inputs`` is the lag window of target i ordered most recent
    first: inputs[i] = [y_{t-1}, ..., y_{t-p}] for target y_t.
    ``origin_index`` is the position of the first target in the source series.
    """

    inputs: np.ndarray  # (N, p)
    targets: np.ndarray  # (N,)
    lag_order: int
    origin_index: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", _readonly(self.inputs))
        object.__setattr__(self, "targets", _readonly(self.targets))
        if self.inputs.ndim != 2 or self.targets.ndim != 1:
            raise ValueError("inputs must be 2-d and targets 1-d")
        if self.inputs.shape != (len(self.targets), self.lag_order):
            raise ValueError(
                f"inputs shape {self.inputs.shape} inconsistent with "
                f"{len(self.targets)} targets and lag order {self.lag_order}"
            )

    def __len__(self) -> int:
        return len(self.targets)


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation split; the test segment is the remainder."""

    train_len: int
    valid_len: int

    def __post_init__(self) -> None:
        if self.train_len < 2:
            raise ValueError(f"train_len must be at least 2, got {self.train_len}")
        if self.valid_len < 1:
            raise ValueError(f"valid_len must be at least 1, got {self.valid_len}")


def load_panel(path: str | Path) -> TimeSeriesPanel:
    """Read a panel from CSV: header ``date,<name1>,...``, one row per month.

    Dates are YYYY-MM and must be consecutive; every cell must parse as a
    finite number. Violations raise PanelFormatError with the offending
    row/column location.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError(f"{path}: empty file") from None
        if len(header) < 2 or header[0].strip().lower() != "date":
            raise PanelFormatError(f"{path}: header must be 'date,<name1>,...', got {header!r}")
        names = tuple(h.strip() for h in header[1:])

        months: list[Month] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise PanelFormatError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                month = Month.parse(row[0])
            except ValueError as exc:
                raise PanelFormatError(f"{path}: row {lineno}: bad date: {exc}") from None
            if months:
                expected = months[-1].shift(1)
                if month == months[-1]:
                    raise PanelFormatError(f"{path}: row {lineno}: duplicate month {month}")
                if month != expected:
                    raise PanelFormatError(
                        f"{path}: row {lineno}: gap in monthly sequence ({months[-1]} followed by {month})"
                    )
            months.append(month)
            parsed = []
            for col, cell in enumerate(row[1:]):
                try:
                    value = float(cell)
                except ValueError:
                    raise PanelFormatError(
                        f"{path}: row {lineno}, column {names[col]!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise PanelFormatError(f"{path}: row {lineno}, column {names[col]!r}: non-finite value {cell!r}")
                parsed.append(value)
            rows.append(parsed)

    if not rows:
        raise PanelFormatError(f"{path}: no data rows")
    if len(rows) < 2:
        raise PanelFormatError(f"{path}: a panel needs at least 2 monthly rows, got {len(rows)}")
    return TimeSeriesPanel(start_month=months[0], series_names=names, values=np.array(rows))


def save_panel(panel: TimeSeriesPanel, path: str | Path) -> None:
    """Write a panel as CSV; values round-trip exactly through load_panel."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *panel.series_names])
        for i in range(panel.n_months):
            writer.writerow([str(panel.month_at(i)), *(repr(float(v)) for v in panel.values[i])])


@dataclass(frozen=True)
class SeriesStats:
    name: str
    minimum: float
    maximum: float
    mean: float
    std: float
    skewness: float
    kurtosis: float  # excess


def describe_series(values: np.ndarray, name: str = "") -> SeriesStats:
    """Sample moments of one series: min/max/mean, n-1 std, moment-ratio
    skewness and excess kurtosis (central moments with the 1/n divisor)."""
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if n < 4:
        raise ValueError(f"series {name!r}: need at least 4 observations to describe, got {n}")
    mean = float(np.mean(x))
    centered = x - mean
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        raise DegenerateDataError(f"series {name!r}: zero variance, moment ratios undefined")
    m3 = float(np.mean(centered**3))
    m4 = float(np.mean(centered**4))
    return SeriesStats(
        name=name,
        minimum=float(np.min(x)),
        maximum=float(np.max(x)),
        mean=mean,
        std=float(np.std(x, ddof=1)),
        skewness=m3 / m2**1.5,
        kurtosis=m4 / m2**2 - 3.0,
    )


def describe_panel(panel: TimeSeriesPanel, rows: range | None = None) -> list[SeriesStats]:
    """Describe every series of the panel, optionally over a row window."""
    window = panel.values if rows is None else panel.values[rows.start : rows.stop]
    if window.shape[0] < 4:
        raise ValueError(f"window of {window.shape[0]} months is too short to describe (need 4)")
    return [describe_series(window[:, j], panel.series_names[j]) for j in range(panel.n_series)]


def embed(series: np.ndarray, lag_order: int) -> SupervisedDataset:
    """Lag-embed a series: N = n - p rows of [y_{t-1}, ..., y_{t-p}] -> y_t."""
    y = np.asarray(series, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("series must be 1-d")
    p = int(lag_order)
    if p < 1:
        raise ValueError(f"lag order must be positive, got {p}")
    n = len(y)
    if n <= p:
        raise ValueError(f"series of length {n} cannot be embedded with {p} lags")
    count = n - p
    inputs = np.empty((count, p))
    for lag in range(1, p + 1):
        inputs[:, lag - 1] = y[p - lag : n - lag]
    return SupervisedDataset(inputs=inputs, targets=y[p:], lag_order=p, origin_index=p)


def split(panel: TimeSeriesPanel, spec: SplitSpec) -> tuple[range, range, range]:
    """Partition [0, n) into chronological (train, validation, test) row ranges."""
    n = panel.n_months
    if spec.train_len + spec.valid_len >= n:
        raise ValueError(
            f"split {spec.train_len}+{spec.valid_len} leaves no test months in a panel of {n}"
        )
    t, v = spec.train_len, spec.valid_len
    return range(0, t), range(t, t + v), range(t + v, n)


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine map to zero mean / unit sample std, plus the target map."""

    means: np.ndarray  # (p,)
    scales: np.ndarray  # (p,)
    target_mean: float
    target_scale: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "means", _readonly(self.means))
        object.__setattr__(self, "scales", _readonly(self.scales))
        if np.any(self.scales <= 0) or self.target_scale <= 0:
            raise ValueError("all scales must be positive")

    def apply_inputs(self, inputs: np.ndarray) -> np.ndarray:
        return (np.asarray(inputs, dtype=np.float64) - self.means) / self.scales

    def invert_inputs(self, inputs: np.ndarray) -> np.ndarray:
        return np.asarray(inputs, dtype=np.float64) * self.scales + self.means

    def apply_target(self, targets: np.ndarray | float):
        return (np.asarray(targets, dtype=np.float64) - self.target_mean) / self.target_scale

    def invert_target(self, targets: np.ndarray | float):
        return np.asarray(targets, dtype=np.float64) * self.target_scale + self.target_mean

    def apply(self, dataset: SupervisedDataset) -> SupervisedDataset:
        return SupervisedDataset(
            inputs=self.apply_inputs(dataset.inputs),
            targets=self.apply_target(dataset.targets),
            lag_order=dataset.lag_order,
            origin_index=dataset.origin_index,
        )

    def invert(self, dataset: SupervisedDataset) -> SupervisedDataset:
        return SupervisedDataset(
            inputs=self.invert_inputs(dataset.inputs),
            targets=self.invert_target(dataset.targets),
            lag_order=dataset.lag_order,
            origin_index=dataset.origin_index,
        )


def fit_standardizer(dataset: SupervisedDataset) -> Standardizer:
    """Fit per-column standardization; rejects constant columns and targets."""
    scales = np.std(dataset.inputs, axis=0, ddof=1)
    zero = np.nonzero(scales == 0)[0]
    if zero.size:
        raise DegenerateDataError(f"input column {int(zero[0])} is constant over the fit range")
    target_scale = float(np.std(dataset.targets, ddof=1))
    if target_scale == 0:
        raise DegenerateDataError("target is constant over the fit range")
    return Standardizer(
        means=np.mean(dataset.inputs, axis=0),
        scales=scales,
        target_mean=float(np.mean(dataset.targets)),
        target_scale=target_scale,
    )


def identity_standardizer(lag_order: int) -> Standardizer:
    """A no-op standardizer (used when data is already on a sensible scale)."""
    return Standardizer(
        means=np.zeros(lag_order), scales=np.ones(lag_order), target_mean=0.0, target_scale=1.0
    )
