"""Series loading, min-max normalization and context/suspect windowing."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed input file or inconsistent series."""


@dataclass
class TimeSeries:
    """``values`` is ``(N, T)``: one row per channel, one column per tick."""

    values: np.ndarray
    labels: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[None, :]
        if self.values.ndim != 2 or self.values.size == 0:
            raise DataError(f"values must be a nonempty N x T matrix, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataError("values contain NaN or Inf")
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (self.ticks,):
                raise DataError(f"labels length {labels.shape} != T={self.ticks}")
            if not np.isin(labels, (0, 1)).all():
                raise DataError("labels must be 0/1")
            self.labels = labels.astype(np.int64)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def ticks(self) -> int:
        return self.values.shape[1]


def load_csv(path, has_labels: bool = False) -> TimeSeries:
    """Read a header-first CSV with one tick per row.

    When ``has_labels`` is set the final column must be named ``label`` and
    hold 0/1 integers.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file (header row required)")
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if has_labels and (not header or header[-1] != "label"):
        raise DataError(f"{path}: expected a final 'label' column, header is {header}")
    n_cols = len(header)
    n_channels = n_cols - 1 if has_labels else n_cols
    if n_channels < 1:
        raise DataError(f"{path}: no channel columns")
    if not body:
        raise DataError(f"{path}: no data rows")
    values = np.empty((len(body), n_channels))
    labels = np.empty(len(body), dtype=np.int64) if has_labels else None
    for r, row in enumerate(body, start=2):
        if len(row) != n_cols or any(cell.strip() == "" for cell in row):
            raise DataError(f"{path}: row {r} has {sum(bool(c.strip()) for c in row)} of {n_cols} cells")
        try:
            values[r - 2] = [float(cell) for cell in row[:n_channels]]
        except ValueError as exc:
            raise DataError(f"{path}: row {r}: non-numeric cell ({exc})") from None
        if has_labels:
            cell = row[-1].strip()
            if cell not in ("0", "1"):
                raise DataError(f"{path}: row {r}: label {cell!r} is not 0 or 1")
            labels[r - 2] = int(cell)
    if not np.isfinite(values).all():
        raise DataError(f"{path}: non-finite value")
    return TimeSeries(values.T.copy(), labels, header[:n_channels])


def save_csv(series: TimeSeries, path, with_labels: bool | None = None) -> None:
    """Write ``series`` in the format :func:`load_csv` reads."""
    if with_labels is None:
        with_labels = series.labels is not None
    names = series.names or [f"ch{i}" for i in range(series.channels)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(names) + (["label"] if with_labels else []))
        for t in range(series.ticks):
            row = [repr(float(v)) for v in series.values[:, t]]
            if with_labels:
                row.append(str(int(series.labels[t])))
            writer.writerow(row)


@dataclass(frozen=True)
class NormalizationStats:
    minimum: np.ndarray
    maximum: np.ndarray


def fit_normalizer(train: TimeSeries) -> NormalizationStats:
    return NormalizationStats(train.values.min(axis=1), train.values.max(axis=1))


def apply_normalizer(stats: NormalizationStats, series: TimeSeries) -> TimeSeries:
    """Map each channel by ``(x - min) / (max - min)`` with train statistics.

    Test values are not clipped.  Degenerate channels (max == min) become 0.
    """
    if series.channels != stats.minimum.shape[0]:
        raise DataError(f"series has {series.channels} channels, stats have {stats.minimum.shape[0]}")
    span = stats.maximum - stats.minimum
    degenerate = span == 0
    scaled = (series.values - stats.minimum[:, None]) / np.where(degenerate, 1.0, span)[:, None]
    scaled[degenerate] = 0.0
    return TimeSeries(scaled, series.labels, series.names)


@dataclass(frozen=True)
class WindowSpec:
    """Full window ``w``, suspect offset ``p``; both sub-sequences have ``c = w - p`` ticks."""

    window_length: int = 30
    suspect_offset: int = 5
    stride: int = 1

    def __post_init__(self):
        if not 1 <= self.suspect_offset < self.window_length:
            raise ValueError(
                f"need 1 <= suspect_offset < window_length, got p={self.suspect_offset}, w={self.window_length}"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def sub_length(self) -> int:
        return self.window_length - self.suspect_offset


@dataclass(frozen=True)
class WindowSample:
    end_tick: int
    context: np.ndarray  # N x c, ticks [t-w+1, t-p]
    suspect: np.ndarray  # N x c, ticks [t-c+1, t]


@dataclass
class WindowBatch:
    """All windows of a series as stacked arrays ``(n, N, c)``."""

    end_ticks: np.ndarray
    context: np.ndarray
    suspect: np.ndarray

    def __len__(self) -> int:
        return len(self.end_ticks)

    def __getitem__(self, i) -> WindowSample | "WindowBatch":
        if isinstance(i, (int, np.integer)):
            return WindowSample(int(self.end_ticks[i]), self.context[i], self.suspect[i])
        return WindowBatch(self.end_ticks[i], self.context[i], self.suspect[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def make_windows(series: TimeSeries, spec: WindowSpec) -> WindowBatch:
    w, p, c = spec.window_length, spec.suspect_offset, spec.sub_length
    T = series.ticks
    if T < w:
        raise DataError(f"series has T={T} ticks, shorter than window length {w}")
    ends = np.arange(w - 1, T, spec.stride)
    view = np.lib.stride_tricks.sliding_window_view(series.values, c, axis=1)  # N x (T-c+1) x c
    # window starting at tick s covers [s, s+c-1]
    context = view[:, ends - w + 1, :].transpose(1, 0, 2).copy()
    suspect = view[:, ends - c + 1, :].transpose(1, 0, 2).copy()
    return WindowBatch(ends, context, suspect)
