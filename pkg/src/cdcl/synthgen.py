"""Univariate sine-wave series with injected, labeled anomalies.

The train segment is clean.  The test segment continues the same wave and
receives ``ceil(ratio * test_length)`` anomalous ticks spread over five
anomaly types according to ``weights``.  Every injector returns the modified
series and a mask of exactly the ticks it changed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import TimeSeries

ANOMALY_TYPES = ("global_point", "contextual_point", "shapelet", "seasonal", "trend")
POINT_TYPES = ("global_point", "contextual_point")

DEFAULT_WEIGHTS = {"global_point": 0.5, "contextual_point": 0.5, "shapelet": 0.0, "seasonal": 0.0, "trend": 0.0}


@dataclass(frozen=True)
class SynthSpec:
    train_length: int = 2000
    test_length: int = 1000
    period: float = 50.0
    amplitude: float = 1.0
    noise_std: float = 0.05
    anomaly_ratio: float = 0.0274
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    interval_length: int = 20
    min_gap: int = 15
    edge_margin: int = 50
    global_magnitude: tuple[float, float] = (0.3, 0.8)
    contextual_fraction: tuple[float, float] = (0.7, 0.95)
    seasonal_factors: tuple[float, ...] = (0.5, 2.0)
    trend_total: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.train_length < 1 or self.test_length < 1:
            raise ValueError("train_length and test_length must be positive")
        if not self.period > 0:
            raise ValueError(f"period: must be > 0, got {self.period}")
        if not 0 <= self.anomaly_ratio < 1:
            raise ValueError(f"anomaly_ratio: must be in [0, 1), got {self.anomaly_ratio}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        unknown = set(self.weights) - set(ANOMALY_TYPES)
        if unknown:
            raise ValueError(f"unknown anomaly types: {sorted(unknown)}")
        w = [self.weights.get(t, 0.0) for t in ANOMALY_TYPES]
        if min(w) < 0 or (self.anomaly_ratio > 0 and sum(w) == 0):
            raise ValueError("weights must be nonnegative with a positive total")
        if self.interval_length < 1 or self.min_gap < 0 or self.edge_margin < 0:
            raise ValueError("interval_length >= 1, min_gap >= 0, edge_margin >= 0 required")
        if any(f <= 0 or f == 1 for f in self.seasonal_factors):
            raise ValueError("seasonal factors must be positive and != 1")

    @property
    def n_anomalous(self) -> int:
        # round first so 0.0274 * 1000 does not ceil past 28 on float noise
        return math.ceil(round(self.anomaly_ratio * self.test_length, 9))


def sine_base(ticks: np.ndarray, period: float, amplitude: float) -> np.ndarray:
    return amplitude * np.sin(2 * np.pi * ticks / period)


# -- injectors ----------------------------------------------------------------


def _check_interval(series: np.ndarray, start: int, length: int) -> None:
    if length < 1 or start < 0 or start + length > len(series):
        raise ValueError(f"interval [{start}, {start + length}) outside series of length {len(series)}")


def inject_global_point(series, position: int, magnitude: float, direction: int, value_range=None):
    """Push one tick ``magnitude * span / 2`` beyond the global range of ``series``."""
    s = np.array(series, dtype=np.float64)
    _check_interval(s, position, 1)
    if magnitude <= 0 or direction not in (-1, 1):
        raise ValueError("global point needs magnitude > 0 and direction +-1")
    lo, hi = value_range if value_range is not None else (s.min(), s.max())
    excess = magnitude * (hi - lo) / 2
    s[position] = hi + excess if direction > 0 else lo - excess
    mask = np.zeros(len(s), dtype=np.int64)
    mask[position] = 1
    return s, mask


def local_stats(series, position: int, half_width: int) -> tuple[float, float]:
    """Mean and std of the neighbours within ``half_width`` ticks (the tick itself excluded)."""
    s = np.asarray(series)
    lo, hi = max(0, position - half_width), min(len(s), position + half_width + 1)
    neigh = np.concatenate([s[lo:position], s[position + 1 : hi]])
    return float(neigh.mean()), float(neigh.std())


def contextual_target(series, position: int, fraction: float, half_width: int, value_range=None) -> float:
    """In-range value far from the local level: toward the roomier side of the global range."""
    s = np.asarray(series)
    lo, hi = value_range if value_range is not None else (s.min(), s.max())
    mu, _ = local_stats(s, position, half_width)
    up, down = hi - mu, mu - lo
    return mu + fraction * up if up >= down else mu - fraction * down


def inject_contextual_point(series, position: int, fraction: float, half_width: int, value_range=None):
    """Set one tick inside the global range but >= 3 local stds from the local mean."""
    s = np.array(series, dtype=np.float64)
    _check_interval(s, position, 1)
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    lo, hi = value_range if value_range is not None else (s.min(), s.max())
    mu, sd = local_stats(s, position, half_width)
    value = contextual_target(s, position, fraction, half_width, (lo, hi))
    if abs(value - mu) < 3 * sd:
        raise ValueError(f"tick {position}: local spread too large for a contextual point")
    s[position] = value
    mask = np.zeros(len(s), dtype=np.int64)
    mask[position] = 1
    return s, mask


def inject_shapelet(series, start: int, length: int, amplitude: float):
    """Replace an interval by a square pulse (+amplitude then -amplitude) around its mean."""
    s = np.array(series, dtype=np.float64)
    _check_interval(s, start, length)
    if amplitude <= 0:
        raise ValueError("shapelet amplitude must be > 0")
    level = s[start : start + length].mean()
    pulse = np.where(np.arange(length) < (length + 1) // 2, amplitude, -amplitude)
    s[start : start + length] = level + pulse
    mask = np.zeros(len(s), dtype=np.int64)
    mask[start : start + length] = 1
    return s, mask


def inject_seasonal(series, start: int, length: int, factor: float, period: float, amplitude: float, tick0: int = 0):
    """Re-render an interval with the wave's period divided by ``factor`` (noise kept).

    ``tick0`` is the absolute tick of ``series[0]`` so the phase at ``start`` is preserved.
    """
    s = np.array(series, dtype=np.float64)
    _check_interval(s, start, length)
    if factor <= 0 or factor == 1:
        raise ValueError("seasonal factor must be positive and != 1")
    ticks = tick0 + start + np.arange(length)
    residual = s[start : start + length] - sine_base(ticks, period, amplitude)
    phase0 = 2 * np.pi * (tick0 + start) / period
    s[start : start + length] = amplitude * np.sin(phase0 + 2 * np.pi * factor * np.arange(length) / period) + residual
    mask = np.zeros(len(s), dtype=np.int64)
    mask[start : start + length] = 1
    return s, mask


def inject_trend(series, start: int, length: int, slope: float):
    """Add a linear drift ``slope * (i + 1)`` over the interval."""
    s = np.array(series, dtype=np.float64)
    _check_interval(s, start, length)
    if slope == 0:
        raise ValueError("trend slope must be nonzero")
    s[start : start + length] += slope * (np.arange(length) + 1)
    mask = np.zeros(len(s), dtype=np.int64)
    mask[start : start + length] = 1
    return s, mask


# -- generation ---------------------------------------------------------------


def allocate(spec: SynthSpec) -> list[tuple[str, int]]:
    """Split the anomalous-tick budget into ``(type, length)`` items by largest remainder."""
    total = spec.n_anomalous
    if total == 0:
        return []
    w = np.array([spec.weights.get(t, 0.0) for t in ANOMALY_TYPES], dtype=np.float64)
    share = w / w.sum() * total
    counts = np.floor(share).astype(int)
    for i in np.argsort(-(share - counts), kind="stable")[: total - counts.sum()]:
        counts[i] += 1
    items = []
    for kind, n in zip(ANOMALY_TYPES, counts):
        if kind in POINT_TYPES:
            items += [(kind, 1)] * int(n)
        else:
            while n > 0:
                size = min(spec.interval_length, n)
                items.append((kind, int(size)))
                n -= size
    return items


def _contextual_ok(clean: np.ndarray, spec: SynthSpec, half_width: int, value_range) -> np.ndarray:
    """Ticks where even the smallest contextual fraction clears 3 local stds."""
    lo, hi = value_range
    frac = spec.contextual_fraction[0]
    ok = np.zeros(len(clean), dtype=bool)
    for t in range(len(clean)):
        mu, sd = local_stats(clean, t, half_width)
        # same rule as contextual_target, inlined to skip recomputing the stats
        shift = frac * max(hi - mu, mu - lo)
        ok[t] = shift >= 3 * sd
    return ok


def contextual_half_width(period: float) -> int:
    return max(2, int(round(period / 20)))


def generate(spec: SynthSpec = SynthSpec()) -> tuple[TimeSeries, TimeSeries]:
    """Return ``(train, test)``; ``test.labels`` marks exactly the modified ticks."""
    rng = np.random.default_rng(spec.seed)
    train_ticks = np.arange(spec.train_length)
    test_ticks = spec.train_length + np.arange(spec.test_length)
    train = sine_base(train_ticks, spec.period, spec.amplitude) + rng.normal(0, spec.noise_std, spec.train_length)
    clean = sine_base(test_ticks, spec.period, spec.amplitude) + rng.normal(0, spec.noise_std, spec.test_length)
    value_range = (float(clean.min()), float(clean.max()))
    half = contextual_half_width(spec.period)

    test = clean.copy()
    labels = np.zeros(spec.test_length, dtype=np.int64)
    items = allocate(spec)
    if items:
        free = np.ones(spec.test_length, dtype=bool)
        free[: spec.edge_margin] = False
        if spec.edge_margin:
            free[-spec.edge_margin :] = False
        ctx_ok = _contextual_ok(clean, spec, half, value_range) if any(k == "contextual_point" for k, _ in items) else None
        # intervals first; points fill the gaps
        order = sorted(range(len(items)), key=lambda i: (-items[i][1], rng.random()))
        for i in order:
            kind, length = items[i]
            starts = np.flatnonzero(
                np.lib.stride_tricks.sliding_window_view(free, length).all(axis=1)
            ) if length <= spec.test_length else np.array([], dtype=int)
            if kind == "contextual_point":
                starts = starts[ctx_ok[starts]]
            if len(starts) == 0:
                raise ValueError(f"cannot place a {kind} anomaly of length {length}; lower anomaly_ratio or min_gap")
            s = int(rng.choice(starts))
            free[max(0, s - spec.min_gap) : s + length + spec.min_gap] = False
            test, mask = _inject(kind, test, s, length, spec, rng, value_range, half)
            labels |= mask
    names = ["value"]
    return TimeSeries(train[None, :], names=names), TimeSeries(test[None, :], labels, names)


def _inject(kind, series, start, length, spec, rng, value_range, half):
    if kind == "global_point":
        return inject_global_point(series, start, rng.uniform(*spec.global_magnitude), int(rng.choice([-1, 1])), value_range)
    if kind == "contextual_point":
        return inject_contextual_point(series, start, rng.uniform(*spec.contextual_fraction), half, value_range)
    if kind == "shapelet":
        return inject_shapelet(series, start, length, spec.amplitude)
    if kind == "seasonal":
        factor = float(rng.choice(spec.seasonal_factors))
        return inject_seasonal(series, start, length, factor, spec.period, spec.amplitude, tick0=spec.train_length)
    slope = float(rng.choice([-1, 1])) * spec.trend_total * spec.amplitude / length
    return inject_trend(series, start, length, slope)


def with_only(spec: SynthSpec, kind: str, **overrides) -> SynthSpec:
    """Copy of ``spec`` injecting a single anomaly type."""
    weights = {t: (1.0 if t == kind else 0.0) for t in ANOMALY_TYPES}
    return replace(spec, weights=weights, **overrides)
