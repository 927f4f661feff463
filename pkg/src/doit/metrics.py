"""Summary statistics and two-sample distances used in reports and tests.

All distances are estimated from finite samples, so they carry Monte Carlo
noise; tests that pin their values do so with tolerances derived from the
sample sizes involved.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, UnsupportedOperationError


@dataclass(frozen=True)
class RewardSummary:
    """Five-number-style summary of a reward sample (std uses ddof = 0)."""

    min: float
    q1: float
    mean: float
    q3: float
    max: float
    std: float
    n: int

    def as_dict(self) -> dict:
        return asdict(self)


def summary_stats(values) -> RewardSummary:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ConfigError("cannot summarise an empty sample")
    q1, q3 = np.quantile(v, [0.25, 0.75])
    return RewardSummary(
        min=float(np.min(v)),
        q1=float(q1),
        mean=float(np.mean(v)),
        q3=float(q3),
        max=float(np.max(v)),
        std=float(np.std(v)),
        n=int(v.size),
    )


def _shared_edges(a: np.ndarray, b: np.ndarray, bins: int) -> np.ndarray:
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    span = hi - lo
    pad = 0.01 * span if span > 0 else 0.5
    return np.linspace(lo - pad, hi + pad, bins + 1)


def tv_histogram(a, b, bins: int = 100) -> float:
    """Total variation distance between binned empirical laws.

    Both samples are binned on shared edges covering the union of their
    ranges with 1 percent padding. Supports d = 1 (shape (n,) or (n, 1))
    and d = 2 (shape (n, 2)); higher dimensions are refused because
    histogram TV degrades into noise there.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise ConfigError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    d = a.shape[1]
    if d > 2:
        raise UnsupportedOperationError(
            f"histogram TV supports d <= 2, got d = {d}"
        )
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ConfigError("cannot compare empty samples")
    if d == 1:
        edges = _shared_edges(a[:, 0], b[:, 0], bins)
        pa, _ = np.histogram(a[:, 0], bins=edges)
        pb, _ = np.histogram(b[:, 0], bins=edges)
    else:
        ex = _shared_edges(a[:, 0], b[:, 0], bins)
        ey = _shared_edges(a[:, 1], b[:, 1], bins)
        pa, _, _ = np.histogram2d(a[:, 0], a[:, 1], bins=(ex, ey))
        pb, _, _ = np.histogram2d(b[:, 0], b[:, 1], bins=(ex, ey))
    pa = pa / a.shape[0]
    pb = pb / b.shape[0]
    return float(0.5 * np.sum(np.abs(pa - pb)))


def wasserstein_1d(a, b) -> float:
    """W1 between one-dimensional samples: mean absolute difference of
    order statistics. Unequal lengths are aligned by linear interpolation
    of the quantile function at the finer grid."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ConfigError("cannot compare empty samples")
    if a.size != b.size:
        m = max(a.size, b.size)
        q = (np.arange(m) + 0.5) / m
        a = np.quantile(a, q)
        b = np.quantile(b, q)
    return float(np.mean(np.abs(a - b)))


def ks_statistic(samples, cdf) -> float:
    """One-sample Kolmogorov-Smirnov statistic against a cdf callable."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ConfigError("cannot compare an empty sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))
