"""Steady-state estimators: regenerative ratio, batch means, KS distance, moments and tails."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StationaryEstimate:
    value: float
    std_err: float
    n_units: int
    method: str  # regenerative, batch_means, sample, exact

    def __post_init__(self):
        if not math.isfinite(self.std_err) or self.std_err < 0:
            raise ValueError(f"invalid standard error {self.std_err}")

    def within(self, target: float, n_se: float = 3.0) -> bool:
        return abs(self.value - target) <= n_se * self.std_err

    def scaled(self, c: float) -> "StationaryEstimate":
        return StationaryEstimate(self.value * c, self.std_err * abs(c), self.n_units, self.method)

    def as_row(self) -> dict:
        return {"value": self.value, "std_err": self.std_err, "n_units": self.n_units,
                "method": self.method}


def _cycle_arrays(cycles, functional: str):
    if hasattr(cycles, "theta") and hasattr(cycles, "integral"):
        return np.asarray(cycles.integral(functional), float), np.asarray(cycles.theta, float)
    cycles = list(cycles)
    if not cycles:
        raise ValueError("no cycles given")
    try:
        num = np.array([c.integrals[functional] for c in cycles], dtype=float)
    except KeyError:
        raise ValueError(f"functional {functional!r} was not accumulated in every cycle") from None
    return num, np.array([c.theta for c in cycles], dtype=float)


def ratio_estimate(num, theta, cv_threshold: float = 2.0) -> StationaryEstimate:
    """``mean(num) / mean(theta)`` with a delta-method standard error.

    When the cycle-length coefficient of variation exceeds ``cv_threshold``
    the jackknife standard error is used instead.
    """
    num = np.asarray(num, float)
    theta = np.asarray(theta, float)
    n = len(theta)
    if n == 0 or len(num) != n:
        raise ValueError("need equally many numerators and cycle lengths")
    if n < 2:
        raise ValueError("at least two cycles are needed for a standard error")
    tbar = theta.mean()
    r = num.mean() / tbar
    cv = theta.std(ddof=1) / tbar
    if cv > cv_threshold:
        s_num, s_theta = num.sum(), theta.sum()
        loo = (s_num - num) / (s_theta - theta)
        se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    else:
        resid = num - r * theta
        se = math.sqrt(max(resid.var(ddof=1), 0.0) / n) / tbar
    return StationaryEstimate(float(r), float(se), n, "regenerative")


def regenerative_ratio(cycles, functional: str) -> StationaryEstimate:
    """Stationary mean of ``functional`` from i.i.d. regenerative cycles."""
    num, theta = _cycle_arrays(cycles, functional)
    return ratio_estimate(num, theta)


@dataclass(frozen=True)
class PiecewiseConstantPath:
    """Value ``values[k]`` holds on ``[times[k], times[k+1])``, the last one until ``t_end``."""

    times: np.ndarray
    values: np.ndarray
    t_end: float

    def cumulative(self, at: np.ndarray) -> np.ndarray:
        t = np.asarray(self.times, float)
        v = np.asarray(self.values, float)
        edges = np.append(t, self.t_end)
        cum = np.concatenate([[0.0], np.cumsum(v * np.diff(edges))])
        at = np.asarray(at, float)
        k = np.clip(np.searchsorted(edges, at, side="right") - 1, 0, len(v) - 1)
        return cum[k] + v[k] * (at - edges[k])


def batch_means(series, n_batches: int, t_start: float | None = None) -> StationaryEstimate:
    """Mean and standard error over ``n_batches`` equal time windows.

    ``series`` is a :class:`PiecewiseConstantPath` or a pair
    ``(grid_times, cumulative_integral)`` whose grid includes the batch edges.
    """
    if n_batches < 2:
        raise ValueError("need at least two batches")
    if isinstance(series, PiecewiseConstantPath):
        if len(series.times) < n_batches:
            raise ValueError(f"fewer than {n_batches} events in the series")
        t0 = series.times[0] if t_start is None else t_start
        edges = np.linspace(t0, series.t_end, n_batches + 1)
        cum = series.cumulative(edges)
    else:
        times, cumulative = (np.asarray(a, float) for a in series)
        if len(times) < n_batches + 1:
            raise ValueError(f"fewer than {n_batches} samples in the series")
        t0 = times[0] if t_start is None else t_start
        edges = np.linspace(t0, times[-1], n_batches + 1)
        cum = np.interp(edges, times, cumulative)
    means = np.diff(cum) / np.diff(edges)
    return StationaryEstimate(float(means.mean()), float(means.std(ddof=1) / math.sqrt(n_batches)),
                              n_batches, "batch_means")


def ks_distance(samples, cdf, weights=None) -> float:
    """Largest gap between the (optionally weighted) empirical CDF and ``cdf`` at the sample points.

    Ties are pooled, so a weighted histogram on a lattice is handled exactly.
    The distance is zero exactly when both CDFs agree at every sample point.
    For a continuous ``cdf`` it differs from the two-sided statistic by at
    most the largest single weight.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("need at least one sample")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
    keep = w > 0
    x, w = x[keep], w[keep]
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    ux, start = np.unique(x, return_index=True)
    wsum = np.add.reduceat(w, start)
    total = wsum.sum()
    ecdf = np.cumsum(wsum) / total
    f = np.asarray(cdf(ux), dtype=float)
    d = np.max(np.abs(ecdf - f))
    return float(min(max(d, 0.0), 1.0))


def moment_estimate(samples, p: float, weights=None) -> StationaryEstimate:
    """Sample ``p``-th moment with a CLT standard error (independent samples).

    Non-integer ``p`` uses ``|x|**p``.
    """
    if not p > 0:
        raise ValueError("p must be positive")
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("need at least one sample")
    y = x ** int(p) if float(p).is_integer() else np.abs(x) ** p
    return _mean_estimate(y, weights)


def tail_estimate(samples, x: float, weights=None) -> StationaryEstimate:
    """Fraction of samples at or above ``x``."""
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ValueError("need at least one sample")
    return _mean_estimate((s >= x).astype(float), weights)


def _mean_estimate(y, weights) -> StationaryEstimate:
    n = y.size
    if weights is None:
        m = float(y.mean())
        se = float(y.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    else:
        w = np.asarray(weights, dtype=float)
        m = float(np.sum(w * y) / w.sum())
        n_eff = w.sum() ** 2 / np.sum(w**2)
        var = np.sum(w * (y - m) ** 2) / w.sum()
        se = float(math.sqrt(var / max(n_eff - 1, 1)))
    return StationaryEstimate(m, se, max(n, 1), "sample")


def histogram_quantities(hist: np.ndarray, offset: int, scale: float):
    """Support points ``(k - offset)/scale`` and normalized weights of an occupation histogram."""
    h = np.asarray(hist, float)
    k = np.nonzero(h)[0]
    return (k - offset) / scale, h[k] / h.sum()


def littles_law_wait(mean_total: float, mean_idle: float, regime) -> float:
    """Mean waiting time ``E[S + I - N] / lambda(N)``."""
    return (mean_total + mean_idle - regime.n) / regime.lambda_total


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def log_tail_slope(samples, beta: float, weights=None, lo: float | None = None,
                   hi: float | None = None, points: int = 17) -> float:
    """Least-squares slope of ``log P(X >= x)`` against ``x`` on ``[lo, hi]``.

    The window defaults to ``[4/beta, 12/beta]``.  Grid points with an empty
    tail are dropped; ``nan`` is returned when fewer than two remain.  A
    negative slope means the tail decays at least exponentially on the window.
    """
    lo = 4.0 / beta if lo is None else lo
    hi = 12.0 / beta if hi is None else hi
    if not hi > lo:
        raise ValueError("need hi > lo")
    x = np.asarray(samples, float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, float)
    order = np.argsort(x)
    xs, cw = x[order], np.cumsum(w[order][::-1])[::-1] / w.sum()  # cw[i] = P(X >= xs[i])
    grid = np.linspace(lo, hi, points)
    idx = np.searchsorted(xs, grid, side="left")
    tail = np.where(idx < len(xs), cw[np.minimum(idx, len(xs) - 1)], 0.0)
    keep = tail > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(grid[keep], np.log(tail[keep]), 1)[0])
