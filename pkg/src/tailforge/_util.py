"""Small shared numerics: stable log-sum-exp, tail counting, convex hulls."""

from __future__ import annotations

import numpy as np


def logsumexp(x: np.ndarray) -> float:
    """log(sum(exp(x))) computed against the running maximum."""
    x = np.asarray(x, dtype=float)
    m = np.max(x)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(x - m))))


def logmeanexp(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return logsumexp(x) - np.log(x.size)


def weighted_logsumexp(x: np.ndarray, log_w: np.ndarray) -> float:
    """log(sum(w * exp(x))) with weights supplied in log space."""
    return logsumexp(np.asarray(x, dtype=float) + np.asarray(log_w, dtype=float))


def tail_fraction(sorted_abs: np.ndarray, t_grid: np.ndarray) -> np.ndarray:
    """Fraction of |samples| strictly above each t, given pre-sorted |samples|."""
    n = sorted_abs.size
    idx = np.searchsorted(sorted_abs, np.asarray(t_grid, dtype=float), side="right")
    return (n - idx) / n


def dkw_epsilon(replicates: int, delta: float) -> float:
    """Half-width of the empirical-CDF sup-norm band holding with prob 1 - delta."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    return float(np.sqrt(np.log(2.0 / delta) / (2.0 * replicates)))


def greatest_convex_minorant(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Values of the greatest convex minorant of points (x_i, y_i) at the x_i.

    x must be strictly increasing. The result is convex, lies at or below y,
    and touches it at the lower-hull vertices (Andrew monotone-chain hull).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.size != y.size:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if x.size == 1:
        return y.copy()
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing")
    hull: list[int] = []
    for i in range(x.size):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            # pop k when it lies on or above chord (j, i)
            cross = (x[k] - x[j]) * (y[i] - y[j]) - (y[k] - y[j]) * (x[i] - x[j])
            if cross <= 0.0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(x, x[hull], y[hull])


def format_sig(value: float, digits: int) -> str:
    """Render a float with a fixed number of significant digits."""
    if isinstance(value, bool):
        return str(value).lower()
    return format(float(value), f".{digits}g")
