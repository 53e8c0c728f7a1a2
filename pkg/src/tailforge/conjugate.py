"""Numerical convex conjugation (Young-Fenchel / Legendre transform).

For a tail generator g the conjugate is g*(y) = sup_{t >= 0} (|y| t - g(t)),
computed here on grids. Because g is convex, the maximizing t is nondecreasing
in y, so one monotone two-pointer sweep over sorted grids computes the whole
table in linear time; an O(N^2) scan is kept behind method="scan" as the test
oracle. Conjugates are computed for y >= 0 and extended to y < 0 through |y|,
matching the one-sided sup over t >= 0.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import generators
from .errors import DomainError, ValidationError
from .generators import TailGenerator, Tabulated

DEFAULT_GRID_POINTS = 4096


def _sweep_max(x: np.ndarray, fx: np.ndarray, queries: np.ndarray):
    """max_j (q * x_j - fx_j) for each ascending query slope q.

    x ascending, fx convex on x: the objective is concave in j and its argmax
    is nondecreasing in q, so a single forward pointer suffices. Ties keep the
    leftmost index. Raises DomainError when a maximizer saturates at the last
    node with a strict improvement, i.e. the true maximizer lies beyond x.
    """
    n = x.size
    values = np.empty(queries.size)
    argidx = np.empty(queries.size, dtype=np.intp)
    j = 0
    for i, q in enumerate(queries):
        v = q * x[j] - fx[j]
        while j + 1 < n:
            v_next = q * x[j + 1] - fx[j + 1]
            if v_next > v:
                j += 1
                v = v_next
            else:
                break
        if j == n - 1 and n > 1:
            v_prev = q * x[n - 2] - fx[n - 2]
            if v > v_prev:
                raise DomainError(
                    f"maximizer saturated at the grid end for slope {q:.6g}; "
                    "domain too short, rebuild with a larger domain_max"
                )
        values[i] = v
        argidx[i] = j
    return values, argidx


def _scan_max(x: np.ndarray, fx: np.ndarray, queries: np.ndarray):
    """Naive quadratic-cost reference for _sweep_max (leftmost argmax)."""
    values = np.empty(queries.size)
    argidx = np.empty(queries.size, dtype=np.intp)
    n = x.size
    for i, q in enumerate(queries):
        obj = q * x - fx
        j = int(np.argmax(obj))
        if j == n - 1 and n > 1 and obj[n - 1] > obj[n - 2]:
            raise DomainError(
                f"maximizer saturated at the grid end for slope {q:.6g}; "
                "domain too short, rebuild with a larger domain_max"
            )
        values[i] = obj[j]
        argidx[i] = j
    return values, argidx


@dataclass(frozen=True, eq=False)
class ConjugateTable:
    """Conjugate values on an ascending dual grid, with the maximizing points.

    tol_interp is the working error budget L * h (largest source-grid slope
    times mesh); downstream consistency checks use multiples of it.
    """

    lambda_grid: np.ndarray
    values: np.ndarray
    argmax_points: np.ndarray
    source_domain_max: float
    tol_interp: float
    method: str = "sweep"

    def __post_init__(self):
        for name in ("lambda_grid", "values", "argmax_points"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def lambda_max(self) -> float:
        return float(self.lambda_grid[-1])

    def g_star(self, lam):
        """Interpolated conjugate at scalar or array lam; even in lam."""
        mag = np.abs(np.asarray(lam, dtype=float))
        if np.any(mag > self.lambda_max * (1.0 + 1e-12)):
            raise DomainError(
                f"dual point {float(np.max(mag)):.6g} beyond representable range "
                f"[0, {self.lambda_max:.6g}]"
            )
        out = np.interp(np.minimum(mag, self.lambda_max), self.lambda_grid, self.values)
        if np.isscalar(lam) or np.ndim(lam) == 0:
            return float(out)
        return out

    def to_csv(self, path=None) -> str | None:
        """Write lambda, g_star, argmax_t rows; returns the text when path is None."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["lambda", "g_star", "argmax_t"])
        for lam, val, arg in zip(self.lambda_grid, self.values, self.argmax_points):
            writer.writerow([f"{lam:.9g}", f"{val:.9g}", f"{arg:.9g}"])
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text)
        return None


def _default_t_grid(g: TailGenerator, points: int) -> np.ndarray:
    return np.linspace(0.0, g.domain_max, points)


def conjugate(
    g: TailGenerator,
    lambda_grid=None,
    *,
    t_grid=None,
    points: int = DEFAULT_GRID_POINTS,
    method: str = "sweep",
) -> ConjugateTable:
    """Tabulate g* over a dual grid.

    Defaults: a uniform t-grid of `points` nodes on [0, domain_max] and a
    dual grid of `points` nodes from 0 up to the discrete end slope of g on
    that t-grid, which is exactly the largest representable dual point.
    """
    if method not in ("sweep", "scan"):
        raise ValidationError(f"unknown conjugation method {method!r}")
    if t_grid is None:
        t_grid = _default_t_grid(g, points)
    else:
        t_grid = np.asarray(t_grid, dtype=float)
        if t_grid.ndim != 1 or t_grid.size < 2 or np.any(np.diff(t_grid) <= 0):
            raise ValidationError("t_grid must be a strictly increasing 1-d array")
        if t_grid[0] != 0.0:
            raise ValidationError("t_grid must start at 0")
    gv = np.asarray(g.evaluate(t_grid), dtype=float)
    mesh = float(np.max(np.diff(t_grid)))
    end_slope = (gv[-1] - gv[-2]) / (t_grid[-1] - t_grid[-2])

    if lambda_grid is None:
        lambda_grid = np.linspace(0.0, end_slope, points)
    else:
        lambda_grid = np.asarray(lambda_grid, dtype=float)
        if lambda_grid.ndim != 1 or lambda_grid.size < 1:
            raise ValidationError("lambda_grid must be a 1-d array")
        if np.any(lambda_grid < 0.0) or np.any(np.diff(lambda_grid) <= 0.0):
            raise ValidationError("lambda_grid must be nonnegative and strictly increasing")
        if lambda_grid[0] != 0.0:
            raise ValidationError("lambda_grid must start at 0 so the table anchors g*(0) = 0")

    fn = _sweep_max if method == "sweep" else _scan_max
    values, argidx = fn(t_grid, gv, lambda_grid)
    return ConjugateTable(
        lambda_grid=lambda_grid,
        values=values,
        argmax_points=t_grid[argidx],
        source_domain_max=g.domain_max,
        tol_interp=float(end_slope * mesh),
        method=method,
    )


def conjugate_values(g: TailGenerator, dual_points, *, t_grid=None, points: int = DEFAULT_GRID_POINTS):
    """Conjugate at ad-hoc ascending dual points without building a table.

    Used by calibration, which re-evaluates g* at candidate-scaled points and
    would otherwise pay an interpolation error per candidate.
    """
    dual_points = np.asarray(dual_points, dtype=float)
    if np.any(dual_points < 0.0) or np.any(np.diff(dual_points) < 0.0):
        raise ValidationError("dual points must be nonnegative and ascending")
    if t_grid is None:
        t_grid = _default_t_grid(g, points)
    gv = np.asarray(g.evaluate(t_grid), dtype=float)
    values, _ = _sweep_max(t_grid, gv, dual_points)
    return values


def biconjugate(table: ConjugateTable, t_grid) -> Tabulated:
    """Second conjugation: recovers the source generator on t_grid.

    For convex validated input the result matches the source within the
    interpolation budget (the convex-analysis fixed point at grid resolution).
    Points whose maximizer saturates at the dual-grid end are out of the
    representable slope range and raise DomainError.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1:
        raise ValidationError("t_grid must be a 1-d array")
    if np.any(t_grid < 0.0) or (t_grid.size > 1 and np.any(np.diff(t_grid) <= 0.0)):
        raise ValidationError("t_grid must be nonnegative and strictly increasing")
    if t_grid[0] != 0.0:
        t_grid = np.concatenate(([0.0], t_grid))
    values, _ = _sweep_max(table.lambda_grid, table.values, t_grid)
    # max over dual nodes includes 0 * t - g*(0) = 0, so values are >= 0 exactly
    return generators.tabulated(t_grid, values, mode="relaxed")


def inverse(g: TailGenerator, y: float, tol: float | None = None) -> float:
    """Smallest t in [0, domain_max] with g(t) >= y, by bisection.

    tol=None uses the default absolute tolerance 1e-10 * max(1, domain_max);
    tol=0 bisects until the floating-point bracket collapses, for callers that
    need the root to the last representable digit.
    """
    if y < 0.0:
        raise ValidationError(f"inverse target must be nonnegative, got {y}")
    if y == 0.0:
        return 0.0
    top = g.domain_max
    g_top = float(g.evaluate(top))
    if y > g_top:
        raise DomainError(
            f"target {y:.6g} exceeds g(domain_max) = {g_top:.6g}; enlarge the domain"
        )
    if tol is None:
        tol = 1e-10 * max(1.0, top)
    lo, hi = 0.0, top
    # invariant: g(lo) < y <= g(hi)
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if float(g.evaluate(mid)) >= y:
            hi = mid
        else:
            lo = mid
    return hi


class InverseTable:
    """Reusable vectorized inverse of a generator.

    Brackets each target by binary search on a dense cached evaluation grid,
    then runs fixed-count vectorized bisection; agrees with `inverse` to
    around domain_max * 2**-(16 + refine_steps). Built once, applied to many
    target batches (the extremal sampler's hot path).
    """

    def __init__(self, g: TailGenerator, grid_points: int = 1 << 16):
        self._g = g
        self._t_grid = np.linspace(0.0, g.domain_max, grid_points + 1)
        self._gv = np.asarray(g.evaluate(self._t_grid), dtype=float)

    @property
    def max_target(self) -> float:
        return float(self._gv[-1])

    def interpolate(self, ys) -> np.ndarray:
        """Piecewise-linear inverse through the cached (value, t) nodes.

        One vectorized pass; the deviation from the bisected inverse is the
        nonlinearity of the inverse across one grid cell, far below any
        sampling band at the default grid density. Used on the sampler's hot
        path; use __call__ when a bracketing guarantee matters.
        """
        ys = np.asarray(ys, dtype=float)
        if np.any(ys < 0.0):
            raise ValidationError("inverse targets must be nonnegative")
        if np.any(ys > self._gv[-1]):
            raise DomainError(
                f"target {float(np.max(ys)):.6g} exceeds g(domain_max) = {self._gv[-1]:.6g}"
            )
        return np.interp(ys, self._gv, self._t_grid)

    def __call__(self, ys, refine_steps: int = 30) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        if np.any(ys < 0.0):
            raise ValidationError("inverse targets must be nonnegative")
        if np.any(ys > self._gv[-1]):
            raise DomainError(
                f"target {float(np.max(ys)):.6g} exceeds g(domain_max) = {self._gv[-1]:.6g}"
            )
        idx = np.searchsorted(self._gv, ys, side="left")
        idx = np.clip(idx, 1, self._t_grid.size - 1)
        lo = self._t_grid[idx - 1]
        hi = self._t_grid[idx]
        g = self._g
        for _ in range(refine_steps):
            mid = 0.5 * (lo + hi)
            ge = np.asarray(g.evaluate(mid), dtype=float) >= ys
            hi = np.where(ge, mid, hi)
            lo = np.where(ge, lo, mid)
        return np.where(ys == 0.0, 0.0, hi)


def inverse_batch(
    g: TailGenerator, ys: np.ndarray, *, grid_points: int = 1 << 16, refine_steps: int = 30
) -> np.ndarray:
    """One-shot vectorized inverse; see InverseTable for the cached form."""
    return InverseTable(g, grid_points=grid_points)(ys, refine_steps=refine_steps)
