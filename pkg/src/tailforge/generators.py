"""Tail-generating functions: convex, nondecreasing g with g(0) = 0.

A tail generator certifies an exponential tail envelope: the probability
that a centered variable exceeds t in absolute value is at most exp(-g(t)).
Four kinds are provided:

* ``Quadratic(a)``        -- g(t) = a * t**2
* ``RegularizedPower``    -- t**2 below a splice point t0, a*t**m + b above,
                             with value and slope continuity at t0
* ``Tabulated``           -- piecewise-linear interpolation of grid data
* ``Scaled``              -- factor * inner(t)

All kinds are immutable and evaluation is pure, so instances can be shared
freely between threads. Evaluation is vectorized: array in, array out.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ._util import greatest_convex_minorant, tail_fraction
from .errors import DomainError, GeneratorValidationError, ValidationError

DEFAULT_DOMAIN_MAX = 16.0

#: Probe count used when validating closed-form kinds on a uniform grid.
_VALIDATION_PROBES = 513

#: Relative tolerance for convexity checks, scaled by local value magnitude.
TOL_CONVEX = 1e-9

#: Acceptance window (eps, 1/eps) for the curvature-at-zero check.
EPS_CURVATURE = 1e-6

#: Absolute tolerance for the slope-at-zero check (strict mode).
TOL_SLOPE_AT_ZERO = 1e-6


@dataclass(frozen=True)
class Violation:
    condition: str
    witness: float
    measured: float


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of structural validation. passed is true iff no violations."""

    passed: bool
    violations: tuple[Violation, ...]
    mode: str

    def describe(self) -> str:
        if self.passed:
            return f"valid ({self.mode} mode)"
        lines = [f"{len(self.violations)} violation(s) in {self.mode} mode:"]
        for v in self.violations:
            lines.append(f"  {v.condition} at t={v.witness:.6g}: {v.measured:.6g}")
        return "\n".join(lines)


class TailGenerator:
    """Common behavior for all generator kinds."""

    kind: str = "abstract"

    @property
    def domain_max(self) -> float:
        raise NotImplementedError

    def _raw(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def closed_form(self) -> bool:
        """Closed-form kinds evaluate at any t >= 0; tabulated data does not."""
        return True

    def evaluate(self, t):
        """g(t) for scalar or array t; rejects negative arguments.

        Tabulated kinds refuse t beyond their grid unless an extrapolation
        mode was opted into at construction.
        """
        arr = np.asarray(t, dtype=float)
        if np.any(arr < 0.0):
            raise ValidationError("tail generators are defined for t >= 0 only")
        out = self._raw(arr)
        if np.isscalar(t) or arr.ndim == 0:
            return float(out)
        return out

    __call__ = evaluate

    def regime_at(self, t: float) -> str:
        """Which branch of the generator is active at t: quadratic or power."""
        return "power"

    def end_slope(self) -> float:
        """Discrete slope over the last resolvable interval before domain_max.

        This is the largest dual point at which the conjugate is representable
        without saturating.
        """
        h = self.domain_max / (_VALIDATION_PROBES - 1)
        hi = self.evaluate(self.domain_max)
        lo = self.evaluate(self.domain_max - h)
        return (hi - lo) / h

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True, eq=False)
class Quadratic(TailGenerator):
    a: float
    _domain_max: float = DEFAULT_DOMAIN_MAX
    validation: ValidationReport | None = field(default=None, repr=False, compare=False)

    kind = "quadratic"

    @property
    def domain_max(self) -> float:
        return self._domain_max

    def _raw(self, t):
        return self.a * t * t

    def regime_at(self, t: float) -> str:
        return "quadratic"

    def to_dict(self) -> dict:
        return {"kind": "quadratic", "a": self.a, "domain_max": self._domain_max}


@dataclass(frozen=True, eq=False)
class RegularizedPower(TailGenerator):
    """t**2 up to t0, then a*t**m + b with matched value and slope at t0.

    The splice keeps the curvature at zero strictly positive and finite while
    reproducing a pure power growth t**m far beyond t0. Continuity fixes
    a = 2 * t0**(2-m) / m and b = t0**2 * (m - 2) / m; m = 2 collapses to the
    plain quadratic.
    """

    m: float
    t0: float
    _domain_max: float = DEFAULT_DOMAIN_MAX
    validation: ValidationReport | None = field(default=None, repr=False, compare=False)

    kind = "regularized_power"

    @property
    def domain_max(self) -> float:
        return self._domain_max

    @property
    def power_coeff(self) -> float:
        return 2.0 * self.t0 ** (2.0 - self.m) / self.m

    @property
    def power_offset(self) -> float:
        return self.t0 ** 2 * (self.m - 2.0) / self.m

    def _raw(self, t):
        t = np.asarray(t, dtype=float)
        quad = t * t
        power = self.power_coeff * np.power(t, self.m) + self.power_offset
        return np.where(t <= self.t0, quad, power)

    def regime_at(self, t: float) -> str:
        return "quadratic" if t <= self.t0 else "power"

    def to_dict(self) -> dict:
        return {
            "kind": "regularized_power",
            "m": self.m,
            "t0": self.t0,
            "domain_max": self._domain_max,
        }


@dataclass(frozen=True, eq=False)
class Tabulated(TailGenerator):
    """Piecewise-linear generator over user-supplied nodes.

    Linear interpolation preserves the convexity of the node data, which a
    spline would not. Evaluation outside the grid raises DomainError unless
    extrapolation="power" was chosen; that mode fits an exponent to the last
    decade of nodes and extends continuously.
    """

    grid: np.ndarray
    values: np.ndarray
    extrapolation: str = "error"
    validation: ValidationReport | None = field(default=None, repr=False, compare=False)

    kind = "tabulated"

    def __post_init__(self):
        grid = np.ascontiguousarray(np.asarray(self.grid, dtype=float))
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if grid.ndim != 1 or values.ndim != 1 or grid.size != values.size:
            raise ValidationError("grid and values must be 1-d arrays of equal length")
        if grid.size < 2:
            raise ValidationError("tabulated generator needs at least two nodes")
        if np.any(np.diff(grid) <= 0.0):
            raise ValidationError("grid abscissas must be strictly increasing")
        if grid[0] < 0.0:
            raise ValidationError("grid abscissas must be nonnegative")
        if self.extrapolation not in ("error", "power"):
            raise ValidationError(f"unknown extrapolation mode {self.extrapolation!r}")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def domain_max(self) -> float:
        return float(self.grid[-1])

    @property
    def closed_form(self) -> bool:
        return False

    def _power_extension(self, t: np.ndarray) -> np.ndarray:
        top = self.domain_max
        sel = (self.grid >= top / 10.0) & (self.grid > 0.0) & (self.values > 0.0)
        if np.count_nonzero(sel) < 2:
            raise DomainError(
                "cannot fit power-law extension: too few positive nodes in the last decade"
            )
        p = np.polyfit(np.log(self.grid[sel]), np.log(self.values[sel]), 1)[0]
        return self.values[-1] * np.power(t / top, p)

    def _raw(self, t):
        t = np.asarray(t, dtype=float)
        beyond = t > self.domain_max
        if np.any(beyond):
            if self.extrapolation == "error":
                worst = float(np.max(t))
                raise DomainError(
                    f"t={worst:.6g} beyond tabulated domain_max={self.domain_max:.6g}; "
                    "rebuild with a larger grid or opt into power extrapolation"
                )
            inside = np.interp(np.minimum(t, self.domain_max), self.grid, self.values)
            return np.where(beyond, self._power_extension(np.maximum(t, self.domain_max)), inside)
        return np.interp(t, self.grid, self.values)

    def to_dict(self) -> dict:
        return {
            "kind": "tabulated",
            "grid": self.grid.tolist(),
            "values": self.values.tolist(),
            "extrapolation": self.extrapolation,
        }


@dataclass(frozen=True, eq=False)
class Scaled(TailGenerator):
    inner: TailGenerator
    factor: float
    validation: ValidationReport | None = field(default=None, repr=False, compare=False)

    kind = "scaled"

    @property
    def domain_max(self) -> float:
        return self.inner.domain_max

    @property
    def closed_form(self) -> bool:
        return self.inner.closed_form

    def _raw(self, t):
        return self.factor * self.inner._raw(np.asarray(t, dtype=float))

    def regime_at(self, t: float) -> str:
        return self.inner.regime_at(t)

    def to_dict(self) -> dict:
        return {"kind": "scaled", "factor": self.factor, "inner": self.inner.to_dict()}


GeneratorKind = Union[Quadratic, RegularizedPower, Tabulated, Scaled]


# ---------------------------------------------------------------------------
# validation


def _probe_grid(g: TailGenerator) -> np.ndarray:
    if isinstance(g, Tabulated):
        return g.grid
    if isinstance(g, Scaled) and isinstance(g.inner, Tabulated):
        return g.inner.grid
    return np.linspace(0.0, g.domain_max, _VALIDATION_PROBES)


def _curvature_scale(g: TailGenerator) -> float:
    if isinstance(g, RegularizedPower):
        return g.t0
    if isinstance(g, Scaled):
        return _curvature_scale(g.inner)
    return 1.0


def validate(g: TailGenerator, mode: str = "strict") -> ValidationReport:
    """Structural checks on a generator.

    strict mode additionally demands a vanishing slope and a positive finite
    curvature at the origin (finite-difference proxies); relaxed mode skips
    those two, which piecewise-linear data cannot satisfy.

    The superlinearity requirement (g(t)/t increasing without bound) is only
    witnessed discretely at domain_max versus domain_max/2; the full limit
    condition is untestable numerically and is a documented assumption.
    """
    if mode not in ("strict", "relaxed"):
        raise ValidationError(f"unknown validation mode {mode!r}")
    violations: list[Violation] = []
    probes = _probe_grid(g)
    vals = np.asarray(g.evaluate(probes), dtype=float)

    v0 = g.evaluate(0.0)
    if v0 != 0.0:
        violations.append(Violation("zero-at-origin", 0.0, float(v0)))

    if np.any(vals < 0.0):
        i = int(np.argmin(vals))
        violations.append(Violation("nonnegative", float(probes[i]), float(vals[i])))

    diffs = np.diff(vals)
    scale = np.maximum(1.0, np.maximum(np.abs(vals[:-1]), np.abs(vals[1:])))
    bad = diffs < -1e-12 * scale
    if np.any(bad):
        i = int(np.argmax(bad))
        violations.append(Violation("nondecreasing", float(probes[i + 1]), float(diffs[i])))

    if probes.size >= 3:
        dx = np.diff(probes)
        slopes = diffs / dx
        curv = np.diff(slopes)
        local = np.maximum(1.0, np.abs(vals[1:-1]))
        bad = curv < -TOL_CONVEX * local
        if np.any(bad):
            i = int(np.argmax(bad))
            violations.append(Violation("convex", float(probes[i + 1]), float(curv[i])))

    top = g.domain_max
    g_top = float(g.evaluate(top))
    if g_top > 0.0:
        # discrete witness of g(t)/t increasing; vacuous for an all-zero grid
        ratio_top = g_top / top
        ratio_mid = float(g.evaluate(top / 2.0)) / (top / 2.0)
        if not ratio_top > ratio_mid:
            violations.append(Violation("superlinear-witness", top, ratio_top - ratio_mid))

    if mode == "strict":
        h = 1e-4 * max(1.0, _curvature_scale(g))
        f_h = float(g.evaluate(h))
        f_h2 = float(g.evaluate(h / 2.0))
        f_2h = float(g.evaluate(2.0 * h))
        # Richardson-extrapolated forward slope: exact zero for quadratic origins
        slope0 = 2.0 * (f_h2 / (h / 2.0)) - f_h / h
        if abs(slope0) > TOL_SLOPE_AT_ZERO:
            violations.append(Violation("slope-at-origin", 0.0, slope0))
        curv0 = (f_2h - 2.0 * f_h) / (h * h)
        if not (EPS_CURVATURE < curv0 < 1.0 / EPS_CURVATURE):
            violations.append(Violation("curvature-at-origin", 0.0, curv0))

    return ValidationReport(passed=not violations, violations=tuple(violations), mode=mode)


def _attach(g: GeneratorKind, mode: str) -> GeneratorKind:
    report = validate(g, mode)
    if not report.passed:
        raise GeneratorValidationError(report.describe(), report=report)
    object.__setattr__(g, "validation", report)
    return g


# ---------------------------------------------------------------------------
# constructors


def quadratic(a: float, domain_max: float = DEFAULT_DOMAIN_MAX) -> Quadratic:
    """g(t) = a * t**2 with a > 0."""
    if not a > 0.0:
        raise ValidationError(f"quadratic coefficient must be positive, got {a}")
    if not domain_max > 0.0:
        raise ValidationError("domain_max must be positive")
    return _attach(Quadratic(a=float(a), _domain_max=float(domain_max)), "strict")


def make_regularized_power(
    m: float, t0: float, domain_max: float | None = None
) -> RegularizedPower:
    """Quadratic core spliced to a pure power tail of exponent m > 1.

    The coefficients are fixed by value and first-derivative continuity at
    the matching point t0, so for t far above t0 the ratio g(t) / t**m tends
    to the splice coefficient. m <= 1 is rejected: the result would not grow
    superlinearly. The splice is convex for every m > 1.
    """
    if not m > 1.0:
        raise ValidationError(f"power exponent must exceed 1 for superlinear growth, got {m}")
    if not t0 > 0.0:
        raise ValidationError(f"matching point must be positive, got {t0}")
    if domain_max is None:
        domain_max = max(DEFAULT_DOMAIN_MAX, 2.0 * t0)
    if not domain_max > t0:
        raise ValidationError("domain_max must exceed the matching point")
    g = RegularizedPower(m=float(m), t0=float(t0), _domain_max=float(domain_max))
    if g.power_coeff < 0.0:
        raise ValidationError(
            f"splice coefficient {g.power_coeff:.6g} is negative; no convex continuation"
        )
    return _attach(g, "strict")


def tabulated(
    grid, values, extrapolation: str = "error", mode: str = "relaxed"
) -> Tabulated:
    """Generator from grid data; validated in relaxed mode by default."""
    return _attach(Tabulated(grid=grid, values=values, extrapolation=extrapolation), mode)


def scaled(inner: TailGenerator, factor: float, mode: str | None = None) -> Scaled:
    """factor * inner(t) pointwise, factor > 0."""
    if not factor > 0.0:
        raise ValidationError(f"scale factor must be positive, got {factor}")
    if mode is None:
        mode = "relaxed" if not inner.closed_form else "strict"
    return _attach(Scaled(inner=inner, factor=float(factor)), mode)


def evaluate(g: TailGenerator, t):
    """Module-level alias for g.evaluate(t)."""
    return g.evaluate(t)


# ---------------------------------------------------------------------------
# empirical fits


def fit_from_samples(samples, grid) -> Tabulated:
    """Fit a tabulated generator to data so exp(-g) dominates the empirical tail.

    The raw fit is -log of the two-sided empirical tail at each grid node;
    nodes where the empirical tail vanishes carry no information and are
    dropped with a warning. The raw values are then replaced by their
    greatest convex minorant, which can only lower them, so
    exp(-g(t_i)) >= empirical tail at every retained node by construction.

    Requires at least 1000 samples. The returned generator passes relaxed
    validation (piecewise-linear data has no curvature at the origin).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1 or samples.size == 0:
        raise ValidationError("samples must be a nonempty 1-d array")
    if samples.size < 1000:
        raise ValidationError(
            f"need at least 1000 samples for a stable tail fit, got {samples.size}"
        )
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError("grid must be a nonempty 1-d array")
    if np.any(np.diff(grid) <= 0.0) or np.any(grid < 0.0):
        raise ValidationError("grid must be nonnegative and strictly increasing")

    sorted_abs = np.sort(np.abs(samples))
    if grid[-1] > sorted_abs[-1]:
        raise ValidationError(
            f"grid extends to {grid[-1]:.6g}, beyond the largest |sample| "
            f"{sorted_abs[-1]:.6g}; the empirical tail vanishes there"
        )
    tails = tail_fraction(sorted_abs, grid)
    keep = tails > 0.0
    if np.any(~keep):
        dropped = grid[~keep]
        warnings.warn(
            f"dropping {dropped.size} grid node(s) with empirical tail 0 "
            f"(first at t={dropped[0]:.6g})",
            stacklevel=2,
        )
    grid = grid[keep]
    tails = tails[keep]
    if grid.size == 0 or (grid.size == 1 and grid[0] == 0.0):
        raise ValidationError("no usable grid nodes with positive empirical tail")

    raw = -np.log(tails)
    if grid[0] != 0.0:
        grid = np.concatenate(([0.0], grid))
        raw = np.concatenate(([0.0], raw))
    else:
        raw[0] = 0.0  # tail at 0 may be below 1 when samples contain zeros
    hull = greatest_convex_minorant(grid, raw)
    hull[0] = 0.0
    return tabulated(grid, hull, mode="relaxed")


# ---------------------------------------------------------------------------
# serialization


def from_dict(doc: dict) -> GeneratorKind:
    """Rebuild a generator from its JSON document; validates on construction."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValidationError("generator document must be an object with a 'kind' field")
    kind = doc["kind"]
    if kind == "quadratic":
        _expect_keys(doc, {"kind", "a", "domain_max"})
        return quadratic(doc["a"], doc.get("domain_max", DEFAULT_DOMAIN_MAX))
    if kind == "regularized_power":
        _expect_keys(doc, {"kind", "m", "t0", "domain_max"})
        return make_regularized_power(doc["m"], doc["t0"], doc.get("domain_max"))
    if kind == "tabulated":
        _expect_keys(doc, {"kind", "grid", "values", "extrapolation"})
        return tabulated(
            doc["grid"], doc["values"], extrapolation=doc.get("extrapolation", "error")
        )
    if kind == "scaled":
        _expect_keys(doc, {"kind", "factor", "inner"})
        return scaled(from_dict(doc["inner"]), doc["factor"])
    raise ValidationError(f"unknown generator kind {kind!r}")


def from_json(text: str) -> GeneratorKind:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed generator JSON: {exc}") from exc
    return from_dict(doc)


def _expect_keys(doc: dict, allowed: set[str]) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ValidationError(f"unknown generator keys: {sorted(unknown)}")
