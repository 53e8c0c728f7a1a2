"""Monte Carlo verification harness for the tail bounds.

Samples reference laws (including the extremal law whose two-sided tail is
exactly exp(-g)), forms normalized sums or scaled U-statistics over many
replicates, estimates two-sided empirical tails with a DKW band, and checks
node-by-node dominance of the empirical tail by the theoretical bound.

Randomness contract: the counter-based 64-bit Philox generator, with one
independent stream per replicate keyed by (seed, replicate index). Chunked,
threaded, and serial executions therefore produce bit-identical reports.
Nodes where the bound falls below 10 / replicates are flagged unresolvable:
Monte Carlo at that size cannot confirm them, and they are never reported
as confirmation.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._util import dkw_epsilon, format_sig, tail_fraction
from .bounds import (
    BoundQuery,
    LogMgf,
    extremal_log_mgf,
    normal_log_mgf,
    rademacher_log_mgf,
    uniform_centered_log_mgf,
)
from .conjugate import InverseTable
from .errors import DomainError, ValidationError
from .generators import TailGenerator
from .ustat import UStatSpec, evaluate_ustat_batch

_FAMILIES = ("gaussian", "rademacher", "extremal", "uniform_centered")

MIN_REPLICATES = 10_000

#: bound values below RESOLVABLE_FACTOR / replicates are unresolvable at that N
RESOLVABLE_FACTOR = 10.0

#: calibration draws use stream indices offset by this, disjoint from verification
CALIBRATION_STREAM_OFFSET = 1 << 32

_MASK64 = (1 << 64) - 1


class ReplicateStreams:
    """Per-replicate Philox streams keyed by (seed, replicate index).

    Re-keys one reusable bit generator instead of constructing a fresh one
    per replicate; the output is bit-identical to
    Generator(Philox(key=[seed, index])) and about an order of magnitude
    cheaper. The returned Generator is shared: finish drawing for one
    replicate before requesting the next stream. Not thread-safe; give each
    worker its own instance.
    """

    def __init__(self, seed: int):
        self._key = np.zeros(2, dtype=np.uint64)
        self._key[0] = seed & _MASK64
        self._counter = np.zeros(4, dtype=np.uint64)
        self._buffer = np.zeros(4, dtype=np.uint64)
        self._bitgen = np.random.Philox(key=self._key)
        self._gen = np.random.Generator(self._bitgen)

    def stream(self, index: int) -> np.random.Generator:
        self._key[1] = index & _MASK64
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {"counter": self._counter, "key": self._key},
            "buffer": self._buffer,
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._gen


def replicate_stream(seed: int, index: int) -> np.random.Generator:
    """Reference construction of the (seed, index) stream; used in tests."""
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SamplerSpec:
    """A symmetric centered reference law plus the experiment seed.

    Families: gaussian(sigma), rademacher, uniform_centered(a), and
    extremal(generator) whose |draw| has tail exactly exp(-g(t)).
    """

    family: str
    seed: int
    sigma: float = 1.0
    a: float = 1.0
    generator: TailGenerator | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValidationError(f"unknown sampler family {self.family!r}; choose from {_FAMILIES}")
        if self.family == "gaussian" and not self.sigma > 0.0:
            raise ValidationError("gaussian sampler needs sigma > 0")
        if self.family == "uniform_centered" and not self.a > 0.0:
            raise ValidationError("uniform_centered sampler needs half-width a > 0")
        if self.family == "extremal":
            g = self.generator
            if g is None:
                raise ValidationError("extremal sampler needs a tail generator")
            if g.validation is None or not g.validation.passed:
                raise ValidationError(
                    "extremal sampler requires a generator that passed validation"
                )

    def describe(self) -> dict:
        doc = {"family": self.family, "seed": self.seed}
        if self.family == "gaussian":
            doc["sigma"] = self.sigma
        elif self.family == "uniform_centered":
            doc["a"] = self.a
        elif self.family == "extremal":
            doc["generator"] = self.generator.to_dict()
        return doc

    def log_mgf(self) -> LogMgf:
        """Matching log-MGF source for calibrating a constant against this law."""
        if self.family == "gaussian":
            return normal_log_mgf(self.sigma)
        if self.family == "rademacher":
            return rademacher_log_mgf()
        if self.family == "uniform_centered":
            return uniform_centered_log_mgf(self.a)
        return extremal_log_mgf(self.generator)


class _ExtremalDrawer:
    """Inverse-transform draws for the extremal law with resample accounting.

    The InverseTable is immutable and shared; counters are local, so each
    worker thread uses its own drawer.
    """

    def __init__(self, inverter: InverseTable):
        self._inverter = inverter
        self._u_floor = math.exp(-inverter.max_target)
        self.resampled = 0
        self.drawn = 0

    def uniforms(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Magnitude uniforms with out-of-domain draws replaced, stream-order."""
        u = rng.random(count)
        self.drawn += count
        for _ in range(128):
            bad = u < self._u_floor  # -log u would exceed g(domain_max)
            n_bad = int(np.count_nonzero(bad))
            if n_bad == 0:
                return u
            self.resampled += n_bad
            u[bad] = rng.random(n_bad)
        raise DomainError("extremal sampler could not draw inside the domain")

    def magnitudes(self, u: np.ndarray) -> np.ndarray:
        return self._inverter.interpolate(-np.log(u))

    def check_rate(self):
        if self.drawn and self.resampled / self.drawn > 1e-6:
            raise DomainError(
                f"extremal sampler resampled {self.resampled} of {self.drawn} draws "
                "(> 1e-6): generator domain too short for this sample size"
            )


def sample_extremal(g: TailGenerator, count: int, seed: int) -> np.ndarray:
    """Draw `count` values from the symmetric law with |X| tail exactly exp(-g).

    Inverse transform: magnitude solves g(t) = -log(u) for uniform u, sign is
    an independent fair coin. Draws whose magnitude would exceed domain_max
    are resampled (counted; rate above 1e-6 is a hard error). count=0 gives
    an empty array.
    """
    if count < 0:
        raise ValidationError(f"count must be nonnegative, got {count}")
    if g.validation is None or not g.validation.passed:
        raise ValidationError("sample_extremal requires a validated generator")
    if count == 0:
        return np.empty(0)
    drawer = _ExtremalDrawer(InverseTable(g))
    rng = replicate_stream(seed, 0)
    u = drawer.uniforms(rng, count)
    magnitudes = drawer.magnitudes(u)
    signs = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    drawer.check_rate()
    return signs * magnitudes


def empirical_tail(samples, t_grid) -> np.ndarray:
    """Fraction of samples with |value| strictly above each grid point."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValidationError("empirical_tail needs a nonempty sample")
    sorted_abs = np.sort(np.abs(samples))
    return tail_fraction(sorted_abs, np.asarray(t_grid, dtype=float))


# ---------------------------------------------------------------------------
# replicate statistics


def _chunks(total: int, size: int):
    for start in range(0, total, size):
        yield start, min(start + size, total)


def _gather_matrix(
    sampler: SamplerSpec, reps: range, n: int, drawer: _ExtremalDrawer | None
) -> np.ndarray:
    """(len(reps), n) draw matrix, one stream per replicate."""
    streams = ReplicateStreams(sampler.seed)
    out = np.empty((len(reps), n))
    fam = sampler.family
    if fam == "gaussian":
        for i, r in enumerate(reps):
            out[i] = streams.stream(r).standard_normal(n)
        out *= sampler.sigma
    elif fam == "rademacher":
        for i, r in enumerate(reps):
            out[i] = streams.stream(r).random(n)
        np.subtract(2.0 * (out < 0.5), 1.0, out=out)
    elif fam == "uniform_centered":
        for i, r in enumerate(reps):
            out[i] = streams.stream(r).random(n)
        out *= 2.0 * sampler.a
        out -= sampler.a
    else:  # extremal: magnitudes via one batched inversion per chunk
        signs = np.empty((len(reps), n))
        for i, r in enumerate(reps):
            rng = streams.stream(r)
            out[i] = drawer.uniforms(rng, n)
            signs[i] = rng.random(n)
        mags = drawer.magnitudes(out.ravel()).reshape(out.shape)
        out = np.where(signs < 0.5, -mags, mags)
    return out


def _replicate_statistics(
    sampler: SamplerSpec,
    n: int,
    replicates: int,
    stat_fn,
    *,
    threads: int = 1,
    chunk_size: int = 8192,
    stream_offset: int = 0,
) -> np.ndarray:
    inverter = InverseTable(sampler.generator) if sampler.family == "extremal" else None

    def work(bounds_pair):
        start, stop = bounds_pair
        reps = range(start + stream_offset, stop + stream_offset)
        drawer = _ExtremalDrawer(inverter) if inverter is not None else None
        stats = stat_fn(_gather_matrix(sampler, reps, n, drawer))
        drawn = drawer.drawn if drawer is not None else 0
        resampled = drawer.resampled if drawer is not None else 0
        return stats, drawn, resampled

    pieces = list(_chunks(replicates, chunk_size))
    if threads <= 1:
        results = [work(p) for p in pieces]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, pieces))
    drawn = sum(r[1] for r in results)
    resampled = sum(r[2] for r in results)
    if drawn and resampled / drawn > 1e-6:
        raise DomainError(
            f"extremal sampler resampled {resampled} of {drawn} draws (> 1e-6): "
            "generator domain too short for this experiment"
        )
    return np.concatenate([r[0] for r in results])


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True, eq=False)
class TailReport:
    """Empirical tail curve against the theoretical bound, with verdicts.

    dominance is the literal per-node check empirical <= bound + dkw_epsilon;
    dominance_overall is their conjunction. resolvable marks nodes whose
    bound exceeds RESOLVABLE_FACTOR / replicates; confirmation claims are
    only meaningful there, and `confirmed` collects dominance & resolvable.
    """

    t_grid: np.ndarray
    empirical: np.ndarray
    bound: np.ndarray
    log_bound_raw: np.ndarray
    dkw_epsilon: float
    delta: float
    replicates: int
    seed: int
    dominance: np.ndarray
    dominance_overall: bool
    resolvable: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def confirmed(self) -> np.ndarray:
        return self.dominance & self.resolvable

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(~self.dominance))

    def to_json_dict(self) -> dict:
        return {
            "t": self.t_grid.tolist(),
            "empirical": self.empirical.tolist(),
            "bound": self.bound.tolist(),
            "log_bound_raw": self.log_bound_raw.tolist(),
            "dkw_epsilon": self.dkw_epsilon,
            "delta": self.delta,
            "replicates": self.replicates,
            "seed": self.seed,
            "dominance": [bool(x) for x in self.dominance],
            "dominance_overall": self.dominance_overall,
            "resolvable": [bool(x) for x in self.resolvable],
            "unresolvable_nodes": int(np.count_nonzero(~self.resolvable)),
            "metadata": self.metadata,
        }

    def to_json(self, path=None) -> str | None:
        text = json.dumps(self.to_json_dict(), indent=2)
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text)
        return None

    def to_csv(self, path=None) -> str | None:
        lines = ["t,empirical,dkw_epsilon,bound,dominance"]
        for i in range(self.t_grid.size):
            lines.append(
                f"{format_sig(self.t_grid[i], 9)},{format_sig(self.empirical[i], 9)},"
                f"{format_sig(self.dkw_epsilon, 9)},{format_sig(self.bound[i], 9)},"
                f"{str(bool(self.dominance[i])).lower()}"
            )
        text = "\n".join(lines) + "\n"
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text)
        return None


def _build_report(
    statistic: np.ndarray,
    sampler: SamplerSpec,
    query: BoundQuery,
    t_grid: np.ndarray,
    delta: float,
    extra_meta: dict,
) -> TailReport:
    n_reps = statistic.size
    emp = empirical_tail(statistic, t_grid)
    raw = math.log(query.side_multiplier) - query.n * np.asarray(
        query.generator.evaluate(query.scaled_argument(t_grid)), dtype=float
    )
    bound = np.minimum(1.0, np.exp(raw))
    eps = dkw_epsilon(n_reps, delta)
    dominance = emp <= bound + eps
    resolvable = bound >= RESOLVABLE_FACTOR / n_reps
    meta = {
        "sampler": sampler.describe(),
        "generator": query.generator.to_dict(),
        "constant": query.constant,
        "n": query.n,
        "degree": query.degree,
        "side": query.side,
    }
    meta.update(extra_meta)
    return TailReport(
        t_grid=t_grid,
        empirical=emp,
        bound=bound,
        log_bound_raw=raw,
        dkw_epsilon=eps,
        delta=delta,
        replicates=n_reps,
        seed=sampler.seed,
        dominance=dominance,
        dominance_overall=bool(np.all(dominance)),
        resolvable=resolvable,
        metadata=meta,
    )


def _check_experiment_args(replicates: int, t_grid) -> np.ndarray:
    if replicates < MIN_REPLICATES:
        raise ValidationError(
            f"need at least {MIN_REPLICATES} replicates for a meaningful band, got {replicates}"
        )
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValidationError("t_grid must be a nonempty 1-d array")
    if np.any(t_grid <= 0.0) or np.any(np.diff(t_grid) <= 0.0):
        raise ValidationError("t_grid must be positive and strictly increasing")
    return t_grid


def run_sum_experiment(
    sampler: SamplerSpec,
    n: int,
    replicates: int,
    query: BoundQuery,
    t_grid,
    delta: float = 0.01,
    *,
    threads: int = 1,
) -> TailReport:
    """Empirical two-sided tail of the normalized sum versus the bound.

    The statistic per replicate is sum of n draws divided by sqrt(n). The
    query's constant must have been calibrated for the sampler's law (see
    SamplerSpec.log_mgf and calibrate_constant); the harness cannot verify
    that and the verdict is only as good as the calibration.
    """
    t_grid = _check_experiment_args(replicates, t_grid)
    if n != query.n:
        raise ValidationError(f"query.n = {query.n} does not match experiment n = {n}")
    sqrt_n = math.sqrt(n)
    stats = _replicate_statistics(
        sampler, n, replicates, lambda mat: mat.sum(axis=1) / sqrt_n, threads=threads
    )
    return _build_report(stats, sampler, query, t_grid, delta, {"statistic": "sum/sqrt(n)"})


def run_ustat_experiment(
    sampler: SamplerSpec,
    spec: UStatSpec,
    n: int,
    replicates: int,
    query: BoundQuery,
    t_grid,
    delta: float = 0.01,
    *,
    threads: int = 1,
    normalization: str = "sqrt_n",
    sigma_n: float | None = None,
) -> TailReport:
    """Empirical two-sided tail of the scaled U-statistic versus the bound.

    The recorded statistic is sqrt(n) * U_n with U_n computed exactly per
    replicate by subset enumeration. normalization="sigma" divides U_n by a
    user-supplied sigma_n instead; that variant is experimental and carries
    no dominance guarantee from the implemented bounds.
    """
    t_grid = _check_experiment_args(replicates, t_grid)
    if n < spec.degree:
        raise ValidationError(f"sample size {n} is below the kernel degree {spec.degree}")
    if n != query.n:
        raise ValidationError(f"query.n = {query.n} does not match experiment n = {n}")
    if normalization == "sqrt_n":
        scale = math.sqrt(n)
    elif normalization == "sigma":
        if sigma_n is None or not sigma_n > 0.0:
            raise ValidationError("normalization='sigma' needs a positive sigma_n")
        scale = 1.0 / sigma_n
    else:
        raise ValidationError(f"unknown normalization {normalization!r}")
    stats = _replicate_statistics(
        sampler,
        n,
        replicates,
        lambda mat: scale * evaluate_ustat_batch(spec, mat),
        threads=threads,
    )
    meta = {
        "statistic": "sqrt(n)*U_n" if normalization == "sqrt_n" else "U_n/sigma_n",
        "kernel": {"name": spec.kernel.name, **spec.kernel.params},
        "normalization": normalization,
    }
    return _build_report(stats, sampler, query, t_grid, delta, meta)


def sample_ustat_statistic(
    sampler: SamplerSpec,
    spec: UStatSpec,
    n: int,
    replicates: int,
    *,
    threads: int = 1,
) -> np.ndarray:
    """sqrt(n) * U_n over replicates drawn from calibration-reserved streams.

    Stream indices are offset by CALIBRATION_STREAM_OFFSET so calibration
    draws never overlap the verification replicates of the same seed.
    """
    sqrt_n = math.sqrt(n)
    return _replicate_statistics(
        sampler,
        n,
        replicates,
        lambda mat: sqrt_n * evaluate_ustat_batch(spec, mat),
        threads=threads,
        stream_offset=CALIBRATION_STREAM_OFFSET,
    )
