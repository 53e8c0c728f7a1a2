"""The ``tailforge`` command: conjugate, bound, invert, calibrate, verify, ustat.

Each subcommand reads an optional JSON config (schema shipped in
``schemas/run_config.schema.json``) plus flag overrides; flags win. Unknown
config keys are rejected before any computation. The environment variable
``TAILFORGE_SEED`` overrides the seed from both config and flags.

Exit codes are a stable contract:

    0  success (for verify: dominance at every node)
    2  validation failure (bad config, bad generator, bad preconditions)
    3  domain error (evaluation outside representable ranges)
    4  calibration unsatisfiable
    5  dominance violation in verify
    6  resource cap exceeded

Report-producing paths render a matplotlib figure next to the delimited
output; pass --no-figure to suppress.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import bounds, conjugate, generators, simulate, ustat
from .errors import TailforgeError, ValidationError

_EXIT_VIOLATION = 5

_LAW_FAMILIES = ("gaussian", "rademacher", "uniform_centered", "extremal", "point_mass_zero")


# ---------------------------------------------------------------------------
# config plumbing


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed config JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    return doc


def _check_keys(doc: dict, allowed: dict, where: str) -> None:
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown {where} key(s): {sorted(unknown)}")
    for key, value in doc.items():
        expected = allowed[key]
        if expected is dict:
            if not isinstance(value, dict):
                raise ValidationError(f"{where} key {key!r} must be an object")
        elif expected is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValidationError(f"{where} key {key!r} must be a number")
        elif expected is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValidationError(f"{where} key {key!r} must be an integer")
        elif expected is str:
            if not isinstance(value, str):
                raise ValidationError(f"{where} key {key!r} must be a string")
        elif expected == "generator":
            if not isinstance(value, (dict, str)):
                raise ValidationError(f"{where} key {key!r} must be a generator object or path")


def _merge(config: dict, overrides: dict) -> dict:
    merged = dict(config)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _require(cfg: dict, key: str, command: str):
    if key not in cfg:
        raise ValidationError(f"{command} requires {key!r} (config key or flag)")
    return cfg[key]


def _load_generator(value) -> generators.TailGenerator:
    if isinstance(value, str):
        try:
            with open(value) as fh:
                text = fh.read()
        except OSError as exc:
            raise ValidationError(f"cannot read generator file {value}: {exc}") from exc
        return generators.from_json(text)
    if isinstance(value, dict):
        return generators.from_dict(value)
    raise ValidationError("generator must be an inline object or a path to a JSON file")


def _seed_from_env(seed):
    env = os.environ.get("TAILFORGE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationError(f"TAILFORGE_SEED must be an integer, got {env!r}") from exc
    return seed


def _t_grid_from(cfg: dict) -> np.ndarray:
    grid = cfg.get("t_grid")
    if grid is None:
        raise ValidationError("missing t_grid: {min, max, points}")
    _check_keys(grid, {"min": float, "max": float, "points": int}, "t_grid")
    for key in ("min", "max", "points"):
        if key not in grid:
            raise ValidationError(f"t_grid requires {key!r}")
    return np.linspace(grid["min"], grid["max"], grid["points"])


def _figure_path(out: str | None, explicit: str | None, enabled: bool) -> str | None:
    if not enabled or out is None:
        return explicit if enabled else None
    if explicit is not None:
        return explicit
    base, _ = os.path.splitext(out)
    return base + ".png"


def _write_or_print(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _constant_from(cfg: dict, command: str) -> float:
    if "constant" in cfg:
        value = cfg["constant"]
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValidationError("constant must be a number")
        return float(value)
    if "calibration" in cfg:
        try:
            with open(cfg["calibration"]) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read calibration file: {exc}") from exc
        if not isinstance(doc, dict) or "constant" not in doc:
            raise ValidationError("calibration file must contain a 'constant' field")
        return float(doc["constant"])
    raise ValidationError(
        f"{command} needs a constant: pass 'constant' or a 'calibration' file reference"
    )


def _law_log_mgf(law: dict, command: str) -> bounds.LogMgf:
    _check_keys(
        law,
        {"family": str, "sigma": float, "a": float, "generator": "generator", "samples": str},
        "law",
    )
    if "samples" in law:
        try:
            data = np.loadtxt(law["samples"])
        except OSError as exc:
            raise ValidationError(f"cannot read samples file: {exc}") from exc
        return bounds.empirical_log_mgf(np.atleast_1d(data), name=f"empirical({law['samples']})")
    family = law.get("family")
    if family not in _LAW_FAMILIES:
        raise ValidationError(f"{command} law family must be one of {_LAW_FAMILIES}")
    if family == "gaussian":
        return bounds.normal_log_mgf(law.get("sigma", 1.0))
    if family == "rademacher":
        return bounds.rademacher_log_mgf()
    if family == "uniform_centered":
        return bounds.uniform_centered_log_mgf(law.get("a", 1.0))
    if family == "point_mass_zero":
        return bounds.point_mass_zero_log_mgf()
    if "generator" not in law:
        raise ValidationError("extremal law needs a 'generator'")
    return bounds.extremal_log_mgf(_load_generator(law["generator"]))


def _sampler_from(cfg: dict, seed: int) -> simulate.SamplerSpec:
    sampler = cfg.get("sampler")
    if sampler is None:
        raise ValidationError("missing 'sampler' object")
    _check_keys(
        sampler,
        {"family": str, "sigma": float, "a": float, "generator": "generator"},
        "sampler",
    )
    family = sampler.get("family")
    kwargs = {}
    if "sigma" in sampler:
        kwargs["sigma"] = float(sampler["sigma"])
    if "a" in sampler:
        kwargs["a"] = float(sampler["a"])
    if "generator" in sampler:
        kwargs["generator"] = _load_generator(sampler["generator"])
    return simulate.SamplerSpec(family=family, seed=seed, **kwargs)


def _kernel_spec_from(cfg: dict) -> ustat.UStatSpec:
    kernel_cfg = cfg.get("kernel")
    if kernel_cfg is None:
        raise ValidationError("missing 'kernel' object: {name, ...params}")
    if not isinstance(kernel_cfg, dict) or "name" not in kernel_cfg:
        raise ValidationError("kernel must be an object with a 'name'")
    params = {k: v for k, v in kernel_cfg.items() if k != "name"}
    return ustat.UStatSpec(kernel=ustat.make_kernel(kernel_cfg["name"], **params))


# ---------------------------------------------------------------------------
# subcommands


_CONJUGATE_KEYS = {
    "generator": "generator",
    "lambda_max": float,
    "points": int,
    "out": str,
}


def cmd_conjugate(args) -> int:
    cfg = _merge(_load_config(args.config), {
        "generator": args.generator,
        "lambda_max": args.lambda_max,
        "points": args.points,
        "out": args.out,
    })
    _check_keys(cfg, _CONJUGATE_KEYS, "conjugate config")
    g = _load_generator(_require(cfg, "generator", "conjugate"))
    points = int(cfg.get("points", conjugate.DEFAULT_GRID_POINTS))
    lambda_grid = None
    if "lambda_max" in cfg:
        lambda_grid = np.linspace(0.0, float(cfg["lambda_max"]), points)
    table = conjugate.conjugate(g, lambda_grid, points=points)
    out = cfg.get("out")
    _write_or_print(table.to_csv(), out)
    fig = _figure_path(out, args.figure, not args.no_figure)
    if fig is not None:
        from . import plots

        plots.render_conjugate(table, fig)
    return 0


_BOUND_KEYS = {
    "generator": "generator",
    "constant": float,
    "calibration": str,
    "n": int,
    "degree": int,
    "side": str,
    "t_grid": dict,
    "out": str,
}


def _query_from(cfg: dict, command: str) -> bounds.BoundQuery:
    g = _load_generator(_require(cfg, "generator", command))
    constant = _constant_from(cfg, command)
    return bounds.BoundQuery(
        generator=g,
        constant=constant,
        n=int(_require(cfg, "n", command)),
        degree=int(cfg.get("degree", 1)),
        side=cfg.get("side", "bilateral"),
    )


def cmd_bound(args) -> int:
    cfg = _merge(_load_config(args.config), {
        "generator": args.generator,
        "constant": args.constant,
        "calibration": args.calibration,
        "n": args.n,
        "degree": args.degree,
        "side": args.side,
        "out": args.out,
    })
    if args.t_min is not None or args.t_max is not None or args.t_points is not None:
        grid = dict(cfg.get("t_grid", {}))
        if args.t_min is not None:
            grid["min"] = args.t_min
        if args.t_max is not None:
            grid["max"] = args.t_max
        if args.t_points is not None:
            grid["points"] = args.t_points
        cfg["t_grid"] = grid
    _check_keys(cfg, _BOUND_KEYS, "bound config")
    query = _query_from(cfg, "bound")
    t_grid = _t_grid_from(cfg)
    results = (
        bounds.bound_curve(query, t_grid)
        if query.degree == 1
        else [bounds.ustat_tail_bound(query, float(t)) for t in t_grid]
    )
    out = cfg.get("out")
    _write_or_print(bounds.bound_curve_csv(results), out)
    fig = _figure_path(out, args.figure, not args.no_figure)
    if fig is not None:
        from . import plots

        plots.render_bound_curve(results, fig, n=query.n)
    return 0


_INVERT_KEYS = {
    "generator": "generator",
    "constant": float,
    "calibration": str,
    "n": int,
    "degree": int,
    "side": str,
    "alpha": float,
    "out": str,
}


def cmd_invert(args) -> int:
    cfg = _merge(_load_config(args.config), {
        "generator": args.generator,
        "constant": args.constant,
        "calibration": args.calibration,
        "n": args.n,
        "degree": args.degree,
        "side": args.side,
        "alpha": args.alpha,
        "out": args.out,
    })
    _check_keys(cfg, _INVERT_KEYS, "invert config")
    query = _query_from(cfg, "invert")
    alpha = float(_require(cfg, "alpha", "invert"))
    radius = bounds.invert_bound(query, alpha)
    doc = {"t": radius, "alpha": alpha, "n": query.n, "side": query.side}
    out = cfg.get("out")
    if out is None:
        sys.stdout.write(f"{radius!r}\n")
    else:
        _write_or_print(json.dumps(doc, indent=2), out)
    return 0


_CALIBRATE_KEYS = {
    "generator": "generator",
    "law": dict,
    "lambda_range": float,
    "tol": float,
    "out": str,
}


def cmd_calibrate(args) -> int:
    cfg = _merge(_load_config(args.config), {
        "generator": args.generator,
        "lambda_range": args.lambda_range,
        "tol": args.tol,
        "out": args.out,
    })
    if args.law is not None:
        try:
            cfg["law"] = json.loads(args.law)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"--law must be valid JSON: {exc}") from exc
    _check_keys(cfg, _CALIBRATE_KEYS, "calibrate config")
    g = _load_generator(_require(cfg, "generator", "calibrate"))
    law = _require(cfg, "law", "calibrate")
    if not isinstance(law, dict):
        raise ValidationError("law must be an object")
    mgf = _law_log_mgf(law, "calibrate")
    result = bounds.calibrate_constant(
        g,
        mgf,
        float(_require(cfg, "lambda_range", "calibrate")),
        tol=float(cfg.get("tol", 1e-3)),
    )
    _write_or_print(result.to_json() + "\n", cfg.get("out"))
    if result.degenerate:
        sys.stderr.write("warning: degenerate calibration (constant at bisection floor)\n")
    return 0


_VERIFY_KEYS = {
    "mode": str,
    "sampler": dict,
    "generator": "generator",
    "constant": float,
    "calibration": str,
    "auto_calibrate": dict,
    "n": int,
    "replicates": int,
    "delta": float,
    "side": str,
    "t_grid": dict,
    "kernel": dict,
    "seed": int,
    "threads": int,
    "out": str,
}

_AUTO_CAL_KEYS = {"lambda_range": float, "tol": float, "replicates": int}


def cmd_verify(args) -> int:
    cfg = _merge(_load_config(args.config), {
        "mode": args.mode,
        "n": args.n,
        "replicates": args.replicates,
        "delta": args.delta,
        "constant": args.constant,
        "calibration": args.calibration,
        "seed": args.seed,
        "threads": args.threads,
        "out": args.out,
    })
    _check_keys(cfg, _VERIFY_KEYS, "verify config")
    mode = cfg.get("mode", "sum")
    if mode not in ("sum", "ustat"):
        raise ValidationError(f"verify mode must be 'sum' or 'ustat', got {mode!r}")
    seed = _seed_from_env(cfg.get("seed", 0))
    sampler = _sampler_from(cfg, int(seed))
    g = _load_generator(_require(cfg, "generator", "verify"))
    n = int(_require(cfg, "n", "verify"))
    replicates = int(_require(cfg, "replicates", "verify"))
    delta = float(cfg.get("delta", 0.01))
    side = cfg.get("side", "bilateral")
    threads = int(cfg.get("threads", 1))
    t_grid = _t_grid_from(cfg)
    spec = _kernel_spec_from(cfg) if mode == "ustat" else None
    degree = spec.degree if spec is not None else 1

    calibration = None
    if "auto_calibrate" in cfg:
        auto = cfg["auto_calibrate"]
        _check_keys(auto, _AUTO_CAL_KEYS, "auto_calibrate")
        lam_range = float(auto.get("lambda_range", 8.0))
        tol = float(auto.get("tol", 1e-3))
        if mode == "sum":
            calibration = bounds.calibrate_constant(g, sampler.log_mgf(), lam_range, tol=tol)
        else:
            cal_reps = int(auto.get("replicates", max(replicates, simulate.MIN_REPLICATES)))
            stats = simulate.sample_ustat_statistic(sampler, spec, n, cal_reps, threads=threads)
            source = bounds.ustat_envelope_log_mgf(stats, n)
            calibration = bounds.calibrate_constant(g, source, lam_range, tol=tol)
        constant = calibration.constant
    else:
        constant = _constant_from(cfg, "verify")

    query = bounds.BoundQuery(generator=g, constant=constant, n=n, degree=degree, side=side)
    if mode == "sum":
        report = simulate.run_sum_experiment(
            sampler, n, replicates, query, t_grid, delta, threads=threads
        )
    else:
        report = simulate.run_ustat_experiment(
            sampler, spec, n, replicates, query, t_grid, delta, threads=threads
        )
    if calibration is not None:
        # reproducibility: the report records how its constant was obtained
        report.metadata["calibration"] = calibration.to_json_dict()

    out = cfg.get("out")
    if out is None:
        sys.stdout.write(report.to_csv())
    else:
        base, ext = os.path.splitext(out)
        if ext not in (".csv", ".json"):
            base = out
        report.to_csv(base + ".csv")
        report.to_json(base + ".json")
        if not args.no_figure:
            from . import plots

            plots.render_tail_report(report, args.figure or base + ".png")
    if not report.dominance_overall:
        sys.stderr.write(
            f"dominance violated at {report.violations} node(s); see report\n"
        )
        return _EXIT_VIOLATION
    return 0


_USTAT_KEYS = {
    "kernel": dict,
    "data": str,
    "cap": int,
    "out": str,
}


def cmd_ustat(args) -> int:
    cfg = _merge(_load_config(args.config), {
        "data": args.data,
        "cap": args.cap,
        "out": args.out,
    })
    if args.kernel is not None:
        try:
            cfg["kernel"] = json.loads(args.kernel)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"--kernel must be valid JSON: {exc}") from exc
    _check_keys(cfg, _USTAT_KEYS, "ustat config")
    spec = _kernel_spec_from(cfg)
    data_path = _require(cfg, "data", "ustat")
    try:
        sample = np.loadtxt(data_path)
    except OSError as exc:
        raise ValidationError(f"cannot read data file {data_path}: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"data file must hold one number per line: {exc}") from exc
    sample = np.atleast_1d(np.asarray(sample, dtype=float))
    cap = int(cfg.get("cap", ustat.ENUMERATION_CAP))
    value = ustat.evaluate_ustat(spec, sample, cap=cap)
    doc = {
        "value": value.value,
        "n": value.n,
        "combinations": value.combinations,
        "k": value.k,
    }
    out = cfg.get("out")
    if out is None:
        sys.stdout.write(f"{value.value!r}\n")
    else:
        _write_or_print(json.dumps(doc, indent=2), out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--out", help="output file path (stdout when omitted)")


def _add_figure_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--figure", help="explicit figure path (default: alongside --out)")
    p.add_argument("--no-figure", action="store_true", help="suppress figure rendering")


def _add_query_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--generator", help="generator JSON file")
    p.add_argument("--constant", type=float, help="calibrated constant")
    p.add_argument("--calibration", help="calibration JSON file holding the constant")
    p.add_argument("--n", type=int, help="sample size")
    p.add_argument("--degree", type=int, help="kernel degree (default 1)")
    p.add_argument("--side", choices=["upper", "lower", "bilateral"], help="bound side")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tailforge",
        description="Exponential tail bounds: conjugation, calibration, inversion, verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("conjugate", help="tabulate a generator's convex conjugate")
    _add_common(p)
    _add_figure_flags(p)
    p.add_argument("--generator", help="generator JSON file")
    p.add_argument("--lambda-max", dest="lambda_max", type=float, help="dual grid upper end")
    p.add_argument("--points", type=int, help="grid node count (default 4096)")
    p.set_defaults(fn=cmd_conjugate)

    p = sub.add_parser("bound", help="evaluate the tail bound over a t-grid")
    _add_common(p)
    _add_figure_flags(p)
    _add_query_flags(p)
    p.add_argument("--t-min", dest="t_min", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--t-points", dest="t_points", type=int)
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("invert", help="confidence radius: smallest t with bound <= alpha")
    _add_common(p)
    _add_query_flags(p)
    p.add_argument("--alpha", type=float, help="target bound level in (0, 1)")
    p.set_defaults(fn=cmd_invert)

    p = sub.add_parser("calibrate", help="smallest admissible envelope constant for a law")
    _add_common(p)
    p.add_argument("--generator", help="generator JSON file")
    p.add_argument("--law", help="law JSON, e.g. '{\"family\": \"gaussian\"}'")
    p.add_argument("--lambda-range", dest="lambda_range", type=float)
    p.add_argument("--tol", type=float, help="relative bisection tolerance (default 1e-3)")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("verify", help="Monte Carlo dominance check; exit 0 iff dominated")
    _add_common(p)
    _add_figure_flags(p)
    p.add_argument("--mode", choices=["sum", "ustat"])
    p.add_argument("--n", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--constant", type=float)
    p.add_argument("--calibration", help="calibration JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker thread cap (default 1)")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("ustat", help="exact U-statistic of a data file")
    _add_common(p)
    p.add_argument("--kernel", help="kernel JSON, e.g. '{\"name\": \"product\", \"degree\": 2}'")
    p.add_argument("--data", help="sample file, one value per line")
    p.add_argument("--cap", type=int, help="enumeration cap override")
    p.set_defaults(fn=cmd_ustat)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TailforgeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
