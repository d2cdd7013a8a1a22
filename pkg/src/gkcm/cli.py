"""Command-line interface: ``gkcm test | simulate | bench | tune``.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
Machine-readable output goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import engine, krr, simbench
from .data import load_csv, save_csv
from .exceptions import ConfigError, GKCMError
from .kernels import gram, median_gaussian

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

_SCENARIO_SCHEMA = {
    "oneOf": [
        {"type": "string"},
        {
            "type": "object",
            "properties": {
                "id": {"type": "string"},
                "case": {"enum": ["I", "II"]},
                "hypothesis": {"enum": ["null", "alt"]},
                "d": {"type": "integer", "minimum": 1},
                "incremental": {"type": "boolean"},
            },
            "required": ["id"],
            "additionalProperties": False,
        },
    ]
}

_METHOD_SCHEMA = {
    "oneOf": [
        {"type": "string"},
        {
            "type": "object",
            "properties": {
                "name": {"type": "string", "minLength": 1},
                "preset": {"enum": list(engine.PRESETS)},
                "stub": {"enum": list(simbench.STUBS)},
                "config": {"type": "object"},
            },
            "required": ["name"],
            "additionalProperties": False,
        },
    ]
}

CAMPAIGN_SCHEMA = {
    "type": "object",
    "properties": {
        "scenarios": {"type": "array", "minItems": 1, "items": _SCENARIO_SCHEMA},
        "sample_sizes": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 2}},
        "methods": {"type": "array", "minItems": 1, "items": _METHOD_SCHEMA},
        "reps": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "record_runtime": {"type": "boolean"},
        "out_dir": {"type": "string"},
    },
    "required": ["scenarios", "sample_sizes", "methods", "reps"],
    "additionalProperties": False,
}


class UsageError(Exception):
    pass


def _read_json(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def campaign_from_dict(cfg) -> simbench.CampaignSpec:
    try:
        jsonschema.validate(cfg, CAMPAIGN_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"campaign config invalid at {where}: {exc.message}") from exc
    return simbench.CampaignSpec(
        scenarios=tuple(cfg["scenarios"]),
        sample_sizes=tuple(cfg["sample_sizes"]),
        methods=tuple(cfg["methods"]),
        reps=cfg["reps"],
        alpha=cfg.get("alpha", 0.05),
        seed=cfg.get("seed", 0),
        record_runtime=cfg.get("record_runtime", False),
    )


def _test_config(args) -> engine.TestConfig:
    if args.config:
        raw = _read_json(args.config)
        cfg = engine.TestConfig.from_dict(raw)
    else:
        cfg = engine.preset(args.method or "gkcm-rf")
    over = {}
    if args.alpha is not None:
        over["alpha"] = args.alpha
    if args.seed is not None:
        over["seed"] = args.seed
    if args.pvalue is not None:
        over["pvalue_method"] = args.pvalue
    return cfg.with_(**over) if over else cfg


def cmd_test(args) -> int:
    cfg = _test_config(args)
    data = load_csv(args.data, args.x_cols, args.y_cols, args.z_cols)
    result = engine.run_test(data, cfg)
    print(result.to_json())
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = simbench.Scenario(
        args.scenario, case=args.case, hypothesis=args.hypothesis, d=args.d,
        incremental=not args.no_incremental,
    )
    data = simbench.generate(sc, args.n, args.seed)
    save_csv(data, args.out)
    return EXIT_OK


def cmd_tune(args) -> int:
    data = load_csv(args.data, args.x_cols, args.y_cols, args.z_cols)
    target = data.x if args.target == "x" else data.y
    out_spec = median_gaussian(target)
    in_spec = median_gaussian(data.z)
    grid = [float(g) for g in args.grid.split(",")] if args.grid else krr.default_grid(data.n)
    lam, scores = krr.loocv_lambda(data.z, gram(out_spec, target), in_spec, grid, seed=args.seed)
    payload = {
        "target": args.target,
        "lambda": lam,
        "grid": grid,
        "loo_scores": [None if np.isnan(s) else float(s) for s in scores],
        "input_kernel": in_spec.to_dict(),
        "output_kernel": out_spec.to_dict(),
    }
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def _default_jobs() -> int:
    raw = os.environ.get("GKCM_JOBS", "1")
    try:
        jobs = int(raw)
    except ValueError:
        raise UsageError(f"GKCM_JOBS must be an integer, got {raw!r}")
    if jobs < 1:
        raise UsageError("GKCM_JOBS must be at least 1")
    return jobs


def cmd_bench(args) -> int:
    cfg = _read_json(args.config)
    spec = campaign_from_dict(cfg)
    out_dir = args.out_dir or cfg.get("out_dir")
    if not out_dir:
        raise UsageError("an output directory is required (--out-dir or 'out_dir' in the config)")
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    if jobs < 1:
        raise UsageError("--jobs must be at least 1")
    if args.timing:
        spec = replace(spec, record_runtime=True)
    rows = simbench.run_campaign(
        spec, out_dir, jobs=jobs, resume=args.resume,
        progress=lambda msg: print(msg, file=sys.stderr, flush=True),
    )
    sys.stdout.write(simbench.results_csv(rows))
    return EXIT_OK


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV file")
    p.add_argument("--x-cols", required=True, help="names, indices, 'a:b' ranges or comma lists")
    p.add_argument("--y-cols", required=True)
    p.add_argument("--z-cols", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gkcm", description="Kernel conditional independence tests.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="test X independent of Y given Z on a CSV file")
    _add_data_args(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--config", help="test config JSON")
    g.add_argument("--method", choices=engine.PRESETS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--pvalue", choices=("imhof", "moment", "mc"))
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="write a simulated dataset")
    p.add_argument("--scenario", required=True, choices=simbench.SCENARIO_IDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--case", choices=("I", "II"))
    p.add_argument("--hypothesis", choices=("null", "alt"))
    p.add_argument("--d", type=int)
    p.add_argument("--no-incremental", action="store_true",
                   help="draw zhang datasets independently for each d")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run a rejection-rate campaign")
    p.add_argument("--config", required=True, help="campaign config JSON")
    p.add_argument("--out-dir")
    p.add_argument("--resume", action="store_true", help="reuse finished cells")
    p.add_argument("--jobs", type=int, help="parallel cells (default: $GKCM_JOBS or 1)")
    p.add_argument("--timing", action="store_true", help="fill the mean_runtime_ms column")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("tune", help="choose the ridge parameter by leave-one-out")
    _add_data_args(p)
    p.add_argument("--target", choices=("x", "y"), default="x")
    p.add_argument("--grid", help="comma-separated lambda values")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"gkcm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GKCMError, OSError, ValueError, ArithmeticError) as exc:
        print(f"gkcm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
