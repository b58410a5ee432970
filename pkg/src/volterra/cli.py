"""Command line interface: ``volterra run|demo|validate|ml-eval``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort,
4 slope outside a [check] window (only with ``--check``).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

from .errors import (
    ConfigError,
    DomainError,
    FactorizationError,
    NonConvergenceError,
    NonFiniteError,
    PrecisionExhaustedError,
    QuadratureError,
    VolterraError,
)
from .harness import load_config, run_strong_error_study, run_trajectory_demo, write_study
from .model import validate_noise_regularity
from .special_functions import MLParams, ml_eval

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4

_NUMERIC = (NonFiniteError, FactorizationError, NonConvergenceError,
            PrecisionExhaustedError, QuadratureError)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volterra", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="strong-error study")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides [output] dir)")
    run.add_argument("--workers", type=int, help="worker processes (overrides [study] workers)")
    run.add_argument("--check", action="store_true",
                     help="exit with code 4 if a fitted slope leaves its [check] window")
    demo = sub.add_parser("demo", help="dump sample trajectories")
    demo.add_argument("config")
    demo.add_argument("--out", help="output directory (overrides [output] dir)")
    val = sub.add_parser("validate", help="report on the noise and kernel assumptions")
    val.add_argument("config")
    ml = sub.add_parser("ml-eval", help="evaluate E_{a,b}(x)")
    ml.add_argument("a", type=float)
    ml.add_argument("b", type=float)
    ml.add_argument("x", type=float)
    return p


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be positive")
        cfg = replace(cfg, workers=args.workers)
    if args.check and not cfg.check:
        raise ConfigError("--check needs a [check] section")
    table = run_strong_error_study(cfg)
    out = args.out or cfg.output_dir
    write_study(table, out)
    sys.stdout.write(table.errors_csv())
    sys.stdout.write(table.slopes_csv())
    if args.check:
        status = EXIT_OK
        for meth, (lo, hi) in cfg.check.items():
            s = table.slopes[meth].slope
            ok = math.isfinite(s) and lo <= s <= hi
            print(f"check {meth}: slope {s:.4f} in [{lo}, {hi}]: {'PASS' if ok else 'FAIL'}")
            if not ok:
                status = EXIT_CHECK
        return status
    return EXIT_OK


def _cmd_demo(args) -> int:
    cfg = load_config(args.config)
    for f in run_trajectory_demo(cfg, args.out or cfg.output_dir):
        print(f)
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    inst = cfg.instance
    rep = validate_noise_regularity(inst.spectrum, inst.kernel)
    print(json.dumps({
        "rho": inst.kernel.rho,
        "modes": inst.N,
        "beta_estimate": rep.beta_estimate,
        "trace": rep.trace,
        "predicted_temporal_rate": rep.predicted_temporal_rate,
        "notes": rep.notes,
        "nonlinearity": inst.nonlinearity.name or inst.nonlinearity.kind,
        "lipschitz_hint": inst.nonlinearity.lipschitz_hint,
        "config_hash": cfg.digest(),
    }, indent=2))
    return EXIT_OK


def _cmd_ml_eval(args) -> int:
    print(repr(float(ml_eval(MLParams(args.a, args.b), args.x))))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "demo": _cmd_demo, "validate": _cmd_validate,
               "ml-eval": _cmd_ml_eval}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VolterraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
