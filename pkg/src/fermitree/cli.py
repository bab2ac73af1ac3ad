"""Command-line front end.

Exit codes: 0 success, 1 a verify check failed, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from contextlib import contextmanager

import numpy as np

from .config import Config, load_config
from .errors import ConfigurationError, DomainError, NumericError, ResourceError
from .estimator import estimate_log_ratio, estimate_observable
from .greens import build_dense, decay_profile
from .oracle import exact_logZ0_free

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _clean(x):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


@contextmanager
def _output(path):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def _emit(fh, record: dict) -> None:
    fh.write(json.dumps(_clean(record), allow_nan=False) + "\n")
    fh.flush()


def _config(args) -> Config:
    cfg = load_config(args.config, args.set)
    extra = {}
    if args.seed is not None:
        extra["run.seed"] = args.seed
    if args.threads is not None:
        extra["run.threads"] = args.threads
    return cfg.with_overrides(**extra) if extra else cfg


def _warn(est) -> None:
    if est.diagnostics.get("warning"):
        print(f"warning: {est.diagnostics['warning']}", file=sys.stderr)


def run_logz(args) -> int:
    cfg = _config(args)
    h, V = cfg.build_model()
    run = cfg.run_config()
    t0 = time.perf_counter()
    est = estimate_log_ratio(run, V, cfg.provider(h))
    _warn(est)
    logZ0 = exact_logZ0_free(h, run.beta)
    rec = est.to_record()
    rec.update(
        logZ0=logZ0,
        logZ=logZ0 + est.value - run.beta * V.energy_offset,
        energy_offset=V.energy_offset,
        seed=run.seed,
        wall_time_s=time.perf_counter() - t0,
        config=cfg.echo(),
    )
    with _output(args.out) as fh:
        _emit(fh, rec)
    return EXIT_OK


def run_observable(args) -> int:
    cfg = _config(args)
    h, V = cfg.build_model()
    run = cfg.run_config()
    O = cfg.observable()
    if V.terms and O.m > V.max_order_M:
        raise ConfigurationError(f"observable order {O.m} exceeds the interaction order M={V.max_order_M}")
    t0 = time.perf_counter()
    est = estimate_observable(run, V, cfg.provider(h), O)
    _warn(est)
    rec = est.to_record()
    rec.update(seed=run.seed, wall_time_s=time.perf_counter() - t0, config=cfg.echo())
    with _output(args.out) as fh:
        _emit(fh, rec)
    return EXIT_OK


def run_greens_profile(args) -> int:
    cfg = _config(args)
    h, _ = cfg.build_model()
    prof = decay_profile(build_dense(h, cfg["run.beta"]), cfg["run.tau_grid"])
    with _output(args.out) as fh:
        for d, g in prof.rows():
            _emit(fh, {"kind": "row", "distance": d, "max_abs_g": g})
        _emit(fh, {"kind": "fit", "fitted_K": prof.fitted_K, "fitted_xi": prof.fitted_xi,
                   "n_rows": len(prof.distances), "config": cfg.echo()})
    return EXIT_OK


def run_verify(args) -> int:
    from .checks import run_checks

    cfg = _config(args)
    failed = []
    t0 = time.perf_counter()
    with _output(args.out) as fh:
        for result in run_checks(cfg):
            _emit(fh, result.to_record())
            mark = "PASS" if result.passed else "FAIL"
            print(f"{mark:4}  {result.check:28} observed={result.observed:.6g} "
                  f"expected={result.expected:.6g} tol={result.tolerance:.3g}", file=sys.stderr)
            if not result.passed:
                failed.append(result.check)
        _emit(fh, {"kind": "summary", "passed": not failed, "failed": failed,
                   "seed": cfg["run.seed"], "wall_time_s": time.perf_counter() - t0})
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS = {
    "logz": run_logz,
    "observable": run_observable,
    "verify": run_verify,
    "greens-profile": run_greens_profile,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML configuration file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override one configuration key (repeatable)")
    common.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
    common.add_argument("--out", metavar="PATH", help="write JSON lines here instead of stdout")
    common.add_argument("--threads", type=int, help="worker threads (overrides run.threads)")
    parser = argparse.ArgumentParser(prog="fermitree", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("logz", parents=[common], help="estimate log(Z/Z0) and log Z")
    sub.add_parser("observable", parents=[common], help="estimate a local observable")
    sub.add_parser("verify", parents=[common], help="run the self-checks against the exact oracle")
    sub.add_parser("greens-profile", parents=[common], help="distance profile of |g|")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ResourceError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
