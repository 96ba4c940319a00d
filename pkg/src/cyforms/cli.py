"""``cyforms`` command-line driver.

Subcommands: ``selftest``, ``solve-ma``, ``solve-new``, ``verify`` and
``moser``.  Exit codes: 0 success, 2 configuration error, 3 solver
divergence, 4 invariant or certificate failure.  ``CYFORMS_LOG`` sets the
log level (a name such as ``INFO`` or a number).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .config import SUBCOMMANDS, load_config, parse_config
from .errors import (
    ConfigError,
    CyFormsError,
    MongeAmpereError,
    OuterDiverged,
    StageError,
    UnsupportedDimension,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("cyforms.cli")


def _setup_logging():
    level = os.environ.get("CYFORMS_LOG", "WARNING").strip()
    value = int(level) if level.isdigit() else getattr(logging, level.upper(), logging.WARNING)
    logging.basicConfig(level=value, format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)


def _set_threads(n):
    from . import torus_calculus

    torus_calculus.set_threads(n)
    try:
        import numba
    except ImportError:
        return
    with warnings.catch_warnings():
        # numba probes TBB first and warns when the installed one is too old
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    return obj


def _emit(payload, path):
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def build_parser():
    p = argparse.ArgumentParser(prog="cyforms", description="Stable-form solver on flat tori.")
    p.add_argument("--version", action="version", version=f"cyforms {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML run configuration")
        s.add_argument("--out", help="output path (JSON report, or the flow dump for 'moser')")
        s.add_argument("--threads", type=int, default=None, help="FFT and kernel threads")
        s.add_argument("--seed", type=int, default=None, help="override the configured seed")
        if name in ("solve-new", "verify"):
            s.add_argument("--dump", nargs="+", metavar="PATH",
                           help="psi and Omega~ CYFF paths (written by solve-new, compared by verify)")
        if name == "solve-ma":
            s.add_argument("--dump-phi", help="write the potential as CYFF")
        if name == "moser":
            s.add_argument("--steps", type=int, default=None, help="RK4 steps (>= 16)")
        if name == "selftest":
            s.add_argument("--level", choices=("quick", "full"), default=None)
    return p


def _resolve_config(args):
    if args.config:
        cfg = load_config(args.config, args.subcommand)
    else:
        cfg = parse_config("", args.subcommand)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if getattr(args, "steps", None) is not None:
        if args.steps < 16:
            raise ConfigError("--steps must be >= 16")
        cfg.moser_steps = args.steps
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "dump", None):
        if len(args.dump) != 2:
            raise ConfigError("--dump takes two paths: psi and Omega~")
        cfg.dump = list(args.dump)
    if getattr(args, "dump_phi", None):
        cfg.dump_phi = args.dump_phi
    if getattr(args, "level", None):
        cfg.selftest_level = args.level
    return cfg


def _background(cfg):
    from .kahler import standard_background

    return standard_background(cfg.n, cfg.sizes)


# --------------------------------------------------------------- commands


def cmd_selftest(cfg):
    from .selftest import run_selftest

    code, summary = run_selftest(cfg.selftest_level, seed=cfg.seed)
    for name in summary["failed"]:
        log.error("invariant failed: %s", name)
    _emit(summary, cfg.out)
    return code


def cmd_solve_ma(cfg):
    from .kahler import normalize_density, positivity_margin
    from .monge_ampere import kahler_form, solve_monge_ampere

    bg = _background(cfg)
    G = normalize_density(cfg.density_field(bg.grid), bg, "omega_power")
    phi, rep = solve_monge_ampere(G, bg, cfg.ma)
    if cfg.dump_phi:
        from .io import write_cyff

        write_cyff(cfg.dump_phi, phi)
    _emit({"report": rep.to_dict(), "normalization_ratio": G.ratio, "config": cfg.echo(),
           "kahler_margin": positivity_margin(kahler_form(phi, bg))}, cfg.out)
    return EXIT_OK


def _solve_new(cfg):
    from dataclasses import replace

    from .pipeline import solve_new_equation

    bg = _background(cfg)
    pipe = replace(cfg.pipeline, gauge_seed=cfg.seed)
    F = cfg.density_field(bg.grid)
    return bg, F, pipe, solve_new_equation(F, bg, pipe)


def cmd_solve_new(cfg):
    from .pipeline import certificate_json, default_bounds

    _, _, _, (psi, Om, cert, rep) = _solve_new(cfg)
    if cfg.dump:
        from .io import write_cyff

        write_cyff(cfg.dump[0], psi)
        write_cyff(cfg.dump[1], Om)
    failed = cert.check(default_bounds(cfg.n))
    payload = certificate_json(cert, rep, cfg.echo())
    payload["failed_bounds"] = failed
    _emit(payload, cfg.out)
    for name in failed:
        log.error("certificate bound failed: %s", name)
    return EXIT_INVARIANT if failed else EXIT_OK


def cmd_verify(cfg):
    """Re-solve, recompute the certificate from scratch and compare with any dumps."""
    from .pipeline import certificate_json, default_bounds, verify_certificate

    bg, F, _, (psi, Om, cert, rep) = _solve_new(cfg)
    fresh = verify_certificate(psi, Om, F, bg)
    a, b = cert.to_dict(), fresh.to_dict()
    drift = max(abs(a[k] - b[k]) for k in a if isinstance(a[k], float) and math.isfinite(a[k]))
    failed = fresh.check(default_bounds(cfg.n))
    if drift > 1e-12:
        failed.append("recomputed_certificate")
    dumps = {}
    if cfg.dump:
        from .io import read_cyff

        # CYFF stores complex64, so a dump agrees with the solution to single precision
        for label, path, ref in (("psi", cfg.dump[0], psi), ("omega_tilde", cfg.dump[1], Om)):
            d = read_cyff(path)
            err = (d - ref).norm_inf() / max(ref.norm_inf(), 1e-300) if d.grid.shape == ref.grid.shape else math.inf
            dumps[label] = err
            if not err <= 1e-6:
                failed.append(f"dump:{label}")
    payload = certificate_json(fresh, rep, cfg.echo())
    payload.update(failed_bounds=failed, certificate_drift=drift, dump_mismatch=dumps)
    _emit(payload, cfg.out)
    for name in failed:
        log.error("verification failed: %s", name)
    return EXIT_INVARIANT if failed else EXIT_OK


def cmd_moser(cfg):
    from .io import write_flow_dump
    from .kahler import normalize_density
    from .monge_ampere import solve_monge_ampere
    from .moser import MoserPath, integrate_flow, symplectomorphism_residual

    bg = _background(cfg)
    G = normalize_density(cfg.density_field(bg.grid), bg, "omega_power")
    phi, rep = solve_monge_ampere(G, bg, cfg.ma)
    path = MoserPath.from_potential(phi, bg)
    t0 = time.perf_counter()
    flow = integrate_flow(path, bg, cfg.moser_steps, cfg.moser_direction, cfg.moser_method)
    elapsed = time.perf_counter() - t0
    if cfg.out:
        write_flow_dump(cfg.out, flow)
    summary = {
        "steps": cfg.moser_steps,
        "direction": cfg.moser_direction,
        "method": cfg.moser_method,
        "det_min": flow.det_min(),
        "flow_seconds": elapsed,
        "ma_iterations": rep.iterations,
        "config": cfg.echo(),
    }
    if cfg.moser_direction == "forward":
        summary["symplectomorphism_residual"] = symplectomorphism_residual(flow, path, bg)
    print(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "selftest": cmd_selftest,
    "solve-ma": cmd_solve_ma,
    "solve-new": cmd_solve_new,
    "verify": cmd_verify,
    "moser": cmd_moser,
}


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = _resolve_config(args)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be positive")
            _set_threads(args.threads)
        return COMMANDS[args.subcommand](cfg)
    except (ConfigError, UnsupportedDimension) as exc:
        print(f"cyforms: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OuterDiverged, MongeAmpereError, StageError) as exc:
        print(f"cyforms: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CyFormsError as exc:
        print(f"cyforms: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
