"""Command-line front end.

Subcommands: ``simulate``, ``recover``, ``phase-transition``, ``roc`` and
``certify``. Every run writes its outputs plus a ``<out>.manifest.json``
sidecar holding the parameters, seed, tool version and wall-clock time.
Outputs themselves contain no timing, so identical parameters give
byte-identical files.

Exit codes: 0 success, 2 usage error, 3 invalid configuration (including
the aperture condition), 4 malformed input file, 5 size budget exceeded,
1 anything else.
"""
import argparse
import json
import math
import sys
import time

import numpy as np

from . import __version__
from ._validation import ApertureConditionError, BudgetError
from .experiments import (
    certificate_trials,
    gaussian_noise,
    phase_transition,
    random_scene,
    roc_curve,
    snr_to_eta,
    write_curve_csv,
    write_roc_csv,
)
from .geometry import ConfigParseError, ImagingConfig, sample_antennas
from .operator import ScatteringOperator
from .solver import PdhgParams, solve_bp, solve_bpdn, write_iterate_log

MEASUREMENT_FORMAT = "arrayimaging-measurement/1"
SOLUTION_FORMAT = "arrayimaging-solution/1"

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_CONFIG, EXIT_INPUT, EXIT_BUDGET = 0, 1, 2, 3, 4, 5


class InputFormatError(ValueError):
    pass


# -- argument helpers -----------------------------------------------------


def _int_list(text):
    """``20,22,24`` or ``start:stop:step`` (stop inclusive)."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) > 2 else 1
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None


def _float_list(text):
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def _add_config_flags(p):
    g = p.add_argument_group("imaging configuration")
    g.add_argument("--config", help="key = value config file (defaults: lambda 0.03, B 30, z0 10000, d0 10)")
    g.add_argument("--lambda-m", type=float, dest="lambda_m", help="wavelength")
    g.add_argument("--aperture-m", type=float, dest="aperture_m", help="aperture side B")
    g.add_argument("--range-m", type=float, dest="range_m", help="target range z0")
    g.add_argument("--mesh-m", type=float, dest="mesh_m", help="grid mesh size d0")
    g.add_argument("--halfsize-m", type=float, dest="halfsize_m", help="target domain half-width L")
    g.add_argument("--domain-center-x-m", type=float, dest="domain_center_x_m")
    g.add_argument("--domain-center-y-m", type=float, dest="domain_center_y_m")
    g.add_argument("--grid-size", type=int, help="number of cells N (perfect square); sets the half-width")


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--max-iters", type=int, default=2000)
    g.add_argument("--residual-tol", type=float, default=1e-6)
    g.add_argument("--theta", type=float, default=1.0)
    g.add_argument("--sigma", type=float, help="dual step (default 0.99/L)")
    g.add_argument("--tau", type=float, help="primal step (default 0.99/L)")
    g.add_argument("--no-rescale", action="store_true", help="do not divide the operator by sqrt(N)")
    g.add_argument("--allow-uncertified-steps", action="store_true", help="permit tau*sigma*L^2 > 1")
    g.add_argument(
        "--reference-steps",
        action="store_true",
        help="theta=1, sigma=1, tau=0.5 on A/sqrt(N), 300 fixed iterations; needs --allow-uncertified-steps",
    )
    g.add_argument("--fixed-iterations", action="store_true", help="always run --max-iters iterations")
    g.add_argument(
        "--operator-mode", choices=("dense", "direct", "factorized"), default="factorized"
    )


def _add_common(p, out_help):
    p.add_argument("--seed", type=int, required=True, help="master random seed (required)")
    p.add_argument("--out", required=True, help=out_help)


def _config_from_args(args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = ImagingConfig.from_text(fh.read())
        params = dict(
            wavelength=base.wavelength,
            aperture=base.aperture,
            range_z0=base.range_z0,
            mesh=base.mesh,
            halfsize=base.halfsize,
            center_x=base.center_x,
            center_y=base.center_y,
        )
    else:
        params = dict(wavelength=0.03, aperture=30.0, range_z0=10000.0, mesh=10.0, halfsize=400.0)
    overrides = {
        "lambda_m": "wavelength",
        "aperture_m": "aperture",
        "range_m": "range_z0",
        "mesh_m": "mesh",
        "halfsize_m": "halfsize",
        "domain_center_x_m": "center_x",
        "domain_center_y_m": "center_y",
    }
    for flag, key in overrides.items():
        value = getattr(args, flag, None)
        if value is not None:
            params[key] = value
    grid_size = getattr(args, "grid_size", None)
    if grid_size is not None:
        side = math.isqrt(grid_size)
        if side * side != grid_size:
            raise ValueError(f"--grid-size must be a perfect square, got {grid_size}")
        params["halfsize"] = side * params["mesh"] / 2
    return ImagingConfig(**params)


def _params_from_args(args):
    if args.reference_steps:
        return PdhgParams.reference(allow_uncertified_steps=args.allow_uncertified_steps, seed=args.seed)
    return PdhgParams(
        sigma=args.sigma,
        tau=args.tau,
        theta=args.theta,
        rescale_by_sqrtN=not args.no_rescale,
        allow_uncertified_steps=args.allow_uncertified_steps,
        max_iters=args.max_iters,
        residual_tol=args.residual_tol,
        stop_early=not args.fixed_iterations,
        seed=args.seed,
    )


def _config_record(cfg):
    return {
        "lambda_m": cfg.wavelength,
        "aperture_m": cfg.aperture,
        "range_m": cfg.range_z0,
        "mesh_m": cfg.mesh,
        "halfsize_m": cfg.halfsize,
        "domain_center_x_m": cfg.center_x,
        "domain_center_y_m": cfg.center_y,
    }


def _param_record(args):
    skip = {"func", "out", "log"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_manifest(args, started, extra=None):
    manifest = {
        "subcommand": args.command,
        "parameters": _param_record(args),
        "seed": args.seed,
        "tool_version": __version__,
        "duration_s": time.perf_counter() - started,
    }
    if extra:
        manifest.update(extra)
    _write_json(args.out + ".manifest.json", manifest)


def _cvec(re, im):
    return np.asarray(re, dtype=float) + 1j * np.asarray(im, dtype=float)


# -- subcommands ------------------------------------------------------------


def cmd_simulate(args):
    cfg = _config_from_args(args)
    rng = np.random.default_rng(args.seed)
    scene = random_scene(cfg.grid_size, args.s, tuple(args.dynamic_range), rng)
    array = sample_antennas(cfg, args.n, rng)
    op = ScatteringOperator(cfg, array, mode="factorized")
    clean = op.matvec(scene.x)
    eta = args.eta
    if args.snr_db is not None:
        eta = snr_to_eta(scene.x, args.snr_db)
    noise = gaussian_noise(op.shape[0], eta, rng) if eta > 0 else np.zeros(op.shape[0], complex)
    y = clean + noise
    payload = {
        "format": MEASUREMENT_FORMAT,
        "config": _config_record(cfg),
        "rho": cfg.rho,
        "n": array.n,
        "N": cfg.grid_size,
        "antennas": array.positions.tolist(),
        "scene": {
            "support": scene.support.tolist(),
            "x_re": scene.x.real[scene.support].tolist(),
            "x_im": scene.x.imag[scene.support].tolist(),
            "dynamic_range": list(scene.dynamic_range),
        },
        "noise_eta": eta,
        "y_re": y.real.tolist(),
        "y_im": y.imag.tolist(),
    }
    _write_json(args.out, payload)
    print(f"rho = {cfg.rho}; wrote {op.shape[0]} measurements to {args.out}")
    return {"rho": cfg.rho}


def _load_measurement(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        data = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise InputFormatError(f"{path}: invalid UTF-8 at byte offset {exc.start}") from None
    except json.JSONDecodeError as exc:
        offset = len(raw.decode("utf-8")[: exc.pos].encode("utf-8"))
        raise InputFormatError(f"{path}: parse error at byte offset {offset}: {exc.msg}") from None
    if not isinstance(data, dict) or data.get("format") != MEASUREMENT_FORMAT:
        raise InputFormatError(f"{path}: not a measurement file (byte offset 0)")
    try:
        cfg = ImagingConfig.from_text(
            "\n".join(f"{k} = {v!r}" for k, v in data["config"].items())
        )
        antennas = np.asarray(data["antennas"], dtype=float)
        y = _cvec(data["y_re"], data["y_im"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"{path}: missing or malformed field: {exc}") from None
    if antennas.ndim != 2 or y.size != antennas.shape[0] ** 2:
        raise InputFormatError(
            f"{path}: {y.size} measurements do not match {antennas.shape[0]} antennas"
        )
    return data, cfg, antennas, y


def cmd_recover(args):
    data, cfg, antennas, y = _load_measurement(args.input)
    op = ScatteringOperator(cfg, antennas, mode=args.operator_mode)
    params = _params_from_args(args)
    if args.log:
        params = PdhgParams(**{**params.__dict__, "log_iterates": True})
    if args.mode == "bp":
        result = solve_bp(op, y, params)
    else:
        eta = args.eta if args.eta is not None else data.get("noise_eta", 0.0)
        result = solve_bpdn(op, y, eta * op.n, params)
    payload = {
        "format": SOLUTION_FORMAT,
        "mode": args.mode,
        "x_re": result.x_hat.real.tolist(),
        "x_im": result.x_hat.imag.tolist(),
        "iterations_run": result.iterations_run,
        "final_feasibility": result.final_feasibility,
        "objective": result.objective,
        "converged": result.converged,
        "step_product": result.step_product,
        "step_product_linear": result.step_product_linear,
        "operator_norm": result.operator_norm,
        "radius": result.eta,
    }
    if "scene" in data:
        x = np.zeros(op.N, dtype=complex)
        sc = data["scene"]
        x[sc["support"]] = _cvec(sc["x_re"], sc["x_im"])
        payload["error_l2"] = float(np.linalg.norm(result.x_hat - x))
    _write_json(args.out, payload)
    if args.log:
        write_iterate_log(args.log, result)
    print(
        f"{args.mode}: {result.iterations_run} iterations, converged={result.converged}, "
        f"objective={result.objective:.6g}"
    )


def cmd_phase_transition(args):
    cfg = _config_from_args(args)
    params = _params_from_args(args)

    def progress(n, wins, trials):
        print(f"n={n}: {wins}/{trials}", file=sys.stderr)

    curve = phase_transition(
        args.s,
        cfg.grid_size,
        args.n_list,
        args.trials,
        config=cfg,
        seed=args.seed,
        params=params,
        mode=args.operator_mode,
        jobs=args.jobs,
        progress=progress,
    )
    meta = {**_config_record(cfg), **_param_record(args)}
    meta.pop("jobs")
    write_curve_csv(args.out, curve, meta)
    return {"crossing_0.5": curve.crossing(0.5)}


def cmd_roc(args):
    cfg = _config_from_args(args)
    params = _params_from_args(args)
    scene = random_scene(cfg.grid_size, args.s, tuple(args.dynamic_range), np.random.default_rng(args.seed))
    eta = args.eta if args.snr_db is None else snr_to_eta(scene.x, args.snr_db)
    points = roc_curve(
        scene,
        args.n,
        eta,
        args.tau_list,
        args.trials,
        config=cfg,
        seed=args.seed,
        params=params,
        mode=args.operator_mode,
        false_alarm_base=args.false_alarm_base,
        jobs=args.jobs,
    )
    meta = {**_config_record(cfg), **_param_record(args), "eta": eta, "snr_convention": "20log10(|Ax|/|e|), E|e|^2 = n^2 eta^2"}
    meta.pop("jobs")
    write_roc_csv(args.out, points, meta)


def cmd_certify(args):
    cfg = _config_from_args(args)
    params = _params_from_args(args)
    rows = certificate_trials(
        args.s,
        cfg.grid_size,
        args.n,
        args.draws,
        config=cfg,
        seed=args.seed,
        params=params,
        mode=args.operator_mode,
        solve=not args.no_solve,
        jobs=args.jobs,
    )
    reports = [None if r is None else r.to_dict() for r, _ in rows]
    recovered = [rec for _, rec in rows]
    passed = [bool(r and r["passed"]) for r in reports]
    summary = {
        "draws": len(rows),
        "pass_rate": sum(passed) / len(rows),
        "rank_deficient": sum(r is None for r in reports),
    }
    if not args.no_solve:
        summary["recovery_rate"] = sum(bool(r) for r in recovered) / len(rows)
        summary["passed_but_not_recovered"] = sum(p and not r for p, r in zip(passed, recovered))
    param_record = _param_record(args)
    param_record.pop("jobs")
    payload = {
        "parameters": param_record,
        "config": _config_record(cfg),
        "summary": summary,
        "reports": reports,
        "recovered": recovered,
    }
    _write_json(args.out, payload)
    print(json.dumps(summary))


def build_parser():
    parser = argparse.ArgumentParser(prog="arrayimaging", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a scene and antennas, write Born measurements")
    _add_common(p, "measurement JSON file")
    _add_config_flags(p)
    p.add_argument("--s", type=int, required=True, help="number of targets")
    p.add_argument("--n", type=int, required=True, help="number of antennas")
    p.add_argument("--dynamic-range", type=float, nargs=2, default=(1.0, 10.0), metavar=("LO", "HI"))
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--eta", type=float, default=0.0, help="per-entry complex noise std")
    noise.add_argument("--snr-db", type=float, help="target SNR; sets eta = |x| / 10^(snr/20)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("recover", help="l1 recovery from a measurement file")
    _add_common(p, "solution JSON file")
    p.add_argument("--input", required=True, help="measurement file from 'simulate'")
    p.add_argument("--mode", choices=("bp", "bpdn"), default="bp")
    p.add_argument("--eta", type=float, help="per-row noise level; bpdn radius is eta*n")
    p.add_argument("--log", help="write the iterate log CSV here")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("phase-transition", help="recovery rate versus antenna count")
    _add_common(p, "output CSV")
    _add_config_flags(p)
    _add_solver_flags(p)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--n-list", type=_int_list, required=True, help="e.g. 20:36:2 or 20,24,28")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_phase_transition)

    p = sub.add_parser("roc", help="detection/false-alarm curve of thresholded BPDN")
    _add_common(p, "output CSV")
    _add_config_flags(p)
    _add_solver_flags(p)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tau-list", type=_float_list, required=True, help="comma-separated thresholds")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--dynamic-range", type=float, nargs=2, default=(1.0, 10.0), metavar=("LO", "HI"))
    noise = p.add_mutually_exclusive_group(required=True)
    noise.add_argument("--eta", type=float, help="per-entry complex noise std")
    noise.add_argument("--snr-db", type=float)
    p.add_argument("--false-alarm-base", choices=("targets", "cells"), default="targets")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("certify", help="Monte Carlo dual-certificate reports")
    _add_common(p, "output JSON")
    _add_config_flags(p)
    _add_solver_flags(p)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--draws", type=int, default=200)
    p.add_argument("--no-solve", action="store_true", help="skip the BP recovery per draw")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_certify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        extra = args.func(args)
        _write_manifest(args, started, extra)
    except (ApertureConditionError, ConfigParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
