#!/usr/bin/env python3
import argparse
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

# Ensure project root is on sys.path
project_root = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(project_root))

import numpy as np

from app.closed_forms import SUPPORTED, oracle_discrepancy
from app.config import load_config, overlay, parse_number
from app.continuation import ReducedNetworkField, continue_branch, nearest_fixed_point, run_branch, switch_branch
from app.errors import ContractViolation, TorusError
from app.fold import continue_fold, fit_exponent
from app.models import RunConfig
from app.network import PatternSpec, build_frame
from app.parametrization import first_order_solution, residual_sup
from app.reduced_dynamics import displaced_start, integrate_reduced, is_degenerate, reduced_fixed_points, ssd_rho
from app import torus_io

logger = logging.getLogger("torus_cli")

EXIT_OK = 0
EXIT_PARTIAL = 3


def _number(text: str) -> float:
    try:
        return parse_number(text)
    except ContractViolation as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _number_list(text: str) -> list[float]:
    return [_number(part) for part in text.split(",") if part.strip()]


def parse_args(argv=None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="key = value experiment file")
    common.add_argument("--pattern", default=None, help="Synchrony pattern, e.g. SDD")
    common.add_argument("--delta", type=_number, default=None, help="Perturbation strength")
    common.add_argument("--r", type=_number, default=None, help="Second-harmonic amplitude")
    common.add_argument("--alpha", type=_number, default=None, help="First-harmonic phase lag")
    common.add_argument("--beta", type=_number, default=None, help="Second-harmonic phase lag")
    common.add_argument(
        "--orientation", choices=["incoming", "outgoing"], default=None, help="Argument order of h in the perturbation"
    )
    common.add_argument("--lmax", type=int, default=None, help="Fourier truncation")
    common.add_argument("--output-dir", default=None, help="Where outputs are written")
    common.add_argument(
        "--log-level",
        default=os.environ.get("TORUS_LOG_LEVEL", "INFO"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (stderr)",
    )

    continuation = argparse.ArgumentParser(add_help=False)
    continuation.add_argument("--free", choices=["delta", "r"], default=None, help="Continuation parameter")
    continuation.add_argument("--ds", type=float, default=None)
    continuation.add_argument("--dsmin", type=float, default=None)
    continuation.add_argument("--dsmax", type=float, default=None)
    continuation.add_argument("--ntst", type=int, default=None)
    continuation.add_argument("--ncol", type=int, default=None)
    continuation.add_argument("--lambda-min", type=_number, default=None)
    continuation.add_argument("--lambda-max", type=_number, default=None)
    continuation.add_argument("--max-steps", type=int, default=None)
    continuation.add_argument("--t-max", type=float, default=None)

    parser = argparse.ArgumentParser(description="Forced symmetry breaking on tori of coupled oscillator populations")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("frame", parents=[common], help="Tangent/normal frame, drift and Floquet matrix")

    normalform = commands.add_parser("normalform", parents=[common], help="First-order normal form and embedding")
    normalform.add_argument("--deltas", type=_number_list, default=[0.005, 0.01, 0.02], help="Residual scan grid")
    normalform.add_argument("--portrait-time", type=float, default=0.0, help="Integrate the reduced flow for this long")

    scan = commands.add_parser("residual-scan", parents=[common], help="Conjugacy residual over a delta grid")
    scan.add_argument("--deltas", type=_number_list, default=[0.005, 0.01, 0.02])
    scan.add_argument("--points", type=int, default=16, help="Grid points per torus angle")

    run = commands.add_parser("continue", parents=[common, continuation], help="Continue periodic orbits from seeds")
    run.add_argument("--angle", type=_number, action="append", default=None, help="Seed fixed-point angle (repeatable)")
    run.add_argument("--direction", type=int, choices=[1, -1], default=1)
    run.add_argument("--workers", type=int, default=None, help="Branches computed concurrently")
    run.add_argument("--secondary", action="store_true", help="Switch at branch points and continue the new branches")

    fold = commands.add_parser("fold-continue", parents=[common, continuation], help="Follow a saddle-node in (r, delta)")
    fold.add_argument("--events", type=Path, required=True, help="Event JSON written by 'continue'")
    fold.add_argument("--event-index", type=int, default=None, help="Which SN to follow (default: first)")
    fold.add_argument("--direction", type=int, choices=[1, -1], default=-1)
    fold.add_argument("--fit-range", type=_number_list, default=[0.005, 0.05])

    dump = commands.add_parser("orbit-dump", parents=[common], help="Per-oscillator phases of a stored orbit")
    dump.add_argument("--orbits", type=Path, required=True, help="Orbit archive written by 'continue'")
    dump.add_argument("--point", type=int, required=True, help="Branch point id")
    dump.add_argument("--samples", type=int, default=0, help="Uniform samples (0: collocation nodes)")

    return parser.parse_args(argv)


def build_run_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    overrides = {
        "command": args.command,
        "pattern": args.pattern,
        "delta": args.delta,
        "r": args.r,
        "alpha": args.alpha,
        "beta": args.beta,
        "orientation": args.orientation,
        "lmax": args.lmax,
        "output_dir": args.output_dir,
    }
    for key in ("free", "ds", "dsmin", "dsmax", "ntst", "ncol", "lambda_min", "lambda_max", "max_steps", "t_max", "workers"):
        overrides[key] = getattr(args, key, None)
    overrides["angle"] = getattr(args, "angle", None)
    return overlay(config, overrides)


def _pattern(config: RunConfig) -> PatternSpec:
    return PatternSpec(config.pattern, config.network.n)


def cmd_frame(config: RunConfig, args: argparse.Namespace) -> int:
    frame = build_frame(_pattern(config), config.network)
    report = frame.as_dict()
    print(json.dumps(report, indent=2))
    path = torus_io.write_json(Path(config.output_dir) / "frame.json", report)
    logger.info("Wrote %s", path)
    return EXIT_OK


def _residual_scan(config: RunConfig, deltas, points: int = 16) -> list[float]:
    pattern = _pattern(config)
    sol = first_order_solution(pattern, config.network, config.perturb, lmax=config.lmax, resonance_tol=config.resonance_tol)
    return [residual_sup(sol, delta, config.network, config.perturb, points) for delta in deltas]


def cmd_normalform(config: RunConfig, args: argparse.Namespace) -> int:
    pattern = _pattern(config)
    out = Path(config.output_dir)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sol = first_order_solution(
            pattern, config.network, config.perturb, lmax=config.lmax, resonance_tol=config.resonance_tol
        )
    torus_io.write_fourier(out / "f1.json", sol.f1, "f1")
    torus_io.write_fourier(out / "e1.json", sol.e1, "e1")

    summary = {
        "pattern": pattern.word,
        "resonant_modes": len(sol.f1),
        "warnings": [str(w.message) for w in caught],
    }
    if pattern.word in SUPPORTED and pattern.n == 2 and config.network.m == 3:
        summary["discrepancy"] = oracle_discrepancy(sol, config.network, config.perturb)
        points = reduced_fixed_points(pattern, config.perturb)
        summary["fixed_points"] = [point.as_dict() for point in points]
        summary["degenerate"] = is_degenerate(points)
        if pattern.word == "SSD":
            summary["rho"] = ssd_rho(config.perturb)
        if args.portrait_time > 0:
            start = displaced_start(nearest_fixed_point(points, config.angles[0]), 0.1)
            trajectory = integrate_reduced(
                sol, start, (0.0, args.portrait_time), config.perturb.delta,
                t_eval=np.linspace(0.0, args.portrait_time, 501),
            )
            torus_io.write_trajectory(out / "portrait.csv", trajectory.t, trajectory.phi)
    torus_io.write_json(out / "normalform.json", summary)

    residuals = _residual_scan(config, args.deltas)
    torus_io.write_residual_scan(out / "residual_scan.csv", args.deltas, residuals)

    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_residual_scan(config: RunConfig, args: argparse.Namespace) -> int:
    residuals = _residual_scan(config, args.deltas, args.points)
    path = torus_io.write_residual_scan(Path(config.output_dir) / "residual_scan.csv", args.deltas, residuals)
    for delta, residual in zip(args.deltas, residuals):
        print(f"delta={delta:.6g} residual={residual:.6e}")
    logger.info("Wrote %s", path)
    return EXIT_OK


def _branch_job(config: RunConfig, angle: float, index: int, args: argparse.Namespace) -> bool:
    """Continue one seed (and optionally its secondary branches); True when everything completed."""
    pattern = _pattern(config)
    out = Path(config.output_dir)
    name = f"{pattern.word}_{config.free}_{index}"
    branch = run_branch(
        pattern, angle, config.network, config.perturb, config.settings, config.free, args.direction, config.lmax
    )
    torus_io.write_branch(out, name, branch)
    complete = not branch.partial

    if args.secondary:
        for k, event in enumerate(branch.events_of("BP")):
            try:
                switched = switch_branch(event, branch.vf, config.settings)
            except TorusError as exc:
                logger.warning("Branch switching at lambda=%.6g failed: %s", event.lam, exc)
                complete = False
                continue
            secondary = continue_branch(
                switched[0].orbit, branch.vf, config.settings, pattern, tangent=switched[0].tangent,
                label=f"{branch.label}_bp{k}",
            )
            torus_io.write_branch(out, f"{name}_bp{k}", secondary)
            complete = complete and not secondary.partial
    return complete


def cmd_continue(config: RunConfig, args: argparse.Namespace) -> int:
    angles = list(config.angles)
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [pool.submit(_branch_job, config, angle, i, args) for i, angle in enumerate(angles)]
        results = [future.result() for future in futures]
    print(f"{sum(results)}/{len(results)} branches completed; outputs in {config.output_dir}")
    return EXIT_OK if all(results) else EXIT_PARTIAL


def cmd_fold_continue(config: RunConfig, args: argparse.Namespace) -> int:
    meta = torus_io.read_json(args.events)
    missing = [key for key in ("orbit_file", "free") if not isinstance(meta, dict) or key not in meta]
    if missing:
        raise ContractViolation(f"{args.events} is not an event log (missing {', '.join(missing)})")
    events = [event for event in torus_io.read_event_orbits(args.events.parent / meta["orbit_file"]) if event.kind == "SN"]
    if not events:
        raise ContractViolation(f"{args.events} holds no saddle-node event")
    index = args.event_index or 0
    if not 0 <= index < len(events):
        raise ContractViolation(f"event index {index} out of range ({len(events)} saddle-nodes)")

    base = ReducedNetworkField(config.network, config.perturb, meta["free"])
    curve = continue_fold(events[index], base, config.settings, args.direction)
    path = torus_io.write_fold_curve(Path(config.output_dir) / "fold_curve.csv", curve)
    print(f"{len(curve.points)} fold points, {len(curve.cusps)} cusp(s), status {curve.status}; wrote {path}")
    try:
        print(f"exponent of r against delta: {fit_exponent(curve, tuple(args.fit_range)):.3f}")
    except ContractViolation as exc:
        logger.warning("No exponent fit: %s", exc)
    return EXIT_OK if curve.status == "completed" else EXIT_PARTIAL


def cmd_orbit_dump(config: RunConfig, args: argparse.Namespace) -> int:
    orbit = torus_io.read_orbit(args.orbits, args.point)
    path = torus_io.write_orbit_dump(Path(config.output_dir) / f"orbit_{args.point}.csv", orbit, args.samples)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "frame": cmd_frame,
    "normalform": cmd_normalform,
    "residual-scan": cmd_residual_scan,
    "continue": cmd_continue,
    "fold-continue": cmd_fold_continue,
    "orbit-dump": cmd_orbit_dump,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = build_run_config(args)
        return COMMANDS[args.command](config, args)
    except TorusError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
