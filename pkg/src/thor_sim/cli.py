"""``thor-sim`` command line.

Exit codes: 0 success, 2 configuration error, 3 calibration failure, 64 usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import config as configmod
from .amx import TimingModel, anchor_protocol
from .errors import CalibrationError, ConfigurationError
from .harness import (ATTACK_HEADER, NS_PER_MIN, SWEEP_HEADER, calibrate_noise, countermeasure_eval,
                      leakage_comparison, run_trials, spec_from_config, success_sweep, write_table)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CALIBRATION = 3
EXIT_USAGE = 64

SEED_ENV = "THOR_SIM_SEED"
ANCHOR_SPARSITIES = (0.0, 0.5, 1.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=_u64, help=f"base seed (fallback: ${SEED_ENV}, then 0)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "tsv"), default="csv")
    common.add_argument("--jobs", type=int, default=1, help="parallel trial workers; 0 = auto")

    parser = _Parser(prog="thor-sim", description="AMX timing side-channel simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", parents=[common], help="bisect noise_sigma to the target success rate")
    p.add_argument("--trials", type=int, help="trials per probe")
    p.add_argument("--save", action="store_true", help="write the calibrated noise_sigma into --config")

    p = sub.add_parser("sweep", parents=[common], help="success rate and leakage versus duration")
    p.add_argument("--trials", type=int, help="trials per duration")

    p = sub.add_parser("attack", parents=[common], help="one attack; per-index score ratios")
    p.add_argument("--minutes", type=float, default=50.0)
    p.add_argument("--protected", action="store_true", help="attack a keeper-protected victim")

    p = sub.add_parser("defend", parents=[common], help="attack protected victims and report power overhead")
    p.add_argument("--trials", type=int)

    p = sub.add_parser("compare", parents=[common], help="leakage rate comparison table")
    p.add_argument("--thor-bph", type=float, help="Thor leakage rate (default: 64 bits in 50 min)")

    p = sub.add_parser("timing-demo", parents=[common], help="sparsity anchors and frequency trajectory")
    p.add_argument("--samples", type=int, default=1000, help="noisy anchor runs per sparsity")
    p.add_argument("--trajectory-out", help="trajectory CSV (default: <out>.trajectory.<fmt>)")
    p.add_argument("--stride", type=int, default=100, help="keep every n-th trajectory point")
    return parser


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return _u64(env)
        except argparse.ArgumentTypeError as exc:
            raise ConfigurationError(f"{SEED_ENV}: {exc}") from None
    return 0


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_calibrate(args, cfg, seed) -> int:
    trials = args.trials or cfg.harness.calibration_trials
    try:
        result = calibrate_noise(cfg, trials=trials, base_seed=seed, workers=args.jobs)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    rows = [(i, p.noise_sigma, p.success_rate) for i, p in enumerate(result.probes)]
    _emit(write_table(("probe", "noise_sigma", "success_rate"), rows, args.format), args.out)
    if args.save:
        if not args.config:
            raise ConfigurationError("--save needs --config")
        configmod.set_key(args.config, "noise_sigma", float(result.noise_sigma))
    return EXIT_OK


def cmd_sweep(args, cfg, seed) -> int:
    spec = spec_from_config(cfg, seed)
    if args.trials:
        spec = dataclasses.replace(spec, trials_per_point=args.trials)
    report = success_sweep(spec, cfg, workers=args.jobs)
    _emit(write_table(SWEEP_HEADER, [r.as_row() for r in report.rows], args.format), args.out)
    return EXIT_OK


def cmd_attack(args, cfg, seed) -> int:
    if args.minutes <= 0:
        raise ConfigurationError("--minutes must be positive")
    (rows,) = run_trials(cfg, [seed], [args.minutes * NS_PER_MIN], protected=args.protected, workers=1)
    _emit(write_table(ATTACK_HEADER, [rows[0].as_row()], args.format), args.out)
    return EXIT_OK


def cmd_defend(args, cfg, seed) -> int:
    report = countermeasure_eval(cfg, seed, trials=args.trials, workers=args.jobs)
    rows = [("attack", "trials", report.trials),
            ("attack", "exact_successes", report.exact_successes),
            ("attack", "bit_accuracy", report.bit_accuracy)]
    rows += [("overhead_pct", f, pct) for f, pct in report.overhead]
    _emit(write_table(("kind", "key", "value"), rows, args.format), args.out)
    return EXIT_OK


def cmd_compare(args, cfg, seed) -> int:
    rows = [(r.attack, r.leakage_bph, "" if r.thor_faster_pct is None else r.thor_faster_pct)
            for r in leakage_comparison(args.thor_bph)]
    _emit(write_table(("attack", "leakage_bph", "thor_faster_pct"), rows, args.format), args.out)
    return EXIT_OK


def cmd_timing_demo(args, cfg, seed) -> int:
    if args.samples < 1 or args.stride < 1:
        raise ConfigurationError("--samples and --stride must be positive")
    model = TimingModel(cfg.timing)
    rng = np.random.default_rng(seed)
    sigma = cfg.victim.noise_sigma
    rows = []
    for s in ANCHOR_SPARSITIES:
        exact = anchor_protocol(model, s)
        draws = exact + rng.normal(0.0, sigma, size=args.samples) if sigma > 0 else np.full(args.samples, exact)
        rows.append((s, exact, float(draws.mean()), float(draws.std()), float(draws.min()), float(draws.max()),
                     args.samples))
    header = ("sparsity", "exact_cycles", "mean_cycles", "std_cycles", "min_cycles", "max_cycles", "samples")
    _emit(write_table(header, rows, args.format), args.out)

    traj = []
    for s in (0.0, 1.0):
        for i, c in enumerate(model.frequency_trajectory(s)):
            if i % args.stride == 0:
                traj.append((s, i, c))
    text = write_table(("sparsity", "instruction", "cycles"), traj, args.format)
    path = args.trajectory_out
    if path is None and args.out:
        path = f"{args.out}.trajectory.{args.format}"
    if path is None:
        sys.stdout.write("\n" + text)
    else:
        Path(path).write_text(text)
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
    "attack": cmd_attack,
    "defend": cmd_defend,
    "compare": cmd_compare,
    "timing-demo": cmd_timing_demo,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    try:
        cfg = configmod.load(args.config)
        return COMMANDS[args.command](args, cfg, _seed(args))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION


if __name__ == "__main__":
    sys.exit(main())
