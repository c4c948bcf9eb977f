"""Command-line front end: ``timeleak {fit,leak,sweep,simulate,attack}``.

Exit codes: 0 success, 2 argument/validation error, 3 data error,
4 fit did not converge.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import formats
from .estimation import InsufficientDataError, MIN_EVENTS, fit_response, initial_guess
from .leakage import DEFAULT_PHASES, average_leakage, delay_sweep
from .simulation import (
    attack_report,
    detector_counts,
    eve_map_attack_arrays,
    quantize,
    simulate_table,
)
from .timing_model import DetectorResponse, full_support

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NOT_CONVERGED = 4


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _time(text: str) -> float:
    try:
        return formats.parse_time(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_time(text: str) -> float:
    value = _time(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text!r}")
    return value


def _time_list(text: str) -> list[float]:
    items = [s for s in text.split(",") if s.strip()]
    return [_positive_time(s) for s in items]


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CommandError(f"{path}: {exc.strerror}", EXIT_DATA) from None


def _load_receiver(source: str):
    try:
        return formats.load_receiver(source)
    except OSError as exc:
        raise CommandError(f"{source}: {exc.strerror}", EXIT_DATA) from None
    except formats.ConfigError as exc:
        raise CommandError(f"{source}: {exc}", EXIT_USAGE) from None


def _emit(args, text: str):
    if args.output:
        try:
            Path(args.output).write_text(text)
        except OSError as exc:
            raise CommandError(f"{args.output}: {exc.strerror}", EXIT_DATA) from None
    else:
        sys.stdout.write(text)


def cmd_fit(args) -> int:
    try:
        hist = formats.parse_histogram(_read(args.histogram))
    except formats.DataFormatError as exc:
        raise CommandError(f"{args.histogram}: {exc}", EXIT_DATA) from None
    guess = None
    if any(v is not None for v in (args.t0, args.tau_e, args.tau_g)):
        seed = initial_guess(hist)
        try:
            guess = DetectorResponse(
                args.t0 if args.t0 is not None else seed.t0,
                args.tau_e if args.tau_e is not None else seed.tau_e,
                args.tau_g if args.tau_g is not None else seed.tau_g,
            )
        except ValueError as exc:
            raise CommandError(f"guess: {exc}", EXIT_USAGE) from None
    try:
        fit = fit_response(hist, guess, background=args.background, min_events=args.min_events)
    except InsufficientDataError as exc:
        raise CommandError(f"{args.histogram}: {exc}", EXIT_DATA) from None
    _emit(args, formats.render(formats.fit_result_to_dict(fit), args.format))
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def cmd_leak(args) -> int:
    rcv = _load_receiver(args.config)
    report = average_leakage(rcv, args.bin_widths, args.phases, args.compensate)
    _emit(args, formats.render(formats.leakage_report_to_dict(report), args.format))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.stop < args.start:
        raise CommandError(f"empty delay range: stop {args.stop} < start {args.start}", EXIT_USAGE)
    if args.start < 0:
        raise CommandError(f"delays must be non-negative, got start {args.start}", EXIT_USAGE)
    count = int(np.floor((args.stop - args.start) / args.step + 1e-9)) + 1
    delays = [args.start + k * args.step for k in range(count)]
    sweep = delay_sweep(args.tau_e, args.tau_g, delays, args.bin_widths, args.phases)
    if args.format == "structured":
        _emit(args, formats.render(formats.sweep_to_dict(sweep), "structured"))
    else:
        _emit(args, formats.format_sweep_tsv(sweep))
    return EXIT_OK


def cmd_simulate(args) -> int:
    rcv = _load_receiver(args.config)
    frame = None
    if args.background > 0:
        frame = tuple(args.frame) if args.frame else full_support(*rcv.detectors)
    table = simulate_table(rcv, args.n, args.seed, background=args.background, frame=frame)
    public_t = quantize(table.timestamp, args.resolution)
    for path, text in ((args.events, formats.format_events(table)),
                       (args.public, formats.format_public(table.basis, public_t))):
        try:
            Path(path).write_text(text)
        except OSError as exc:
            raise CommandError(f"{path}: {exc.strerror}", EXIT_DATA) from None
    counts = {f"detector_{d}": c for d, c in detector_counts(table.detector_id).items()}
    _emit(args, formats.render({"n_events": len(table), "seed": args.seed, **counts}, args.format))
    return EXIT_OK


def cmd_attack(args) -> int:
    rcv = _load_receiver(args.config)
    try:
        basis, stamps = formats.parse_public(_read(args.public))
    except formats.DataFormatError as exc:
        raise CommandError(f"{args.public}: {exc}", EXIT_DATA) from None
    try:
        events = formats.parse_events(_read(args.events))
    except formats.DataFormatError as exc:
        raise CommandError(f"{args.events}: {exc}", EXIT_DATA) from None
    if len(events) != stamps.size:
        raise CommandError(
            f"length mismatch: {args.public} has {stamps.size} records, {args.events} has {len(events)}",
            EXIT_USAGE)
    guesses = eve_map_attack_arrays(basis, stamps, rcv, args.resolution)
    outcome = attack_report(events, guesses, rcv, args.resolution)
    _emit(args, formats.render(formats.attack_outcome_to_dict(outcome), args.format))
    return EXIT_OK


def _global_options(defaults: bool) -> argparse.ArgumentParser:
    # accepted both before and after the subcommand; only the top level sets defaults
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d(0), help="random seed (simulate)")
    p.add_argument("--output", default=d(None), help="write the report here instead of stdout")
    p.add_argument("--format", choices=("text", "structured"), default=d("text"),
                   help="text: human-readable, 6 significant digits; structured: JSON, full precision")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timeleak", parents=[_global_options(True)],
                                     description="Timing side-channel leakage of QKD detector timestamps.")
    common = _global_options(False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a detector response to a timing histogram")
    p.add_argument("histogram", help="CSV with header time_ps,count")
    p.add_argument("--background", action="store_true", help="fit a uniform background fraction")
    p.add_argument("--t0", type=_time, help="initial t0 (ps, or with ns suffix)")
    p.add_argument("--tau-e", type=_positive_time, help="initial tau_e")
    p.add_argument("--tau-g", type=_positive_time, help="initial tau_g")
    p.add_argument("--min-events", type=int, default=MIN_EVENTS)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("leak", parents=[common], help="leakage report for a receiver config")
    p.add_argument("config", help="receiver JSON file or bundled name (table1)")
    p.add_argument("--bin-widths", type=_time_list, default=[], help="comma list, e.g. 150,0.5ns,1ns")
    p.add_argument("--phases", type=int, default=DEFAULT_PHASES)
    p.add_argument("--compensate", action="store_true", help="also report leakage with equalized offsets")
    p.set_defaults(func=cmd_leak)

    p = sub.add_parser("sweep", parents=[common], help="MI against delay for shape-identical detectors (TSV)")
    p.add_argument("--tau-e", type=_positive_time, default=400.0)
    p.add_argument("--tau-g", type=_positive_time, default=290.0)
    p.add_argument("--start", type=_time, default=0.0)
    p.add_argument("--stop", type=_time, default=2000.0)
    p.add_argument("--step", type=_positive_time, default=100.0)
    p.add_argument("--bin-widths", type=_time_list, default=[500.0, 1000.0])
    p.add_argument("--phases", type=int, default=DEFAULT_PHASES)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", parents=[common], help="simulate a session; write event and public CSVs")
    p.add_argument("config")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--resolution", type=_positive_time, default=None, help="round public timestamps")
    p.add_argument("--events", required=True, help="output path for detector,basis,bit,time_ps")
    p.add_argument("--public", required=True, help="output path for basis,time_ps")
    p.add_argument("--background", type=float, default=0.0, help="fraction of uniform background events")
    p.add_argument("--frame", type=_time, nargs=2, metavar=("START", "STOP"),
                   help="background frame (default: receiver support)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", parents=[common], help="MAP eavesdropper on a public record")
    p.add_argument("public")
    p.add_argument("events")
    p.add_argument("config")
    p.add_argument("--resolution", type=_positive_time, default=None,
                   help="rounding applied to the public timestamps, if any")
    p.set_defaults(func=cmd_attack)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "simulate" and args.n < 1:
        parser.error("--n must be >= 1")
    if getattr(args, "phases", 1) < 1:
        parser.error("--phases must be >= 1")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"timeleak {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
