"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .acceptance import QUICK, Profile, format_table, report_document, run_all, timing_document
from .channel import SCENARIO_IDS, ScenarioConfig, decimate, run_scenario
from .detector import DetectorConfig
from .errors import CsiteError
from .harness import Axis, DetectorKind, evaluate, evaluate_cre, sweep
from .traceio import read_config, read_trace, reports_to_csv, reports_to_json, trace_to_csv, write_trace

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ACCEPTANCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _on_off(text: str) -> bool:
    if text.lower() in ("on", "true", "1", "yes"):
        return True
    if text.lower() in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")


def _csv_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_common(p, *, scenario=False):
    p.add_argument("--config", metavar="PATH", help="key = value file; flags given on the command line win")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--out", metavar="PATH", help="output file (stdout if omitted)")
    p.add_argument("--format", choices=("csv", "structured"), default="structured")
    if scenario:
        p.add_argument("--scenario", choices=SCENARIO_IDS, default="A")
        p.add_argument("--duration", type=float, default=300.0, metavar="SECONDS")


def _add_detector(p):
    d = DetectorConfig()
    p.add_argument("--k", type=int, default=d.k, metavar="N")
    p.add_argument("--lw", type=int, default=d.l_w, metavar="N")
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam, metavar="X")
    p.add_argument("--i0", type=float, default=d.i0, metavar="N")
    p.add_argument("--dts", type=_on_off, default=d.dts_enabled, metavar="on|off")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="csite", description="CSI-based source authentication of Wi-Fi management frames.")
    parser.add_argument("--version", action="version", version=f"csite {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a scenario trace file")
    _add_common(p, scenario=True)
    p.add_argument("--fs", type=float, metavar="HZ", help="decimate the background pings to this rate")
    p.add_argument("--limit", type=int, metavar="N", help="frames in a csv excerpt")

    p = sub.add_parser("detect", help="run a detector over a trace file")
    p.add_argument("trace", help="trace file written by simulate")
    _add_common(p)
    _add_detector(p)
    p.add_argument("--fs", type=float, metavar="HZ", help="decimate before detecting")
    p.add_argument("--kind", choices=[k.value for k in DetectorKind], default="csite")

    p = sub.add_parser("sweep", help="evaluate a parameter sweep")
    _add_common(p)
    _add_detector(p)
    p.add_argument("--axis", choices=[a.value for a in Axis], required=True)
    p.add_argument("--values", type=_csv_list, required=True, metavar="V1,V2,...")
    p.add_argument("--scenarios", type=_csv_list, default=["A"], metavar="A,B,...")
    p.add_argument("--n-seeds", type=int, default=1, metavar="N", help="seeds --seed .. --seed+N-1")
    p.add_argument("--duration", type=float, default=300.0, metavar="SECONDS")
    p.add_argument("--fs", type=float, default=100.0, metavar="HZ", help="rate for axes other than fs")
    p.add_argument("--kind", choices=[k.value for k in DetectorKind] + ["both"], default="both")

    p = sub.add_parser("cre", help="evaluate delivery with precursor frames")
    _add_common(p, scenario=True)
    _add_detector(p)
    p.add_argument("--fs", type=float, default=5.0, metavar="HZ")
    p.add_argument("--lpre", type=int, default=0, metavar="N")
    p.add_argument("--n-seeds", type=int, default=1, metavar="N")
    p.set_defaults(duration=60.0)

    p = sub.add_parser("reproduce", help="run the acceptance suite and print a pass/fail table")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--seed", type=int, default=1, metavar="N")
    p.add_argument("--out", metavar="PATH", help="where to write the report document")
    p.add_argument("--timings", metavar="PATH", help="where to write wall-clock measurements")
    p.add_argument("--quick", action="store_true", help="small smoke-test sizes")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Turn config-file entries into defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return argv
    try:
        entries = read_config(known.config)
    except ValueError as e:
        raise UsageError(f"{known.config}: {e}") from e
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in sub_action.choices), None)
    if command is None:
        return argv
    sp = sub_action.choices[command]
    by_flag = {s.lstrip("-").replace("-", "_"): a for a in sp._actions for s in a.option_strings}
    # one file may serve several subcommands; only keys nobody knows are errors
    anywhere = {s.lstrip("-").replace("-", "_") for p in sub_action.choices.values()
                for a in p._actions for s in a.option_strings}
    defaults = {}
    for key, raw in entries.items():
        if key not in anywhere or key in ("config", "h", "help"):
            raise UsageError(f"{known.config}: unknown key {key!r}")
        action = by_flag.get(key)
        if action is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            defaults[action.dest] = _on_off(raw)
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (argparse.ArgumentTypeError, ValueError) as e:
            raise UsageError(f"{known.config}: bad value for {key}: {raw!r}") from e
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{known.config}: {key} must be one of {list(action.choices)}")
        defaults[action.dest] = value
    sp.set_defaults(**defaults)
    # options with required=True are satisfied by the file
    for a in sp._actions:
        if a.dest in defaults:
            a.required = False
    return argv


def _detector_cfg(args) -> DetectorConfig:
    return DetectorConfig(k=args.k, l_w=args.lw, lam=args.lam, i0=args.i0, dts_enabled=args.dts)


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _render(reports, fmt: str, extra=None) -> str:
    return reports_to_csv(reports) if fmt == "csv" else reports_to_json(reports, extra)


def _cmd_simulate(args) -> int:
    cfg = ScenarioConfig.for_scenario(args.scenario, seed=args.seed, duration=args.duration)
    trace = run_scenario(cfg)
    if args.fs is not None:
        trace = decimate(trace, args.fs)
    if args.format == "csv":
        _emit(trace_to_csv(trace, args.limit), args.out)
    elif args.out is None:
        raise UsageError("simulate needs --out for a binary trace")
    else:
        write_trace(trace, args.out)
    logging.info("wrote %d frames", len(trace))
    return EXIT_OK


def _cmd_detect(args) -> int:
    trace = read_trace(args.trace)
    if args.fs is not None:
        trace = decimate(trace, args.fs)
    report = evaluate(trace, _detector_cfg(args), DetectorKind(args.kind))
    _emit(_render([report], args.format), args.out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    kinds = list(DetectorKind) if args.kind == "both" else [DetectorKind(args.kind)]
    axis = Axis(args.axis)
    values = args.values
    if axis is Axis.FS:
        values = [float(v) for v in values]
    elif axis in (Axis.K, Axis.LW, Axis.LPRE):
        try:
            values = [int(v) for v in values]
        except ValueError as e:
            raise UsageError(f"--values: {e}") from e
    reports = sweep(axis, values, _detector_cfg(args), args.scenarios, range(args.seed, args.seed + args.n_seeds),
                    duration=args.duration, f_s=args.fs, kinds=kinds)
    _emit(_render(reports, args.format), args.out)
    if args.format == "structured" and args.out:
        with open(f"{args.out}.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(reports_to_csv(reports))
    return EXIT_OK


def _cmd_cre(args) -> int:
    seeds = range(args.seed, args.seed + args.n_seeds)
    report = evaluate_cre(args.scenario, _detector_cfg(args), f_s=args.fs, l_pre=args.lpre, seeds=seeds,
                          duration=args.duration)
    _emit(_render([report], args.format), args.out)
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    base = QUICK if args.quick else Profile()
    profile = Profile(**{**base.__dict__, "seed": args.seed})
    results = run_all(profile, progress=lambda m: logging.info(m))
    print(format_table(results))
    if args.out:
        _emit(report_document(results, profile), args.out)
    if args.timings:
        _emit(timing_document(results), args.timings)
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE


_COMMANDS = {
    "simulate": _cmd_simulate,
    "detect": _cmd_detect,
    "sweep": _cmd_sweep,
    "cre": _cmd_cre,
    "reproduce": _cmd_reproduce,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"csite: {e}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as e:
        # --help and --version
        return EXIT_OK if not e.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"csite {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CsiteError, ValueError, OSError) as e:
        print(f"csite {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
