"""Command-line entry point: ``stechosim {run,sweep,fit,plot,parse}``.

Exit codes: 0 success, 1 invalid input (config, program text, CSV),
2 runtime failure, 3 a fit did not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import FitDidNotConverge, fit_double_exponential
from .config import ConfigError, ExperimentConfig
from .seqlang import ProgramSyntaxError, ValidationError, format_program, parse_duration, parse_program

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_FIT = 0, 1, 2, 3

log = logging.getLogger("stechosim")


class PointError(RuntimeError):
    pass


def _progress(i, n):
    log.info("point %d/%d done", i + 1, n)


def cmd_run(args, *, sweep: bool) -> int:
    from .experiments import run_experiment

    cfg = ExperimentConfig.load(args.config)
    if not sweep and cfg.has_sweep:
        raise ConfigError("sweep", "config defines sweep axes; use the 'sweep' subcommand")
    if args.plots:
        cfg = ExperimentConfig.from_dict({**cfg.raw, "output": {**cfg.raw.get("output", {}), "plots": True}})
    try:
        res = run_experiment(cfg, args.out, workers=args.workers, resume=not args.no_resume,
                             progress=_progress)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        raise PointError(f"{cfg.name}: {exc}") from exc
    for name, path in sorted(res.files.items()):
        print(f"{name}: {path}")
    if any(p.fit_error for p in res.points):
        bad = [p.index for p in res.points if p.fit_error]
        print(f"fit did not converge at grid points {bad}", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


def cmd_fit(args) -> int:
    from .experiments import read_echoes_csv
    from .analysis import _encode_nonfinite

    try:
        trains = read_echoes_csv(args.echoes)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{args.echoes}: {exc}") from None
    t_short = parse_duration(args.t_short)
    out, failed = [], False
    for (point, channel), train in sorted(trains.items()):
        entry = {"point": point, "channel": channel}
        try:
            entry["fit"] = _encode_nonfinite(fit_double_exponential(train, t_short).to_dict())
        except FitDidNotConverge as exc:
            entry["fit"], entry["fit_error"] = None, str(exc)
            failed = True
        except ValueError as exc:
            entry["fit"], entry["fit_error"] = None, str(exc)
        out.append(entry)
    text = json.dumps({"schema_version": 1, "t_short": t_short, "fits": out}, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_FIT if failed else EXIT_OK


def cmd_plot(args) -> int:
    from .experiments import read_summary_csv
    from .plotting import plot_summary

    rows = read_summary_csv(args.summary)
    out = Path(args.out) if args.out else Path(args.summary).parent / "plots"
    files = plot_summary(rows, out)
    if not files:
        print("nothing to plot: summary has no tail_pct or ratio values", file=sys.stderr)
    for name, path in sorted(files.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_parse(args) -> int:
    text = Path(args.program).read_text(encoding="utf-8")
    prog = parse_program(text)
    sys.stdout.write(format_program(prog) + "\n")
    if args.verbose:
        print(f"# {len(prog.events)} events, {len(prog.pulses)} pulses, "
              f"{len(prog.sample_times())} samples, total {prog.total_duration:.9g} s", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stechosim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        s = sub.add_parser(name, help=f"{name} an experiment config (JSON)")
        s.add_argument("config")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--workers", type=int, default=None, help="worker threads")
        s.add_argument("--no-resume", action="store_true", help="ignore saved per-point results")
        s.add_argument("--plots", action="store_true", help="also write SVG plots")
    s = sub.add_parser("fit", help="double-exponential fits of an echoes.csv file")
    s.add_argument("echoes")
    s.add_argument("--t-short", required=True, help="fixed short time constant, e.g. 1.8ms")
    s.add_argument("--out", help="write JSON here instead of stdout")
    s = sub.add_parser("plot", help="SVG plots from a sweep_summary.csv file")
    s.add_argument("summary")
    s.add_argument("--out", help="output directory (default: <summary dir>/plots)")
    s = sub.add_parser("parse", help="validate a pulse program and print its canonical form")
    s.add_argument("program")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command in ("run", "sweep"):
            return cmd_run(args, sweep=args.command == "sweep")
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "plot":
            return cmd_plot(args)
        return cmd_parse(args)
    except ProgramSyntaxError as exc:
        print(f"syntax error: line {exc.lineno}, column {exc.offset}: {exc.msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConfigError, ValidationError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FitDidNotConverge as exc:
        print(f"fit did not converge: {exc}", file=sys.stderr)
        return EXIT_FIT
    except PointError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
