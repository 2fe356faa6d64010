"""ispsim command line: run, sweep, compare-ihp, plot, pack."""

import argparse
import sys
import traceback
from pathlib import Path

from . import config as C
from . import experiment as X
from . import ihp
from .dataset import DataError, pack_pages, stripe_across_channels
from .fabric import CSV_COLUMNS, SimulationError
from .model import ConfigError
from .nand import NandError
from .plot import PlotError, plot_files, render_svg, read_series

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

CSV_HELP = f"""\
metrics.csv columns, in this fixed order:
  {",".join(CSV_COLUMNS)}
  sim_time_ns        simulated time of the evaluation checkpoint
  minibatches_done   minibatches finished by all channel controllers so far
  test_accuracy      accuracy of the master parameters on the test set
  reads              NAND page reads so far
  pushes             updates applied by the master so far
  bytes_transferred  bytes moved between channel controllers and the master

exit codes: 0 success, 1 usage or config error, 2 data error, 3 internal error
environment: ISPSIM_THREADS caps concurrent sweep workers
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set nand.t_read_us=75 (repeatable)")
    p.add_argument("--algorithm", choices=("synchronous", "downpour", "easgd"))
    p.add_argument("--channels", type=int)
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--tau", type=int, help="communication period in minibatches")
    p.add_argument("--alpha", type=float, help="elastic moving rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", help="directory holding the four IDX files")
    p.add_argument("--deadline-ms", type=float, help="simulated time limit")
    p.add_argument("--target", type=float, help="target test accuracy (also stops the run)")
    p.add_argument("--cadence-ms", type=float, help="evaluation checkpoint interval")
    p.add_argument("--out", help="output directory")
    p.add_argument("--trace", action="store_true", help="also write trace.txt with every event")


_FLAG_KEYS = {"algorithm": "algorithm", "channels": "channels", "lr": "sgd.learning_rate", "tau": "sgd.tau",
              "alpha": "sgd.alpha", "seed": "seed", "data_dir": "data.dir", "deadline_ms": "stop.deadline_ms",
              "target": "stop.target_accuracy", "cadence_ms": "eval.cadence_ms", "out": "output_dir"}


def _split(pair):
    if "=" not in pair:
        raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
    k, v = pair.split("=", 1)
    return k.strip(), v


def config_from_args(args) -> C.RunConfig:
    cfg = C.load(args.config) if args.config else C.RunConfig()
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            C.set_value(cfg, key, str(value))
    if getattr(args, "trace", False):
        cfg.trace = True
    for pair in args.set:
        C.set_value(cfg, *_split(pair))
    X.validate(cfg)
    return cfg


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    log = X.run(cfg)
    out = X.write_outputs(cfg, log, cfg.output_dir)
    svg = render_svg([(f"{cfg.algorithm} n={cfg.channels}", read_series(log.to_csv(), "metrics"))])
    (out / "convergence.svg").write_text(svg)
    print((out / "summary.txt").read_text(), end="")
    return EXIT_OK


def _floats(text, what):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


_DEFAULT_VALUES = {"channels": "4,8,16", "tau": "1,4,16,64", "algorithm": "synchronous,downpour,easgd"}


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    raw = args.values if args.values is not None else _DEFAULT_VALUES.get(args.axis, "")
    values = [v.strip() for v in raw.split(",") if v.strip()]
    lr_grid = _floats(args.lr_grid, "--lr-grid") if args.lr_grid else ()
    target = cfg.stop.target_accuracy or X.DEFAULT_TARGET
    points = X.sweep(cfg, args.axis, values, lr_grid, target, args.workers)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = []
    for p in points:
        d = out / f"{args.axis}={p.value}"
        X.write_outputs(p.config, p.log, d)
        series.append((f"{args.axis}={p.value}", read_series(p.log.to_csv(), str(d))))
    (out / "combined.csv").write_text(X.combined_csv(args.axis, points))
    (out / "speedup.csv").write_text(X.speedup_csv(args.axis, points))
    (out / "convergence.svg").write_text(render_svg(series))
    print((out / "speedup.csv").read_text(), end="")
    return EXIT_OK


def cmd_compare_ihp(args) -> int:
    measurement = ihp.load_measurement(args.measurement)
    trace = ihp.parse_trace(args.trace_file)
    ssd = ihp.BaselineSsd(num_channels=args.channels, blocks_per_channel=args.blocks_per_channel,
                          pages_per_block=args.pages_per_block, page_size=args.page_size, stride=args.stride,
                          timing=ihp.NandTiming(round(args.t_read_us * 1000), round(args.t_prog_us * 1000),
                                                round(args.t_erase_us * 1000)))
    row = ihp.report(measurement, ihp.replay_trace(trace, ssd))
    if args.csv:
        Path(args.csv).write_text(ihp.report_csv(row))
    print(ihp.report_text(row), end="")
    return EXIT_OK


def cmd_plot(args) -> int:
    plot_files(args.csv_files, args.output, args.label or ())
    return EXIT_OK


def cmd_pack(args) -> int:
    cfg = config_from_args(args)
    train, _ = X.load_data(cfg)
    pages = pack_pages(train, cfg.nand.page_size)
    layout = stripe_across_channels(pages, cfg.channels, cfg.seed if cfg.data.shuffle_pages else None,
                                    cfg.nand.pages_per_block)
    text = layout.manifest()
    if args.manifest:
        Path(args.manifest).write_text(text)
        print(f"{len(pages)} pages, {layout.total_samples} samples over {cfg.channels} channels -> {args.manifest}")
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="ispsim", description="In-storage SGD simulator for multi-channel SSDs.",
                     epilog=CSV_HELP, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="one simulation -> metrics.csv, config.echo, summary.txt",
                       epilog=CSV_HELP, formatter_class=fmt)
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per axis value -> combined.csv, speedup.csv",
                       epilog=CSV_HELP, formatter_class=fmt)
    _common(p)
    p.add_argument("--axis", required=True, choices=X.AXES)
    p.add_argument("--values", help="comma-separated axis values (defaults: channels 4,8,16; tau 1,4,16,64)")
    p.add_argument("--lr-grid", help="comma-separated learning rates; each point keeps the best")
    p.add_argument("--workers", type=int, help="concurrent runs (default: ISPSIM_THREADS or 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare-ihp", help="expected host time on the simulated SSD from an IO trace")
    p.add_argument("measurement", help="file with 'T_total_ns = ...' and 'T_IO_ns = ...'")
    p.add_argument("trace_file", help="lines of 'issue_time_ns R|W offset_bytes length_bytes'")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--stride", type=int, default=1, help="logical pages per channel before moving on")
    p.add_argument("--page-size", type=int, default=8192)
    p.add_argument("--pages-per-block", type=int, default=128)
    p.add_argument("--blocks-per-channel", type=int, default=1024)
    p.add_argument("--t-read-us", type=float, default=75.0)
    p.add_argument("--t-prog-us", type=float, default=300.0)
    p.add_argument("--t-erase-us", type=float, default=5000.0)
    p.add_argument("--csv", help="also write the report as CSV here")
    p.set_defaults(func=cmd_compare_ihp)

    p = sub.add_parser("plot", help="accuracy vs simulated time SVG from metrics CSVs",
                       epilog=CSV_HELP, formatter_class=fmt)
    p.add_argument("csv_files", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--label", action="append", help="legend label per CSV, in order")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("pack", help="pack the training set into pages and print the layout manifest")
    _common(p)
    p.add_argument("--manifest", help="write the manifest here instead of stdout")
    p.set_defaults(func=cmd_pack)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, C.ConfigFileError) as e:
        print(f"ispsim: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ihp.TraceError, PlotError, OSError) as e:
        print(f"ispsim: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (SimulationError, NandError) as e:
        print(f"ispsim: internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:  # invariant violations we did not anticipate
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
