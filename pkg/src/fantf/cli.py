"""Command line entry point: ``fantf run|compare|plot|selftest``.

Exit status 0 on success, 2 for configuration or contract errors, 3 for data
errors, 4 for numeric failures.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import build_config, read_config
from .errors import ConfigError, FantfError

log = logging.getLogger("fantf")

EXIT_OK = 0


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value experiment file")
    common.add_argument("--out", type=Path, help="output directory (FANTF_OUT overrides)")
    common.add_argument("--seed", type=_u64, help="override the config seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = _Parser(prog="fantf", description="Fuzzy-attention transformer for multivariate time series.")
    parser.add_argument("--version", action="version", version=f"fantf {__version__}")
    verbs = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    verbs.add_parser("run", parents=[common], help="train and evaluate one configuration")
    verbs.add_parser("compare", parents=[common], help="same seed with and without the fuzz term")
    plot = verbs.add_parser("plot", parents=[common], help="write per-variate CSVs from a result")
    plot.add_argument("result", nargs="?", type=Path, help="result.json (default: OUT/result.json)")
    plot.add_argument("--window", type=int, default=0, help="stored test window to export")
    verbs.add_parser("selftest", parents=[common], help="run the built-in invariant suite")
    return parser


def _out_dir(args, config=None) -> Path:
    env = os.environ.get("FANTF_OUT")
    if env:
        return Path(env)
    if args.out is not None:
        return args.out
    return Path(config.output_dir) if config is not None else Path("fantf_out")


def _config(args):
    if args.config is None:
        raise ConfigError(f"{args.verb} needs --config PATH")
    return build_config(read_config(args.config), seed=args.seed)


def _say(args, text: str):
    if not args.quiet:
        print(text)


def _progress(args):
    if args.quiet:
        return None
    return lambda epoch, value: print(f"epoch {epoch + 1}: loss {value:.6g}", file=sys.stderr)


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.6g}"


def cmd_run(args) -> int:
    from .runner import run
    config = _config(args)
    out = _out_dir(args, config)
    result = run(config, out, progress=_progress(args))
    for key, value in result.metrics.items():
        _say(args, f"{key} = {_fmt(value)}")
    _say(args, f"wrote {out / 'result.json'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .runner import compare_fan
    config = _config(args)
    out = _out_dir(args, config)
    comparison = compare_fan(config, out)
    _say(args, f"{'metric':<12} {'base':>14} {'fan':>14} {'diff %':>10}")
    for row in comparison.table:
        _say(args, f"{row['metric']:<12} {_fmt(row['base']):>14} {_fmt(row['fan']):>14} "
                   f"{_fmt(row['difference_pct']):>10}")
    _say(args, f"same initial parameters: {comparison.same_init}")
    _say(args, f"wrote {out / 'compare.json'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .runner import emit_plot_data, load_result
    out = _out_dir(args)
    source = args.result if args.result is not None else out / "result.json"
    for path in emit_plot_data(load_result(source), out, window=args.window):
        _say(args, f"wrote {path}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    ok, _ = run_selftest(open(os.devnull, "w") if args.quiet else sys.stdout)
    return EXIT_OK if ok else 1


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "plot": cmd_plot, "selftest": cmd_selftest}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.verb](args)
    except FantfError as exc:
        print(f"fantf: error [{exc.module or 'fantf'}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_status
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
