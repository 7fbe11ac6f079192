"""Command-line entry point: ``mirpn FILE.mir [FILE.mir ...] [options]``."""

from __future__ import annotations

import argparse
import sys

from .builder import RwModel
from .driver import EXIT_ERROR, OutputFormat, RunConfig, run
from .mir import LockKindFilter
from .oracle import DEFAULT_BOUND
from .petri import DEFAULT_MAX_STATES


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _capacity(text: str) -> int | None:
    return None if text == "auto" else _positive(text)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the input-error code; 2 means inconclusive here."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(
        prog="mirpn",
        description="Detect deadlocks in mini-MIR programs by Petri net reachability analysis.",
    )
    ap.add_argument("inputs", nargs="+", metavar="FILE", help="mini-MIR source files (.mir), merged into one program")
    ap.add_argument("--lock-type", choices=[f.value for f in LockKindFilter], default="all",
                    help="which lock kinds to model (default: all)")
    ap.add_argument("--rwlock-model", choices=[m.value for m in RwModel], default="general",
                    help="general: writer priority via a gate; specific: plain token counting")
    ap.add_argument("--rwlock-capacity", type=_capacity, default=None, metavar="N",
                    help="reader tokens per rwlock, or 'auto' (default: max(2, read sites))")
    ap.add_argument("--include-unwind", action="store_true",
                    help="model unwind edges; guards held while panicking are never released")
    ap.add_argument("--max-states", type=_positive, default=DEFAULT_MAX_STATES, metavar="N",
                    help=f"state cap for reachability (default: {DEFAULT_MAX_STATES})")
    ap.add_argument("--emit-pnml", metavar="PATH", help="write the net as PNML before exploring it")
    ap.add_argument("--emit-netdump", metavar="PATH", help="write the canonical text dump of the net")
    ap.add_argument("--dump-aliases", metavar="PATH", help="write the alias-class report as JSON")
    ap.add_argument("--dump-reachability", metavar="PATH", help="write the reachability graph")
    ap.add_argument("--oracle-check", action="store_true",
                    help="cross-check the verdict with the brute-force interleaving oracle")
    ap.add_argument("--oracle-bound", type=_positive, default=DEFAULT_BOUND, metavar="N",
                    help=f"state bound for --oracle-check (default: {DEFAULT_BOUND})")
    ap.add_argument("--format", choices=[f.value for f in OutputFormat], default="text")
    return ap


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        inputs=tuple(args.inputs),
        lock_kind_filter=LockKindFilter(args.lock_type),
        rwlock_model=RwModel(args.rwlock_model),
        rwlock_capacity=args.rwlock_capacity,
        include_unwind=args.include_unwind,
        max_states=args.max_states,
        emit_pnml=args.emit_pnml,
        emit_netdump=args.emit_netdump,
        oracle_check=args.oracle_check,
        oracle_bound=args.oracle_bound,
        output_format=OutputFormat(args.format),
        dump_aliases=args.dump_aliases,
        dump_reachability=args.dump_reachability,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    result = run(cfg)
    if cfg.output_format is OutputFormat.JSON:
        sys.stdout.write(result.render_json())
    else:
        sys.stdout.write(result.render_text())
    sys.stderr.write(result.render_errors())
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
