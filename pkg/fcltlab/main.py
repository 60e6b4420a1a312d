"""fcltlab command line entry point."""

import argparse
import logging
import sys
import time
from pathlib import Path

from fcltlab import __version__, config
from fcltlab.doctor import check_dependencies
from fcltlab.errors import ContractViolation, FcltLabError

logger = logging.getLogger("fcltlab")

# ANSI colors for terminal output
_BOLD = "\033[1m"
_DIM = "\033[2m"
_RED = "\033[91m"
_GREEN = "\033[92m"
_YELLOW = "\033[93m"
_RESET = "\033[0m"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CONTRACT = 2


def _load_commands():
    """Import the numerical stack (numpy, scipy) after arg parsing."""
    from fcltlab import commands, report

    return commands, report


def _status(kind: str, message: str):
    """Print a status line to stderr so it doesn't mix with piped output."""
    icons = {
        "pass": f"  {_GREEN}✓{_RESET}  ",
        "fail": f"  {_RED}✗{_RESET}  ",
        "error": f"  {_RED}Error:{_RESET} ",
        "warn": f"  {_YELLOW}⚠{_RESET}  ",
        "info": f"  {_DIM}ℹ{_RESET}  ",
    }
    print(f"{icons.get(kind, '    ')}{message}", file=sys.stderr, flush=True)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcltlab",
        description="Exact FCLT diffusion coefficients for finite Markov chains, "
                    "with Monte Carlo verification.",
    )
    parser.add_argument(
        "--version", action="version", version=f"fcltlab {__version__}",
    )
    parser.add_argument(
        "--check", action="store_true", default=False,
        help="Check numerical dependencies and exit",
    )
    parser.add_argument(
        "--history", action="store_true", default=False,
        help="Show recent runs and exit",
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Flat JSON config file; flags override its keys")
    common.add_argument(
        "--model",
        help="Builtin (two-state, birth-death(m), random-reversible(m, seed), cycle(m)) "
             "or a JSON model file",
    )
    common.add_argument(
        "--f",
        help=f"Observable: {', '.join(config.OBSERVABLE_NAMES)}, an inline list like 1,0,-1, "
             "or a JSON file (default: parity)",
    )
    common.add_argument("--seed", type=int, help=f"Master seed (default: {config.SEED})")
    common.add_argument("--replicates", type=int, help=f"Replicates per n (default: {config.REPLICATES})")
    common.add_argument("--n", dest="n_list", help="Comma separated scaling list, e.g. 100,1000,10000")
    common.add_argument("--out", help="Output directory (default: fcltlab-out)")
    common.add_argument("--tol", type=float, help="Replace every contract tolerance")
    common.add_argument("--workers", type=int, help=f"Replicate worker processes (default: {config.WORKERS})")
    common.add_argument(
        "--dump-replicates", type=int, metavar="K",
        help="Write replicates/n<n>_r<r>.csv (t, I, Lambda, A) for the first K replicates of each n",
    )
    common.add_argument(
        "--trace-epsilon", type=float, metavar="EPS",
        help="Also run the lambda_n / lambda_l bookkeeping trace at this epsilon (simulate)",
    )
    common.add_argument(
        "--no-history", action="store_true", default=False,
        help="Disable run history logging",
    )
    common.add_argument(
        "-v", "--verbose", action="store_true", default=config.VERBOSE,
        help="Enable verbose/debug logging",
    )

    sub = parser.add_subparsers(dest="command", metavar="{exact,simulate,verify}")
    sub.add_parser("exact", parents=[common],
                   help="sigma^2 by both formulas, sigma^2_lambda curve, operator contracts")
    sub.add_parser("simulate", parents=[common],
                   help="Replicate sweep over n with variance, normality and collapse verdicts")
    sub.add_parser("verify", parents=[common],
                   help="Randomized operator property suite over reversible models")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    keys = ("model", "f", "seed", "replicates", "n_list", "out", "tol", "workers",
            "dump_replicates", "trace_epsilon")
    return {k: getattr(args, k) for k in keys}


def run_command(args: argparse.Namespace) -> int:
    """Run one subcommand, write its outputs and return the exit code."""
    from fcltlab.config import RunConfig

    t0 = time.perf_counter()
    try:
        cfg = RunConfig.from_sources(args.config, _overrides(args))
        config.override_tolerance(cfg.tol)
        logger.debug("Run config: %s", cfg.to_dict())
        commands, report = _load_commands()
        outcome = commands.COMMANDS[args.command](cfg)

        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write_report(out, outcome.report)
        report.write_summary(out, outcome.header, outcome.rows)
        report.write_text_report(out, args.command, outcome.header, outcome.rows)
        report.write_manifest(out, args.command, cfg.to_dict())
        report.write_replicate_dump(out, outcome.per_n)
    except ContractViolation as e:
        _status("fail", str(e))
        return EXIT_CONTRACT
    except (FcltLabError, OSError) as e:
        _status("error", str(e))
        return EXIT_CONFIG
    except Exception as e:
        if config.VERBOSE:
            import traceback
            traceback.print_exc()
        else:
            print(
                f"\n  {_RED}Unexpected error:{_RESET} {e}\n"
                f"  {_DIM}Run with --verbose for full traceback{_RESET}",
                file=sys.stderr,
            )
        return EXIT_CONFIG
    finally:
        config.override_tolerance(None)

    elapsed_ms = (time.perf_counter() - t0) * 1000
    for invariant, value, limit in outcome.failures:
        _status("fail", f"{invariant}: {value:.3e} exceeds {limit:.3e}")
    if outcome.verdict == "pass":
        _status("pass", f"{args.command}: pass ({elapsed_ms:.0f}ms) -> {out}")
    else:
        _status("warn", f"{args.command}: {outcome.verdict} ({elapsed_ms:.0f}ms) -> {out}")
    report.log_run(args.command, report.config_hash(cfg.to_dict()), outcome.verdict, elapsed_ms)
    return EXIT_CONTRACT if outcome.failures else EXIT_OK


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)

    # Handle --history: show history and exit
    if args.history:
        from fcltlab.report import show_history
        show_history()
        return

    # Handle --check: run dependency checks and exit
    if args.check:
        ok = check_dependencies()
        sys.exit(0 if ok else 1)

    if args.command is None:
        parser.print_usage(sys.stderr)
        sys.exit(EXIT_CONFIG)

    config.VERBOSE = args.verbose
    config.HISTORY_ENABLED = not args.no_history

    # Set up logging
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        datefmt="%H:%M:%S",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)

    sys.exit(run_command(args))


if __name__ == "__main__":
    main()
