#!/usr/bin/env python3
"""
vip-flow CLI: benchmark runs of the VIP Stokes / Navier-Stokes solver.
Every run writes CSV tables plus a manifest.txt describing the resolved
configuration and the sha256 of each output.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from . import __version__
from .assembly import export_operators
from .builders import LoggingConfig, StokesProblem, configure_logging
from .errors import ConfigError, DataFormatError, VipError
from .harness import (
    build_problem,
    run_cavity,
    run_convergence_study,
    run_infsup_study,
    run_kovasznay_study,
    run_stability_study,
    write_cavity,
    write_errors,
    write_infsup,
    write_kovasznay,
    write_stability,
)
from .io import load_config, write_manifest
from .models import KovasznayParams, RunConfig
from .navier_stokes import cavity_problem, kovasznay_problem

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INTERRUPTED = 130

# problem kinds each subcommand accepts; the first is used when the config
# names a kind the subcommand cannot run
SUBCOMMAND_KINDS: Dict[str, Tuple[str, ...]] = {
    "converge": ("stokes-manufactured", "stokes-polynomial", "converge"),
    "kovasznay": ("kovasznay",),
    "cavity": ("cavity",),
    "infsup": ("infsup-study", "stokes-manufactured", "stokes-polynomial", "converge"),
}

RunOutcome = Tuple[List[Path], Dict[str, object], int]


def run_converge(config: RunConfig, out: Path) -> RunOutcome:
    table = run_convergence_study(config)
    path = write_errors(table, out)
    for record in table.records:
        if record.failed:
            print(f"❌ h={record.h!r}: {record.message}")
        else:
            print(f"✅ h={record.h!r}: e_DU={record.e_DU:.3e} e_P={record.e_P:.3e} e_U={record.e_U:.3e}")
    extra = {"solution": table.solution, "partial": table.partial}
    return [path], extra, EXIT_FAILURE if table.partial else EXIT_OK


def run_infsup(config: RunConfig, out: Path) -> RunOutcome:
    estimates = run_infsup_study(config)
    for est in estimates:
        print(f"✅ h={est.h!r}: mu={est.mu:.6f} (deflated {est.deflated})")
    extra = {f"deflated[{est.h!r}]": est.deflated for est in estimates}
    return [write_infsup(estimates, out)], extra, EXIT_OK


def run_stability(config: RunConfig, out: Path) -> RunOutcome:
    records = run_stability_study(config)
    for rec in records:
        print(f"✅ h={rec.h!r}: max ratio {rec.max_ratio:.4f}, spread {rec.spread:.3f}")
    extra = {f"max_ratio[{rec.h!r}]": rec.max_ratio for rec in records}
    return [write_stability(records, out)], extra, EXIT_OK


def run_kovasznay(config: RunConfig, out: Path) -> RunOutcome:
    records = run_kovasznay_study(config)
    for rec in records:
        print(f"✅ h={rec.h!r}: e_U_rel={rec.e_U_rel:.3e} after {rec.iterations} Picard steps")
    extra = {"Re": config.problem.Re, "lambda": KovasznayParams(Re=config.problem.Re).lam}
    return [write_kovasznay(records, out)], extra, EXIT_OK


def run_cavity_command(config: RunConfig, out: Path) -> RunOutcome:
    result = run_cavity(config)
    print(f"✅ cavity Re={result.Re!r} h={result.h!r}: {result.trace.iterations} Picard steps")
    extra: Dict[str, object] = {"Re": result.Re, "h": result.h, "iterations": result.trace.iterations}
    if result.comparison:
        extra["max_deviation_u"] = result.max_deviation_u
        extra["max_deviation_v"] = result.max_deviation_v
        print(f"   max |u - u_ref| = {result.max_deviation_u:.4f}, max |v - v_ref| = {result.max_deviation_v:.4f}")
    return write_cavity(result, out), extra, EXIT_OK


RUNNERS: Dict[str, Callable[[RunConfig, Path], RunOutcome]] = {
    "stokes-manufactured": run_converge,
    "stokes-polynomial": run_converge,
    "converge": run_converge,
    "infsup-study": run_infsup,
    "stability-study": run_stability,
    "kovasznay": run_kovasznay,
    "cavity": run_cavity_command,
}

COMMAND_RUNNERS: Dict[str, Callable[[RunConfig, Path], RunOutcome]] = {
    "converge": run_converge,
    "infsup": run_infsup,
    "kovasznay": run_kovasznay,
    "cavity": run_cavity_command,
}


def finest_problem(config: RunConfig) -> StokesProblem:
    """The problem a run solves at its finest spacing, for operator dumps."""
    h = min(config.discretization.h)
    disc = config.discretization
    kind = config.problem.kind
    if kind == "kovasznay":
        return kovasznay_problem(
            h,
            KovasznayParams(Re=config.problem.Re),
            degree=disc.m,
            dilation=disc.dilation,
            perturbation=disc.perturbation,
            seed=disc.seed,
            domain=config.domain,
        )
    if kind == "cavity":
        return cavity_problem(h, disc.m, disc.dilation, config.assembly.regularized_lid)
    return build_problem(config, h)


def resolve_config(args: argparse.Namespace, command: Optional[str]) -> RunConfig:
    config = load_config(args.config)
    allowed = SUBCOMMAND_KINDS.get(command or "")
    if allowed and config.problem.kind not in allowed:
        if args.config is not None:
            logger.warning(
                "Config problem kind does not fit the subcommand, overriding",
                extra={"kind": config.problem.kind, "command": command},
            )
        config = load_config(args.config, overrides={"problem": {"kind": allowed[0]}})
    return config


def execute(args: argparse.Namespace, command: Optional[str]) -> int:
    """Load the config, run the pipeline, write outputs and the manifest."""
    config = resolve_config(args, command)
    out = Path(args.out) if args.out else config.output.directory
    out.mkdir(parents=True, exist_ok=True)

    # solve dispatches on the problem kind, subcommands on themselves
    runner = COMMAND_RUNNERS.get(command or "") or RUNNERS[config.problem.kind]
    outputs, extra, status = runner(config, out)

    if args.dump_operators or config.output.dump_operators:
        written = export_operators(finest_problem(config).system, out / "operators")
        print(f"✅ Wrote {len(written)} operator files to {out / 'operators'}")

    extra = dict(extra)
    extra["command"] = command or "solve"
    extra["version"] = __version__
    manifest = write_manifest(out / "manifest.txt", config, outputs, extra)
    print(f"📄 Manifest: {manifest}")
    return status


def cmd_converge(args):
    """Handle converge command."""
    return execute(args, "converge")


def cmd_kovasznay(args):
    """Handle kovasznay command."""
    return execute(args, "kovasznay")


def cmd_cavity(args):
    """Handle cavity command."""
    return execute(args, "cavity")


def cmd_infsup(args):
    """Handle infsup command."""
    return execute(args, "infsup")


def cmd_solve(args):
    """Handle solve command: the config's problem kind picks the pipeline."""
    if args.config is None:
        raise ConfigError("solve needs --config")
    return execute(args, None)


COMMANDS = {
    "converge": cmd_converge,
    "kovasznay": cmd_kovasznay,
    "cavity": cmd_cavity,
    "infsup": cmd_infsup,
    "solve": cmd_solve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vip-flow",
        description="vip-flow: meshfree VIP Stokes and Navier-Stokes benchmarks",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  vip-flow converge --config configs/manufactured.cfg --out runs/converge
  vip-flow infsup --config configs/periodic.cfg
  vip-flow kovasznay --config configs/kovasznay.cfg --dump-operators
  vip-flow cavity --config configs/cavity.cfg --out runs/cavity
  vip-flow solve --config my_run.cfg
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Log level for messages on stderr",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Same as --log-level INFO")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="Sectioned key = value run configuration")
    common.add_argument("--out", "-o", help="Output directory (default: [output] directory)")
    common.add_argument(
        "--dump-operators",
        action="store_true",
        help="Also write D, D*, A and the system matrix in Matrix Market format",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")
    subparsers.add_parser(
        "converge", parents=[common], help="Manufactured-solution convergence table"
    )
    subparsers.add_parser("kovasznay", parents=[common], help="Kovasznay flow study")
    subparsers.add_parser("cavity", parents=[common], help="Lid-driven cavity run")
    subparsers.add_parser("infsup", parents=[common], help="Discrete inf-sup constants")
    subparsers.add_parser("solve", parents=[common], help="Run whatever the config describes")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        if code != EXIT_OK:
            parser.print_help(sys.stderr)
        return code

    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    level = "INFO" if args.verbose and args.log_level == "WARNING" else args.log_level
    configure_logging(LoggingConfig(level=level))

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataFormatError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except VipError as e:
        print(f"❌ {e}", file=sys.stderr)
        logger.debug("Run failed", extra={"error": e.to_dict()})
        return EXIT_FAILURE
    except KeyboardInterrupt:
        print("\n⏸️  Operation cancelled by user", file=sys.stderr)
        return EXIT_INTERRUPTED
    except Exception as e:
        print(f"❌ Unexpected error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
