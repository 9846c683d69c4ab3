# Standard library imports
import argparse
import json
import logging
import sys

# Third-party imports
from colorama import init, Fore

# Local imports
import benchmark
from gglab.main import (
    IDENTITY_CHECKS,
    STRUCTURAL_CHECKS,
    describe_cascade,
    describe_pd,
    make_context,
    run_identity_check,
    run_structural_check,
)
from gglab.services.config import load_environment, parse_floats, parse_ints, read_config_file
from gglab.services.errors import BudgetExceededError
from gglab.services.reports import emit, report_record

# Initialize colorama
init(autoreset=True)

# structural checks where --n counts outer samples rather than replicas
SAMPLE_COUNT_CHECKS = ("ultra", "positivity", "exchange")


def add_common_arguments(parser):
    """Flags shared by every subcommand."""
    measure = parser.add_argument_group("measure")
    measure.add_argument("--zeta", type=float, help="PD parameter / one-level cascade parameter")
    measure.add_argument("--depth", type=int)
    measure.add_argument("--zetas", type=parse_floats, help="comma separated zeta_1..zeta_r")
    measure.add_argument("--qs", type=parse_floats, help="comma separated q_0..q_r")
    measure.add_argument("--branching", type=parse_ints, help="comma separated children per level")
    measure.add_argument("--leaf-budget", dest="leaf_budget", type=int)
    measure.add_argument("--truncation", type=int, help="PD atoms kept per level")
    measure.add_argument("--target", choices=("cascade", "coupled", "uniform"))
    measure.add_argument("--measure", help="file with a finite measure (weights then Gram rows)")
    measure.add_argument("--atoms", type=int, help="atoms of the uniform-weights target")
    measure.add_argument("--split", type=float, help="threshold of the coupled-branch target")

    estimator = parser.add_argument_group("estimator")
    estimator.add_argument("--n", type=int, help="replica count (sample count for ultra/positivity/exchange)")
    estimator.add_argument("--n-outer", dest="n_outer", type=int)
    estimator.add_argument("--n-batches", dest="n_batches", type=int)
    estimator.add_argument("--n-mu", dest="n_mu", type=int)
    estimator.add_argument("--mu-source", dest="mu_source", choices=("estimate", "closed_form"))
    estimator.add_argument("--tail-correction", dest="tail_correction", action="store_true")
    estimator.add_argument(
        "--pd-threshold",
        dest="pd_threshold",
        type=float,
        help="smallest weight product kept in distinct-index sums (default 1e-12; the suite uses 1e-8, "
        "which is much faster at truncation 4096 because far fewer tuples are enumerated)",
    )
    estimator.add_argument("--seed", type=int)
    estimator.add_argument("--workers", type=int)
    estimator.add_argument("--z-max", dest="z_max", type=float)

    check = parser.add_argument_group("check parameters")
    check.add_argument("--q", type=float)
    check.add_argument("--s", type=float)
    check.add_argument("--t", help="comma separated t_1..t_n")
    check.add_argument("--groups", help="comma separated group sizes n_1..n_r")
    check.add_argument("--form", choices=("sizes", "two-group"))
    check.add_argument("--inner", choices=("sampled", "exact"))
    check.add_argument("--derivative", action="store_true")
    check.add_argument("--s-values", dest="s_values", help="comma separated sweep of s")
    check.add_argument("--eps", type=float)
    check.add_argument("--m", type=int)
    check.add_argument("--n-target", dest="n_target", type=int)
    check.add_argument("--trials", type=int)
    check.add_argument("--b-intervals", dest="b_intervals", help="B as 'a:b, c:d'")

    output = parser.add_argument_group("output")
    output.add_argument("--format", choices=("json", "csv"), default="json")
    output.add_argument("--out", help="write the report here instead of stdout")
    output.add_argument("--config", help="key = value file with defaults and function definitions")
    output.add_argument("--timing", action="store_true", help="record wall time in reports")
    output.add_argument("--quiet", action="store_true", help="no progress bars or status lines")
    output.add_argument("--verbose", action="store_true")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    add_common_arguments(common)

    parser = argparse.ArgumentParser(prog="gglab", description="Monte Carlo checks of overlap invariance identities")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("pd-sample", parents=[common], help="draw one PD(zeta) weight vector")
    commands.add_parser("cascade-info", parents=[common], help="describe a Ruelle cascade")

    check = commands.add_parser("check", help="identity checks")
    check_kinds = check.add_subparsers(dest="kind", required=True)
    for kind in IDENTITY_CHECKS:
        check_kinds.add_parser(kind, parents=[common])

    struct = commands.add_parser("struct", help="structural checks")
    struct_kinds = struct.add_subparsers(dest="kind", required=True)
    for kind in STRUCTURAL_CHECKS:
        struct_kinds.add_parser(kind, parents=[common])

    suite = commands.add_parser("suite", parents=[common], help="run the acceptance battery")
    suite.add_argument("--sections", help="comma separated subset of sections")
    return parser


def status(args, message, colour=Fore.CYAN):
    if not args.quiet:
        print(f"{colour}{message}", file=sys.stderr)


def report_status(args, record):
    passed = record.get("pass")
    if passed is None:
        return
    detail = f" (z={record['z']:.2f})" if record.get("z") is not None else ""
    if passed:
        status(args, f"PASS {record['name']}{detail}", Fore.GREEN)
    else:
        status(args, f"FAIL {record['name']}{detail}", Fore.RED)


def flags_from(args):
    flags = {key: value for key, value in vars(args).items() if value is not None}
    flags["progress"] = not args.quiet
    if args.command == "struct" and args.kind in SAMPLE_COUNT_CHECKS and args.n is not None:
        flags["n_outer"] = flags.pop("n")
    return flags


def run_command(args, ctx):
    """Dispatch to the requested command and return (records, passed)."""
    if args.command == "pd-sample":
        return [describe_pd(ctx)], True
    if args.command == "cascade-info":
        return [describe_cascade(ctx)], True
    if args.command == "check":
        reports = run_identity_check(args.kind, ctx)
    elif args.command == "struct":
        reports = run_structural_check(args.kind, ctx)
    else:
        raise ValueError(f"unknown command {args.command!r}")
    records = [report_record(report) for report in reports]
    return records, all(record["pass"] for record in records)


def run_suite(args, ctx):
    sections = args.sections.replace(" ", "").split(",") if getattr(args, "sections", None) else None
    unknown = set(sections or ()) - {name for name, _ in benchmark.SECTIONS}
    if unknown:
        raise ValueError(f"unknown suite sections: {', '.join(sorted(unknown))}")
    suite = benchmark.run_suite(ctx.config, sections)
    if args.out:
        benchmark.save_results(suite, args.out)
    else:
        sys.stdout.write(json.dumps(suite, indent=2, ensure_ascii=False) + "\n")
    if not args.quiet:
        benchmark.print_summary(suite)
    return not suite["summary"]["failed"]


def main(argv=None):
    """Entry point: 0 when every check passes, 1 on a failed check, 2 on bad input."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        env = load_environment()
        file_values = read_config_file(args.config) if args.config else {}
        ctx = make_context(flags_from(args), file_values, env)
        if args.command == "suite":
            passed = run_suite(args, ctx)
        else:
            records, passed = run_command(args, ctx)
            for record in records:
                report_status(args, record)
            emit(records, args.format, args.out)
    except (ValueError, NotImplementedError, FileNotFoundError, BudgetExceededError) as e:
        print(f"{Fore.RED}Error: {str(e)}", file=sys.stderr)
        return 2
    return 0 if passed else 1


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print(f"\n{Fore.CYAN}Program interrupted. Exiting...")
        sys.exit(130)
