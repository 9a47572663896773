"""Argument parsers."""


import argparse

from nbpress import __version__, config, settings, synth


def add_input_group(parser, spot_required=False):
    group = parser.add_argument_group("Input")
    group.add_argument(
        "--trades",
        help="Option trade file (CSV or JSONL: timestamp_ms,instrument,direction,"
        "amount,option_price_btc,implied_vol,index_price)",
    )
    group.add_argument(
        "--spot",
        help="Spot bar CSV (interval_end_ms,close,volume_usd)",
    )
    group.add_argument(
        "--trades_format",
        choices=config.TRADE_FORMATS,
        help="Format of the trade file (def. csv)",
    )


def add_method_group(parser):
    group = parser.add_argument_group("Method")
    group.add_argument(
        "--interval",
        choices=[w for w in settings.INTERVAL_WIDTHS if w != "5d"],
        help="Aggregation interval width (def. 1h)",
    )
    group.add_argument(
        "--sigma",
        choices=config.SIGMA_SOURCES,
        help="Volatility used for delta classification: 15/30-day realised"
        " volatility or each trade's own IV (def. rv15)",
    )
    group.add_argument(
        "--rate",
        type=float,
        help="Annualised risk-free rate for Black-Scholes deltas (def. 0)",
    )
    group.add_argument(
        "--scale",
        choices=config.SCALES,
        help="Units of IV changes: percentage points or decimal (def. percent)",
    )
    group.add_argument(
        "--se",
        choices=config.STD_ERRORS,
        help="Standard errors: classical or White heteroskedasticity-robust"
        " (def. classical)",
    )
    group.add_argument(
        "--alpha",
        type=float,
        help="Significance level for hypothesis verdicts (def. 0.05)",
    )
    group.add_argument(
        "--by_year",
        action="store_true",
        default=None,
        help="Also fit every regression on each calendar year separately",
    )
    group.add_argument(
        "--curve_window",
        choices=config.CURVE_WINDOWS,
        help="Window of IV curve statistics (def. week)",
    )
    group.add_argument(
        "--filters",
        nargs="+",
        metavar="KEY=VALUE",
        help="Regression filters, e.g. year=2019,2020 maturity=short,long"
        " tod=asia moneyness=OTM type=C",
    )


def add_output_group(parser):
    group = parser.add_argument_group("Output")
    group.add_argument("-o", "--out", help="Output directory (def. nbpress_out)")
    group.add_argument(
        "--formats",
        nargs="+",
        choices=config.REPORT_FORMATS,
        help="Report formats to write (def. tsv json csv)",
    )
    group.add_argument(
        "-c",
        "--config",
        help="Flat key = value file of run settings (flags override it)",
    )


def add_verbose_argument(parser):
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Print debug messages",
    )


def add_ingest_subparser(subparsers):
    parser = subparsers.add_parser(
        "ingest",
        help="Parse and clean a trade file",
        description="Parse and clean a trade file, report the cleaning counts and"
        " write the cleaned trades. If a spot file is given, trades are also"
        " delta-classified and bucketed pressure series are written.",
        epilog="Usage examples\n--------------\n"
        "Clean trades and classify them against a spot series:\n"
        "  $ nbpress ingest --trades trades.csv --spot spot.csv -o cleaned\n",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    add_input_group(parser)
    group = parser.add_argument_group("Method")
    group.add_argument("--interval", choices=[w for w in settings.INTERVAL_WIDTHS if w != "5d"])
    group.add_argument("--sigma", choices=config.SIGMA_SOURCES)
    group.add_argument("--rate", type=float)
    group.add_argument("--scale", choices=config.SCALES)
    add_output_group(parser)
    add_verbose_argument(parser)


def add_analyze_subparser(subparsers):
    parser = subparsers.add_parser(
        "analyze",
        help="Run the pressure regressions and hypothesis verdicts",
        description="Ingest, classify and bucket trades, fit the regression battery"
        " over the filter grid and write tables.tsv, report.json, series.csv and"
        " curve.csv. Nothing is written unless every stage succeeds.",
        epilog="Usage examples\n--------------\n"
        "Hourly analysis with robust standard errors:\n"
        "  $ nbpress analyze --trades trades.csv --spot spot.csv --se robust\n\n"
        "Maturity split for 2020 only:\n"
        "  $ nbpress analyze --trades trades.csv --spot spot.csv \\\n"
        "      --filters year=2020 maturity=short,medium,long\n",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    add_input_group(parser)
    add_method_group(parser)
    add_output_group(parser)
    add_verbose_argument(parser)


def add_simulate_subparser(subparsers):
    parser = subparsers.add_parser(
        "simulate",
        help="Generate a synthetic market with a planted regime",
        description="Generate trades.csv, spot.csv and truth.json for a synthetic"
        " market. Regime parameters come from a JSON or flat key = value file.",
        epilog="Usage examples\n--------------\n"
        "  $ nbpress simulate --regime LimitsToArbitrage --seed 7 -o synthetic\n",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("regime_config", nargs="?", help="Regime configuration file")
    parser.add_argument("--regime", choices=synth.REGIMES, help="Planted regime")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--horizon", type=int, help="Trading hours to simulate")
    parser.add_argument(
        "--trades_format",
        choices=config.TRADE_FORMATS,
        default="csv",
        help="Format of the trade file (def. csv)",
    )
    parser.add_argument("-o", "--out", default="synthetic", help="Output directory")
    add_verbose_argument(parser)


def add_validate_subparser(subparsers):
    parser = subparsers.add_parser(
        "validate",
        help="Measure regime recovery on synthetic markets",
        description="Generate every regime for a number of seeds, run the"
        " regression battery and report recovery and false-positive rates.",
    )
    parser.add_argument(
        "--seeds", type=int, default=100, help="Seeds per regime (def. 100)"
    )
    parser.add_argument("--seed", type=int, default=0, help="First seed (def. 0)")
    parser.add_argument("--horizon", type=int, help="Trading hours per market")
    parser.add_argument(
        "-j", "--jobs", type=int, default=1, help="Worker processes (def. 1)"
    )
    parser.add_argument("regime_config", nargs="?", help="Base regime configuration file")
    parser.add_argument("-o", "--out", default="nbpress_validate", help="Output directory")
    add_verbose_argument(parser)


def add_report_subparser(subparsers):
    parser = subparsers.add_parser(
        "report",
        help="Re-render tables from a report.json",
        description="Rebuild tables.tsv from an existing report.json.",
    )
    parser.add_argument("report", help="report.json written by nbpress analyze")
    parser.add_argument("-o", "--output", help="Output TSV (def. next to the report)")
    add_verbose_argument(parser)


def add_config_subparser(subparsers):
    parser = subparsers.add_parser(
        "config",
        help="Save default run settings",
        description="Save default run settings to the user configuration file.",
        epilog=(
            "Example usage\n-------------\n"
            "Always use robust standard errors and decimal IV changes:\n"
            " $ nbpress config --se robust --scale decimal\n\n"
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--interval", choices=[w for w in settings.INTERVAL_WIDTHS if w != "5d"])
    parser.add_argument("--sigma", choices=config.SIGMA_SOURCES)
    parser.add_argument("--rate", type=float)
    parser.add_argument("--scale", choices=config.SCALES)
    parser.add_argument("--se", choices=config.STD_ERRORS)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--out", help="Default output directory")
    add_verbose_argument(parser)


def get_parser():
    parser = argparse.ArgumentParser(
        "nbpress",
        description="nbpress: net buying pressure and implied volatility analytics"
        " for option trade data.",
    )
    parser.add_argument(
        "--version", action="version", version="%(prog)s " + __version__
    )
    subparsers = parser.add_subparsers(dest="command")
    add_ingest_subparser(subparsers)
    add_analyze_subparser(subparsers)
    add_simulate_subparser(subparsers)
    add_validate_subparser(subparsers)
    add_report_subparser(subparsers)
    add_config_subparser(subparsers)
    return parser


def parse_args(args):
    parser = get_parser()
    args = parser.parse_args(args)

    if not args.command:
        parser.print_help()
        parser.exit(2)

    if args.command == "validate" and args.seeds < 1:
        parser.error("--seeds must be at least 1")

    if args.command == "validate" and args.jobs < 1:
        parser.error("--jobs must be at least 1")

    return args


RUN_FLAGS = (
    "trades",
    "spot",
    "trades_format",
    "interval",
    "sigma",
    "rate",
    "scale",
    "se",
    "alpha",
    "by_year",
    "curve_window",
    "out",
    "formats",
)


def run_flags(args):
    """RunConfig values given on the command line (unset flags are None)."""
    return {flag: getattr(args, flag, None) for flag in RUN_FLAGS}
