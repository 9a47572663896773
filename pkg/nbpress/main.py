"""
CLI, main routine
"""

import io
import json
import logging
import sys

from nbpress import (
    analysis,
    config,
    ingest,
    ivcurve,
    option_math,
    parsers,
    regress,
    report,
    synth,
    validate,
)


logging.basicConfig(
    format="[%(asctime)s] %(levelname)s - %(message)s", datefmt="%H:%M:%S"
)

LOG = logging.getLogger("nbpress")
LOG.setLevel(logging.INFO)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_INGEST = 3
EXIT_OPTION_MATH = 4
EXIT_REGRESSION = 5
EXIT_SYNTH = 6
EXIT_CURVE = 7

# Checked in order; subclasses before their parents
EXIT_CODES = (
    (config.ConfigError, EXIT_USAGE),
    (ingest.IngestError, EXIT_INGEST),
    (option_math.DomainError, EXIT_OPTION_MATH),
    (option_math.NumericError, EXIT_OPTION_MATH),
    (regress.RegressionError, EXIT_REGRESSION),
    (ivcurve.CurveError, EXIT_CURVE),
)


class GenerationError(Exception):
    """Synthetic market generation failed."""


def exit_code(exc):
    if isinstance(exc, GenerationError):
        return EXIT_SYNTH
    for error, code in EXIT_CODES:
        if isinstance(exc, error):
            return code
    return EXIT_UNEXPECTED


def run_config(args):
    return config.load_config(
        config_file=getattr(args, "config", None),
        flags=parsers.run_flags(args),
        filters=getattr(args, "filters", None),
    )


def cmd_ingest(args):
    """Clean a trade file; classify and bucket it when a spot file is given."""
    run = run_config(args)
    if not run.trades:
        raise config.ConfigError([("trades", "a trade file is required")])
    book, cleaning = ingest.parse_trades(run.trades, format=run.trades_format)
    outputs = {}
    if run.spot:
        bars, spot_report = ingest.parse_spot(run.spot)
        book = option_math.classify_trades(
            book, bars, sigma_source=run.sigma, rate=run.rate, report=cleaning
        )
        series = analysis.series_for(book, bars, run.interval, run.scale)
        outputs["series.csv"] = report.render_csv(series.to_frame())
        outputs["spot_report.json"] = report.render_json(
            report.json_safe(spot_report.to_dict())
        )
    handle = io.StringIO()
    ingest.write_trades(book, handle, format=run.trades_format)
    outputs[f"trades.clean.{run.trades_format}"] = handle.getvalue()
    outputs["cleaning.json"] = report.render_json(report.json_safe(cleaning.to_dict()))
    report.write_outputs(outputs, run.out)
    print(cleaning, flush=True)
    return EXIT_OK


def cmd_analyze(args):
    """Full battery; outputs are rendered in memory before anything is written."""
    run = run_config(args)
    result = analysis.analyze(run)
    outputs = report.render_outputs(result, run.formats)
    report.write_outputs(outputs, run.out)
    if result.verdict:
        print(json.dumps(result.verdict.to_dict(), indent=2), flush=True)
    if result.failed:
        for notice in result.failed:
            LOG.error("%s: %s", notice.label, notice.message)
        return EXIT_REGRESSION
    return EXIT_OK


def regime_config(args):
    if args.regime_config:
        base = synth.RegimeConfig.from_file(args.regime_config)
    else:
        base = synth.RegimeConfig()
    changes = {}
    if getattr(args, "regime", None):
        changes["regime"] = args.regime
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.horizon is not None:
        changes["horizon_hours"] = args.horizon
    return base.copy(**changes).validate()


def cmd_simulate(args):
    regime = regime_config(args)
    try:
        synth.gen_dataset(regime, out_dir=args.out, format=args.trades_format)
    except (ValueError, ArithmeticError, OSError) as exc:
        raise GenerationError(str(exc)) from exc
    return EXIT_OK


def cmd_validate(args):
    base = regime_config(args)
    summary = validate.validate(
        n_seeds=args.seeds, jobs=args.jobs, base=base, first_seed=args.seed
    )
    print(validate.format_summary(summary), flush=True)
    validate.write_recovery(summary, args.out)
    return EXIT_OK


def cmd_report(args):
    try:
        path = report.rerender(args.report, args.output)
    except ValueError as exc:
        raise config.ConfigError([("report", str(exc))]) from None
    print(path, flush=True)
    return EXIT_OK


def cmd_config(args):
    values = {
        key: getattr(args, key)
        for key in ("interval", "sigma", "rate", "scale", "se", "alpha", "out")
    }
    if all(value is None for value in values.values()):
        LOG.info("No settings given; nothing to save.")
        return EXIT_USAGE
    config.write_config_file(**values)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "report": cmd_report,
    "config": cmd_config,
}


def run(argv):
    args = parsers.parse_args(argv)
    if args.verbose:
        LOG.setLevel(logging.DEBUG)

    LOG.info("Starting nbpress %s", args.command)
    try:
        status = COMMANDS[args.command](args)
    except Exception as exc:
        status = exit_code(exc)
        if status == EXIT_UNEXPECTED:
            LOG.exception("Unexpected error")
        else:
            LOG.error("%s", exc)
        print(f"nbpress {args.command}: {exc}", file=sys.stderr, flush=True)
        return status

    LOG.info("Done!")
    return status


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
