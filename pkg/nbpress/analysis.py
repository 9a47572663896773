"""Run the full pressure analysis in memory.

The battery fits, for every sample (year range), maturity bucket and
time-of-day slot requested:

- BollenATM for each option type
- BollenK for OTM/DOTM categories and each option type (ATM driver of the
  same type)
- ChenDecomposition for ATM/OTM/DOTM categories and each option type

plus the predictive regressions at 1h, 1d and 5d horizons. Specs without
enough observations become notices instead of results.
"""

import logging

from nbpress import ingest, ivcurve, option_math, pressure, regress
from nbpress.models import MaturityBucket, Moneyness, OptionType, TodSlot


LOG = logging.getLogger(__name__)

BOLLEN_K_CATEGORIES = (Moneyness.OTM, Moneyness.DOTM)
CHEN_CATEGORIES = (Moneyness.ATM, Moneyness.OTM, Moneyness.DOTM)


class Notice:
    """A regression that produced no result."""

    def __init__(self, label, message, kind="insufficient_rows"):
        self.label = label
        self.message = message
        self.kind = kind

    def __repr__(self):
        return f"Notice({self.label}: {self.message})"

    def to_dict(self):
        return {"label": self.label, "kind": self.kind, "message": self.message}

    @classmethod
    def from_dict(cls, d):
        return cls(d["label"], d["message"], d.get("kind", "insufficient_rows"))


class Analysis:
    """Everything an analyze run produces, before anything is written."""

    def __init__(
        self,
        config,
        cleaning,
        spot_report,
        series,
        results,
        notices,
        verdict,
        curve,
        summaries,
    ):
        self.config = config
        self.cleaning = cleaning
        self.spot_report = spot_report
        self.series = series
        self.results = results
        self.notices = notices
        self.verdict = verdict
        self.curve = curve
        self.summaries = summaries

    @property
    def failed(self):
        return [notice for notice in self.notices if notice.kind == "error"]


def samples(config, series):
    """Year ranges to fit: listed years, each data year, or the full sample."""
    if config.years:
        return [(year, year) for year in sorted(set(config.years))]
    grid = [None]
    if config.by_year and not series.empty:
        years = sorted(set(int(y) for y in series.years(series.span.to_numpy())))
        grid.extend((year, year) for year in years)
    return grid


def _attempt(fit, label, results, notices):
    try:
        results.append(fit())
    except regress.InsufficientRowsError as exc:
        LOG.warning("Insufficient rows: %s", exc)
        notices.append(Notice(label, str(exc)))
    except regress.RegressionError as exc:
        LOG.error("Regression failed: %s", exc)
        notices.append(Notice(label, str(exc), kind="error"))


def run_battery(
    series,
    years_grid=(None,),
    maturities=("all",),
    tods=("all",),
    moneyness=None,
    types=("C", "P"),
    robust=False,
):
    """Fit the BollenATM, BollenK and Chen regressions over a filter grid.

    Returns:
        (list, list): RegressionResult objects and Notice objects, in grid
            order.
    """
    selected = set(moneyness) if moneyness else {m.value for m in Moneyness}
    results, notices = [], []
    for years in years_grid:
        for maturity in maturities:
            for tod in tods:
                filters = dict(
                    years=years,
                    maturity_bucket=MaturityBucket(maturity),
                    tod_slot=TodSlot(tod),
                    robust=robust,
                )
                where = _where(years, maturity, tod)
                for j in types:
                    option_type = OptionType(j)
                    if Moneyness.ATM.value in selected:
                        _attempt(
                            lambda: regress.run_bollen_atm(series, option_type, **filters),
                            f"BollenATM ATM {j}{where}",
                            results,
                            notices,
                        )
                    for k in BOLLEN_K_CATEGORIES:
                        if k.value in selected:
                            _attempt(
                                lambda: regress.run_bollen_k(
                                    series, k, option_type, **filters
                                ),
                                f"BollenK {k.value} {j}{where}",
                                results,
                                notices,
                            )
                    for k in CHEN_CATEGORIES:
                        if k.value in selected:
                            _attempt(
                                lambda: regress.run_chen(series, k, option_type, **filters),
                                f"ChenDecomposition {k.value} {j}{where}",
                                results,
                                notices,
                            )
    return results, notices


def _where(years, maturity, tod):
    parts = []
    if years:
        first, last = years
        parts.append(str(first) if first == last else f"{first}-{last}")
    if maturity != "all":
        parts.append(maturity)
    if tod != "all":
        parts.append(tod)
    return (" " + " ".join(parts)) if parts else ""


def run_predictive_battery(classified, bars, years_grid=(None,), scale="percent", robust=False):
    """Predictive regressions at every horizon, variable and predictor."""
    results, notices = [], []
    for horizon, width in regress.HORIZONS.items():
        table = pressure.bucket_trades(classified, width)
        series = pressure.build_series(table, pressure.spot_series(bars, width), scale)
        for years in years_grid:
            for x in regress.PREDICTORS:
                for y in regress.TARGETS:
                    _attempt(
                        lambda: regress.run_predictive(
                            series, horizon, x, y, years=years, robust=robust
                        ),
                        f"Predictive {x}_{horizon}~{y}{_where(years, 'all', 'all')}",
                        results,
                        notices,
                    )
    return results, notices


def headline(results):
    """Full-sample, all-maturity, all-day Bollen and Chen results."""
    return [
        result
        for result in results
        if result.spec
        and result.spec.name != "Predictive"
        and result.spec.years is None
        and result.spec.maturity_bucket is MaturityBucket.All
        and result.spec.tod_slot is TodSlot.All
    ]


def series_for(classified, bars, interval, scale, by_maturity=False, by_tod=False):
    """Pressure series at All level plus any requested disaggregation."""
    table = pressure.bucket_trades(
        classified, interval, by_maturity=by_maturity, by_tod=by_tod
    )
    spot = pressure.spot_series(bars, interval)
    parts = [pressure.build_series(table.collapse(), spot, scale)]
    if by_maturity:
        parts.append(pressure.build_series(table.collapse(maturity=False), spot, scale))
    if by_tod:
        parts.append(pressure.build_series(table.collapse(tod=False), spot, scale))
    return pressure.concat_series(parts) if len(parts) > 1 else parts[0]


def analyze(config):
    """Ingest, classify, bucket, regress and summarise according to config.

    Raises:
        IngestError, DomainError, CurveError: fatal module failures.
    """
    if not config.trades or not config.spot:
        raise ingest.IngestError("Both a trade file and a spot file are required")
    book, cleaning = ingest.parse_trades(config.trades, format=config.trades_format)
    bars, spot_report = ingest.parse_spot(config.spot)
    classified = option_math.classify_trades(
        book, bars, sigma_source=config.sigma, rate=config.rate, report=cleaning
    )
    if not len(classified):
        raise ingest.IngestError("no trades left after delta classification")

    by_maturity = any(m != "all" for m in config.maturity)
    by_tod = any(s != "all" for s in config.tod)
    series = series_for(
        classified, bars, config.interval, config.scale, by_maturity, by_tod
    )

    robust = config.se == "robust"
    grid = samples(config, series)
    results, notices = run_battery(
        series,
        years_grid=grid,
        maturities=config.maturity,
        tods=config.tod,
        moneyness=config.moneyness,
        types=config.types,
        robust=robust,
    )
    predictive, predictive_notices = run_predictive_battery(
        classified, bars, years_grid=grid, scale=config.scale, robust=robust
    )

    verdict = None
    try:
        verdict = regress.evaluate_verdict(
            headline(results) or [r for r in results if r.spec.name != "Predictive"],
            alpha=config.alpha,
        )
    except regress.RegressionError as exc:
        LOG.warning("No verdict: %s", exc)
        notices.append(Notice("verdict", str(exc)))

    curve = ivcurve.curve_series(classified, bars, window=config.curve_window)
    summaries = {
        "pressure_by_year": pressure.pressure_summary(series, by="year"),
        "volume_by_moneyness": pressure.volume_by_moneyness(classified),
        "volume_by_maturity": pressure.volume_by_maturity(classified),
        "iv_by_year": ivcurve.iv_summary_by_year(classified, bars),
    }
    if pressure.interval_hours(config.interval) <= 8:
        summaries["pressure_by_tod"] = pressure.pressure_summary(series, by="tod")

    LOG.info(
        "Analysis finished: %i results, %i notices", len(results) + len(predictive),
        len(notices) + len(predictive_notices),
    )
    return Analysis(
        config=config,
        cleaning=cleaning,
        spot_report=spot_report,
        series=series,
        results=results + predictive,
        notices=notices + predictive_notices,
        verdict=verdict,
        curve=curve,
        summaries=summaries,
    )
