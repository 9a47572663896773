"""Implied volatility curve level, slopes and volatility spread.

Options are grouped into five strike-ordered curve categories, pairing calls
and puts of the same strike region:

    1  DITM calls + DOTM puts
    2  ITM calls + OTM puts
    3  ATM calls + ATM puts
    4  OTM calls + ITM puts
    5  DOTM calls + DITM puts

Slopes are taken in the direction of increasing strike and normalised by the
level (category 3 IV), so a smile gives left_slope < 0 < right_slope.
"""

import logging
import math

from enum import IntEnum

import numpy as np
import pandas as pd

from nbpress import settings
from nbpress.models import Moneyness, OptionType, Serialiser
from nbpress.option_math import DomainError, realized_vol_by_day


LOG = logging.getLogger(__name__)


class CurveError(ValueError):
    """Curve statistics cannot be computed for a window."""


class CurveCategory(IntEnum):
    LowStrikeWing = 1
    LowStrike = 2
    AtTheMoney = 3
    HighStrike = 4
    HighStrikeWing = 5


_CALL_CATEGORIES = {
    Moneyness.DITM: CurveCategory.LowStrikeWing,
    Moneyness.ITM: CurveCategory.LowStrike,
    Moneyness.ATM: CurveCategory.AtTheMoney,
    Moneyness.OTM: CurveCategory.HighStrike,
    Moneyness.DOTM: CurveCategory.HighStrikeWing,
}
_PUT_CATEGORIES = {
    Moneyness.DOTM: CurveCategory.LowStrikeWing,
    Moneyness.OTM: CurveCategory.LowStrike,
    Moneyness.ATM: CurveCategory.AtTheMoney,
    Moneyness.ITM: CurveCategory.HighStrike,
    Moneyness.DITM: CurveCategory.HighStrikeWing,
}

REQUIRED = (CurveCategory.LowStrike, CurveCategory.AtTheMoney, CurveCategory.HighStrike)

WINDOWS = {"week": "W-SUN", "year": "Y"}


def curve_category(option_type, moneyness):
    """Strike-ordered curve category of an option.

    >>> curve_category(OptionType.Put, Moneyness.OTM)
    <CurveCategory.LowStrike: 2>

    Raises:
        DomainError: Excluded moneyness or unknown option type.
    """
    option_type = OptionType(option_type)
    moneyness = Moneyness(moneyness)
    if moneyness is Moneyness.Excluded:
        raise DomainError("Excluded options have no curve category")
    if option_type is OptionType.Call:
        return _CALL_CATEGORIES[moneyness]
    if option_type is OptionType.Put:
        return _PUT_CATEGORIES[moneyness]
    raise DomainError("Option type must be Call or Put")


def curve_category_array(option_type, moneyness):
    """Vectorised curve_category over value arrays ('C'/'P', moneyness values)."""
    calls = {m.value: int(c) for m, c in _CALL_CATEGORIES.items()}
    puts = {m.value: int(c) for m, c in _PUT_CATEGORIES.items()}
    option_type = np.asarray(option_type)
    moneyness = pd.Series(np.asarray(moneyness))
    return np.where(
        option_type == OptionType.Call.value,
        moneyness.map(calls).to_numpy(),
        moneyness.map(puts).to_numpy(),
    )


class CurveStats(Serialiser):
    """IV curve statistics of one window.

    Attributes:
        window_end (str): ISO date of the last day in the window.
        level (float): Category 3 mean IV.
        left_slope (float): (IV3 - IV2) / level.
        right_slope (float): (IV4 - IV3) / level.
        vol_spread (float): realized_vol - level.
        relative_iv (dict): Category index -> IV / level (None if empty).
        realized_vol (float): RV used for the spread.
    """

    def __init__(
        self,
        window_end=None,
        level=None,
        left_slope=None,
        right_slope=None,
        vol_spread=None,
        relative_iv=None,
        realized_vol=None,
    ):
        self.window_end = window_end
        self.level = level
        self.left_slope = left_slope
        self.right_slope = right_slope
        self.vol_spread = vol_spread
        self.relative_iv = relative_iv if relative_iv else {}
        self.realized_vol = realized_vol

    def __repr__(self):
        return (
            f"CurveStats(window_end={self.window_end}, level={self.level}, "
            f"left={self.left_slope}, right={self.right_slope}, vs={self.vol_spread})"
        )

    def to_row(self):
        relative = [self.relative_iv.get(int(c)) for c in CurveCategory]
        return [
            self.window_end,
            self.level,
            self.left_slope,
            self.right_slope,
            self.vol_spread,
            *relative,
        ]

    def to_dict(self):
        return {
            "window_end": self.window_end,
            "level": self.level,
            "left_slope": self.left_slope,
            "right_slope": self.right_slope,
            "vol_spread": self.vol_spread,
            "relative_iv": {str(k): v for k, v in self.relative_iv.items()},
            "realized_vol": self.realized_vol,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["relative_iv"] = {int(k): v for k, v in d.get("relative_iv", {}).items()}
        return cls(**d)


def _present(value):
    return value is not None and math.isfinite(value)


def curve_stats(category_ivs, realized_vol, window_end=None):
    """Level, slopes, relative IVs and volatility spread of one curve.

    Parameters:
        category_ivs (dict): Curve category (1..5) -> mean IV.
        realized_vol (float): Realised volatility over the same window.
    Raises:
        CurveError: category 2, 3 or 4 is empty, or the level is not positive.
    """
    ivs = {int(k): v for k, v in category_ivs.items() if _present(v)}
    missing = [str(int(c)) for c in REQUIRED if int(c) not in ivs]
    if missing:
        raise CurveError("Empty curve categor" + ("ies " if len(missing) > 1 else "y ")
                         + ", ".join(missing))
    level = ivs[3]
    if not level > 0:
        raise CurveError(f"Curve level must be positive, got {level}")
    relative = {int(c): (1.0 if int(c) == 3 else ivs[int(c)] / level)
                for c in CurveCategory if int(c) in ivs}
    return CurveStats(
        window_end=window_end,
        level=level,
        left_slope=(level - ivs[2]) / level,
        right_slope=(ivs[4] - level) / level,
        vol_spread=realized_vol - level if _present(realized_vol) else None,
        relative_iv=relative,
        realized_vol=realized_vol,
    )


def _window_frame(book, window):
    if window not in WINDOWS:
        raise ValueError("Expected 'week' or 'year'")
    if not book.classified:
        raise ValueError("Trades must be delta-classified first")
    frame = book.to_frame()
    frame = frame[frame["moneyness"] != Moneyness.Excluded.value]
    stamps = pd.to_datetime(frame["timestamp_ms"], unit="ms", utc=True).dt.tz_localize(None)
    periods = stamps.dt.to_period(WINDOWS[window])
    return pd.DataFrame(
        {
            "window_end": periods.dt.end_time.dt.date.astype(str).to_numpy(),
            "day": (frame["timestamp_ms"] // settings.MS_PER_DAY).to_numpy(),
            "category": curve_category_array(
                frame["option_type"].to_numpy(), frame["moneyness"].to_numpy()
            ),
            "implied_vol": frame["implied_vol"].to_numpy(),
        }
    )


def _window_rv(data, bars, window_days):
    """Mean daily RV over the trading days of each window."""
    if not bars:
        return {}
    by_day = realized_vol_by_day(bars, window_days=window_days)
    days = data[["window_end", "day"]].drop_duplicates()
    days = days.assign(rv=by_day.reindex(days["day"].to_numpy()).to_numpy())
    return days.groupby("window_end")["rv"].mean().to_dict()


def curve_series(book, bars=None, window="week", rv_window_days=15):
    """Curve statistics for every week or year window with trades.

    Windows missing category 2, 3 or 4 are skipped with a warning; missing
    wing categories leave their relative IV empty.

    Returns:
        list: CurveStats in window order.
    """
    data = _window_frame(book, window)
    if data.empty:
        return []
    means = data.groupby(["window_end", "category"])["implied_vol"].mean()
    rv = _window_rv(data, bars, rv_window_days)
    series = []
    for window_end, ivs in means.groupby(level="window_end", sort=True):
        ivs = ivs.droplevel("window_end").to_dict()
        try:
            stats = curve_stats(ivs, rv.get(window_end, math.nan), window_end)
        except CurveError as exc:
            LOG.warning("Skipping curve window ending %s: %s", window_end, exc)
            continue
        series.append(stats)
    LOG.info("Computed %i %sly curve windows", len(series), window)
    return series


def curve_frame(stats):
    """CurveStats list as a DataFrame with settings.CURVE_COLUMNS."""
    return pd.DataFrame(
        [s.to_row() for s in stats], columns=list(settings.CURVE_COLUMNS)
    )


def write_curve(stats, handle):
    curve_frame(stats).to_csv(handle, index=False)


def iv_summary_by_year(book, bars=None, rv_window_days=15):
    """Realised volatility, mean trade IV and their spread per calendar year.

    RV is the mean daily RV over the year's trading days; IV is the unweighted
    mean IV of all classified trades.

    Returns:
        pd.DataFrame: Columns year, rv, iv, vs, trades.
    """
    data = _window_frame(book, "year")
    columns = ["year", "rv", "iv", "vs", "trades"]
    if data.empty:
        return pd.DataFrame(columns=columns)
    rv = _window_rv(data, bars, rv_window_days)
    grouped = data.groupby("window_end").agg(
        iv=("implied_vol", "mean"), trades=("implied_vol", "size")
    )
    grouped["rv"] = [rv.get(end, math.nan) for end in grouped.index]
    grouped["vs"] = grouped["rv"] - grouped["iv"]
    grouped["year"] = [int(end[:4]) for end in grouped.index]
    return grouped.reset_index(drop=True)[columns]
