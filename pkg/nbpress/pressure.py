"""Interval bucketing and net-buying-pressure series.

Trades are bucketed by interval index ``floor(timestamp_ms / width)`` and,
optionally, by maturity bucket and time-of-day slot. For every interval the
aggregated delta-weighted volumes give the order imbalance N, the per-category
pressures A, their directional/volatility decomposition D and V and the
implied volatility change series used by the regressions.

Delta-weighted and raw USD flows are accumulated on a fixed grid of
settings.FLOW_UNITS_PER_USD units per USD, so that every derived quantity
satisfies its identities exactly (A_call == V + D_call, sum of A == N).
"""

import logging
import math

from collections import namedtuple

import numpy as np
import pandas as pd

from nbpress import settings
from nbpress.ingest import spot_frame
from nbpress.models import (
    MONEYNESS_ORDER,
    MaturityBucket,
    Moneyness,
    OptionType,
    TodSlot,
)


LOG = logging.getLogger(__name__)


KEYS = ["t", "moneyness", "option_type", "maturity_bucket", "tod_slot"]
VALUES = ["buy_dw", "sell_dw", "buy_raw", "sell_raw", "iv_sum", "trade_count"]
FLOWS = ["buy_dw", "sell_dw", "buy_raw", "sell_raw"]

MONEYNESS_VALUES = [category.value for category in MONEYNESS_ORDER]
TYPE_VALUES = [OptionType.Call.value, OptionType.Put.value]
MATURITY_VALUES = [bucket.value for bucket in MaturityBucket]
TOD_VALUES = [slot.value for slot in TodSlot]

RANKS = {
    "moneyness": {value: rank for rank, value in enumerate(MONEYNESS_VALUES)},
    "option_type": {value: rank for rank, value in enumerate(TYPE_VALUES)},
    "type": {value: rank for rank, value in enumerate(TYPE_VALUES)},
    "maturity_bucket": {value: rank for rank, value in enumerate(MATURITY_VALUES)},
    "tod_slot": {value: rank for rank, value in enumerate(TOD_VALUES)},
}

SCALES = {"percent": 100.0, "decimal": 1.0}

# Per-category columns that are zero for intervals without trades
PRESSURE_COLUMNS = ["A_call", "A_put", "D_call", "V", "TV", "rel_D", "rel_V"]


BucketKey = namedtuple(
    "BucketKey",
    ["interval_index", "moneyness", "option_type", "maturity_bucket", "tod_slot"],
    defaults=(MaturityBucket.All, TodSlot.All),
)


class IntervalAggregate:
    """Aggregated flow of one bucket.

    Attributes:
        buy_dw (float): Buyer-initiated delta-weighted USD volume.
        sell_dw (float): Seller-initiated delta-weighted USD volume.
        buy_raw (float): Buyer-initiated unweighted USD volume.
        sell_raw (float): Seller-initiated unweighted USD volume.
        iv_sum (float): Sum of trade implied volatilities (decimal).
        trade_count (int): Number of trades.
    """

    def __init__(
        self,
        buy_dw=0.0,
        sell_dw=0.0,
        buy_raw=0.0,
        sell_raw=0.0,
        iv_sum=0.0,
        trade_count=0,
    ):
        self.buy_dw = buy_dw
        self.sell_dw = sell_dw
        self.buy_raw = buy_raw
        self.sell_raw = sell_raw
        self.iv_sum = iv_sum
        self.trade_count = trade_count

    def __repr__(self):
        return (
            f"IntervalAggregate(buy_dw={self.buy_dw}, sell_dw={self.sell_dw}, "
            f"trades={self.trade_count})"
        )

    def __eq__(self, other):
        if not isinstance(other, IntervalAggregate):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    @property
    def mean_iv(self):
        if not self.trade_count:
            return math.nan
        return self.iv_sum / self.trade_count

    @property
    def total_dw(self):
        return self.buy_dw + self.sell_dw

    def to_dict(self):
        return {
            "buy_dw": self.buy_dw,
            "sell_dw": self.sell_dw,
            "buy_raw": self.buy_raw,
            "sell_raw": self.sell_raw,
            "iv_sum": self.iv_sum,
            "trade_count": self.trade_count,
        }


def interval_hours(width):
    """Width of a named interval in hours.

    Raises:
        ValueError: width is not one of settings.INTERVAL_WIDTHS
    """
    try:
        return settings.INTERVAL_WIDTHS[width]
    except KeyError:
        raise ValueError(
            f"Invalid interval width '{width}', expected one of "
            + ", ".join(settings.INTERVAL_WIDTHS)
        ) from None


def interval_ms(width):
    return interval_hours(width) * settings.MS_PER_HOUR


def to_flow_units(usd):
    """Round USD amounts onto the accumulation grid (int64 units)."""
    return np.rint(np.asarray(usd, dtype=float) * settings.FLOW_UNITS_PER_USD).astype(
        np.int64
    )


def maturity_buckets(timestamp_ms, expiry_ms):
    """Maturity bucket of each trade from whole days remaining (ceiling)."""
    remaining = np.asarray(expiry_ms, dtype=np.int64) - np.asarray(timestamp_ms, dtype=np.int64)
    days = -(-remaining // settings.MS_PER_DAY)
    return np.where(
        days <= settings.SHORT_MAX_DAYS,
        MaturityBucket.Short.value,
        np.where(
            days <= settings.MEDIUM_MAX_DAYS,
            MaturityBucket.Medium.value,
            MaturityBucket.Long.value,
        ),
    )


def tod_slots(timestamp_ms):
    """Time-of-day slot of each timestamp (UTC)."""
    hour = (np.asarray(timestamp_ms, dtype=np.int64) // settings.MS_PER_HOUR) % 24
    europe, us = settings.TOD_BREAKS
    return np.where(
        hour < europe,
        TodSlot.Asia.value,
        np.where(hour < us, TodSlot.Europe.value, TodSlot.US.value),
    )


def _rank(column):
    ranks = RANKS.get(column.name)
    if ranks is None:
        return column
    return column.map(ranks)


def sort_rows(frame, columns=None):
    """Sort rows by interval then category enum order."""
    if columns is None:
        columns = [c for c in ("t", "moneyness", "option_type", "type",
                               "maturity_bucket", "tod_slot") if c in frame.columns]
    if frame.empty:
        return frame.reset_index(drop=True)
    return frame.sort_values(columns, key=_rank, kind="stable").reset_index(drop=True)


def _empty_buckets():
    frame = pd.DataFrame({key: pd.Series(dtype=object) for key in KEYS})
    frame["t"] = frame["t"].astype(np.int64)
    for value in VALUES:
        frame[value] = pd.Series(dtype=np.int64 if value == "trade_count" else float)
    return frame


def _key_tuple(key):
    if not isinstance(key, BucketKey):
        key = BucketKey(*key)
    return (
        int(key.interval_index),
        Moneyness(key.moneyness).value,
        OptionType(key.option_type).value,
        MaturityBucket(key.maturity_bucket).value,
        TodSlot(key.tod_slot).value,
    )


class BucketTable:
    """Mapping of BucketKey to IntervalAggregate, backed by a DataFrame.

    The frame holds one row per non-empty bucket with the KEYS columns
    (enum values as strings) and the VALUES columns, in interval then
    category order.
    """

    def __init__(self, frame=None, width="1h"):
        interval_hours(width)
        self.width = width
        if frame is None:
            frame = _empty_buckets()
        self.frame = sort_rows(frame, KEYS)
        self._positions = None

    def __repr__(self):
        return f"BucketTable(width={self.width}, buckets={len(self)})"

    def __len__(self):
        return len(self.frame)

    def __iter__(self):
        return iter(self.keys())

    def __contains__(self, key):
        return _key_tuple(key) in self.positions

    def __getitem__(self, key):
        return self._aggregate(self.positions[_key_tuple(key)])

    @property
    def positions(self):
        if self._positions is None:
            rows = self.frame[KEYS].itertuples(index=False, name=None)
            self._positions = {
                (int(t), k, j, m, s): i for i, (t, k, j, m, s) in enumerate(rows)
            }
        return self._positions

    def get(self, key, default=None):
        try:
            return self[key]
        except KeyError:
            return default

    def _aggregate(self, position):
        row = self.frame.iloc[position]
        return IntervalAggregate(
            buy_dw=float(row["buy_dw"]),
            sell_dw=float(row["sell_dw"]),
            buy_raw=float(row["buy_raw"]),
            sell_raw=float(row["sell_raw"]),
            iv_sum=float(row["iv_sum"]),
            trade_count=int(row["trade_count"]),
        )

    def keys(self):
        return [
            BucketKey(
                int(t),
                Moneyness(k),
                OptionType(j),
                MaturityBucket(m),
                TodSlot(s),
            )
            for t, k, j, m, s in self.frame[KEYS].itertuples(index=False, name=None)
        ]

    def values(self):
        return [self._aggregate(i) for i in range(len(self))]

    def items(self):
        return list(zip(self.keys(), self.values()))

    @property
    def empty(self):
        return self.frame.empty

    @property
    def intervals(self):
        return sorted(set(self.frame["t"].astype(int)))

    def interval(self, t):
        """All aggregates at interval t."""
        rows = np.flatnonzero(self.frame["t"].to_numpy() == t)
        return [self._aggregate(i) for i in rows]

    def aggregates(
        self,
        moneyness,
        option_type,
        maturity_bucket=MaturityBucket.All,
        tod_slot=TodSlot.All,
    ):
        """Aggregates of one (k, j, maturity, tod) series keyed by interval."""
        frame = self.frame
        mask = (
            (frame["moneyness"] == Moneyness(moneyness).value)
            & (frame["option_type"] == OptionType(option_type).value)
            & (frame["maturity_bucket"] == MaturityBucket(maturity_bucket).value)
            & (frame["tod_slot"] == TodSlot(tod_slot).value)
        )
        return {int(frame.at[i, "t"]): self._aggregate(i) for i in np.flatnonzero(mask)}

    def collapse(self, maturity=True, tod=True):
        """Sum disaggregated buckets back into the All maturity and/or tod slot."""
        frame = self.frame.copy()
        if maturity:
            frame["maturity_bucket"] = MaturityBucket.All.value
        if tod:
            frame["tod_slot"] = TodSlot.All.value
        grouped = frame.groupby(KEYS, as_index=False, sort=False)[VALUES].sum()
        return type(self)(grouped, self.width)


def bucket_trades(book, width="1h", by_maturity=False, by_tod=False):
    """Bucket delta-classified trades into interval aggregates.

    Each trade contributes amount * index_price (USD) to the raw volume of its
    side and that flow weighted by |delta| to the delta-weighted volume. A trade
    exactly on an interval boundary belongs to the later interval.

    Parameters:
        book (TradeBook): Trades classified by option_math.classify_trades.
        width (str): Interval width key from settings.INTERVAL_WIDTHS.
        by_maturity (bool): Split buckets by maturity bucket.
        by_tod (bool): Split buckets by time-of-day slot of each trade.
    Returns:
        BucketTable: Empty if there are no trades.
    Raises:
        ValueError: Invalid width, or trades that have not been classified.
    """
    width_ms = interval_ms(width)
    if not len(book):
        return BucketTable(width=width)
    if not book.classified:
        raise ValueError("Trades must be delta-classified before bucketing")

    frame = book.to_frame()
    frame = frame[frame["moneyness"] != Moneyness.Excluded.value]
    stamps = frame["timestamp_ms"].to_numpy(dtype=np.int64)
    flow = frame["amount"].to_numpy(dtype=float) * frame["index_price"].to_numpy(dtype=float)
    weighted = to_flow_units(flow * np.abs(frame["delta"].to_numpy(dtype=float)))
    raw = to_flow_units(flow)
    buy = (frame["direction"] == "buy").to_numpy()
    zero = np.zeros(len(frame), dtype=np.int64)

    if by_maturity:
        maturity = maturity_buckets(stamps, frame["expiry_ms"].to_numpy())
    else:
        maturity = np.full(len(frame), MaturityBucket.All.value, dtype=object)
    if by_tod:
        tod = tod_slots(stamps)
    else:
        tod = np.full(len(frame), TodSlot.All.value, dtype=object)

    data = pd.DataFrame(
        {
            "t": stamps // width_ms,
            "moneyness": frame["moneyness"].to_numpy(),
            "option_type": frame["option_type"].to_numpy(),
            "maturity_bucket": maturity,
            "tod_slot": tod,
            "buy_dw": np.where(buy, weighted, zero),
            "sell_dw": np.where(buy, zero, weighted),
            "buy_raw": np.where(buy, raw, zero),
            "sell_raw": np.where(buy, zero, raw),
            "iv_sum": frame["implied_vol"].to_numpy(dtype=float),
            "trade_count": np.ones(len(frame), dtype=np.int64),
        }
    )
    grouped = data.groupby(KEYS, as_index=False, sort=False)[VALUES].sum()
    for column in FLOWS:
        grouped[column] = grouped[column].to_numpy(dtype=float) / settings.FLOW_UNITS_PER_USD

    LOG.info(
        "Bucketed %i trades into %i %s buckets", len(frame), len(grouped), width
    )
    return BucketTable(grouped, width)


def order_imbalance(aggregates):
    """Aggregate order imbalance N_t over all aggregates of one interval."""
    aggregates = list(aggregates)
    buys = sum((aggregate.buy_dw for aggregate in aggregates), 0.0)
    return buys - sum((aggregate.sell_dw for aggregate in aggregates), 0.0)


def category_pressure(aggregate):
    """Net buying pressure A of one (t, j, k) aggregate; 0 for no aggregate."""
    if aggregate is None:
        return 0.0
    return aggregate.buy_dw - aggregate.sell_dw


def decompose(a_call, a_put):
    """Split call and put pressures into (D_call, D_put, V).

    D_call = (A_call - A_put) / 2, D_put = -D_call, V = (A_call + A_put) / 2.
    Works element-wise on arrays.
    """
    d_call = (a_call - a_put) / 2
    return d_call, -d_call, (a_call + a_put) / 2


def relative_pressure(d_call, v, tv):
    """Pressures relative to the total delta-weighted volume TV.

    Both are 0 when TV is 0. Works element-wise on arrays.
    """
    if np.ndim(tv) == 0:
        if not tv > 0:
            return 0.0, 0.0
        return d_call / tv, v / tv
    tv = np.asarray(tv, dtype=float)
    positive = tv > 0
    safe = np.where(positive, tv, 1.0)
    return (
        np.where(positive, np.asarray(d_call, dtype=float) / safe, 0.0),
        np.where(positive, np.asarray(v, dtype=float) / safe, 0.0),
    )


def iv_change_series(aggregates):
    """Changes of the mean implied volatility between consecutive intervals.

    Parameters:
        aggregates (dict): interval index -> IntervalAggregate (or mean IV).
    Returns:
        list: (t, change) tuples, only where intervals t-1 and t both have
            trades.
    """
    levels = {}
    for t, aggregate in aggregates.items():
        level = aggregate.mean_iv if isinstance(aggregate, IntervalAggregate) else aggregate
        if level is not None and math.isfinite(level):
            levels[int(t)] = float(level)
    return [(t, levels[t] - levels[t - 1]) for t in sorted(levels) if t - 1 in levels]


def spot_series(bars, width="1h"):
    """Per-interval spot close, log return, USD volume and realised volatility.

    A bar belongs to the interval containing the instant just before its end.
    Intervals between the first and last bar without any bar have missing
    values; their regression rows are dropped downstream.

    Returns:
        pd.DataFrame: Columns t, close, r, v, rv; one row per interval.
    """
    width_ms = interval_ms(width)
    columns = ["t", "close", "r", "v", "rv"]
    spot = spot_frame(bars)
    if spot.empty:
        return pd.DataFrame({column: pd.Series(dtype=float) for column in columns})

    ends = spot["interval_end_ms"].to_numpy(dtype=np.int64)
    spot["t"] = (ends - 1) // width_ms
    spot["r2"] = np.log(spot["close"] / spot["close"].shift(1)) ** 2
    grouped = spot.groupby("t").agg(
        close=("close", "last"),
        v=("volume", "sum"),
        r2=("r2", "mean"),
    )
    span = pd.RangeIndex(grouped.index.min(), grouped.index.max() + 1, name="t")
    grouped = grouped.reindex(span)
    grouped["r"] = np.log(grouped["close"] / grouped["close"].shift(1))

    spacing = float(np.median(np.diff(ends))) if len(ends) > 1 else float(width_ms)
    bars_per_year = settings.MS_PER_YEAR / spacing
    grouped["rv"] = np.sqrt(bars_per_year * grouped["r2"])
    return grouped.reset_index()[columns]


def _scale_factor(scale):
    try:
        return SCALES[scale]
    except KeyError:
        raise ValueError(f"Invalid scale '{scale}', expected percent or decimal") from None


def _consecutive_change(frame, column, groups):
    """Change of column from the previous interval within each group, NaN on gaps."""
    previous_t = frame.groupby(groups, sort=False)["t"].shift(1)
    previous = frame.groupby(groups, sort=False)[column].shift(1)
    change = frame[column] - previous
    return change.where(previous_t == frame["t"] - 1)


def build_series(table, spot=None, scale="percent"):
    """Build net-buying-pressure series from a bucket table.

    Parameters:
        table (BucketTable): Output of bucket_trades (optionally collapsed).
        spot (pd.DataFrame): Output of spot_series at the same width, or None.
        scale (str): 'percent' reports IV changes in percentage points,
            'decimal' as decimal changes.
    Returns:
        PressureSeries
    """
    factor = _scale_factor(scale)
    if table.empty:
        return PressureSeries(None, table.width, scale, spot)

    groups = ["t", "moneyness", "maturity_bucket", "tod_slot"]
    wide = table.frame.set_index(groups + ["option_type"])[VALUES].unstack(
        "option_type", fill_value=0
    )
    wide = wide.reindex(
        columns=pd.MultiIndex.from_product([VALUES, TYPE_VALUES]), fill_value=0
    )

    def flow(value, option_type):
        return wide[(value, option_type)].to_numpy(dtype=float)

    a_call = flow("buy_dw", "C") - flow("sell_dw", "C")
    a_put = flow("buy_dw", "P") - flow("sell_dw", "P")
    d_call, _, v = decompose(a_call, a_put)
    tv = (flow("buy_dw", "C") + flow("sell_dw", "C")) + (
        flow("buy_dw", "P") + flow("sell_dw", "P")
    )
    rel_d, rel_v = relative_pressure(d_call, v, tv)
    counts = {j: wide[("trade_count", j)].to_numpy(dtype=np.int64) for j in TYPE_VALUES}
    iv_sums = {j: flow("iv_sum", j) for j in TYPE_VALUES}

    out = wide.index.to_frame(index=False)
    out["A_call"] = a_call
    out["A_put"] = a_put
    out["D_call"] = d_call
    out["V"] = v
    out["TV"] = tv
    out["rel_D"] = rel_d
    out["rel_V"] = rel_v
    with np.errstate(invalid="ignore", divide="ignore"):
        for j, name in (("C", "call"), ("P", "put")):
            out[f"count_{name}"] = counts[j]
            out[f"mean_iv_{name}"] = np.where(counts[j] > 0, iv_sums[j] / counts[j], np.nan)
    out["iv_sum"] = iv_sums["C"] + iv_sums["P"]
    out["raw"] = (flow("buy_raw", "C") + flow("sell_raw", "C")) + (
        flow("buy_raw", "P") + flow("sell_raw", "P")
    )
    out = sort_rows(out, groups)

    out["N"] = out.groupby(["t", "maturity_bucket", "tod_slot"])["A_call"].transform(
        "sum"
    ) + out.groupby(["t", "maturity_bucket", "tod_slot"])["A_put"].transform("sum")

    category = ["moneyness", "maturity_bucket", "tod_slot"]
    for name in ("call", "put"):
        out[f"delta_iv_{name}"] = (
            _consecutive_change(out, f"mean_iv_{name}", category) * factor
        )

    span = np.arange(out["t"].min(), out["t"].max() + 1)
    volume = out.groupby(["maturity_bucket", "tod_slot", "t"])["raw"].sum()
    pieces = []
    for (maturity, tod), group in volume.groupby(level=["maturity_bucket", "tod_slot"]):
        per_t = group.droplevel(["maturity_bucket", "tod_slot"]).reindex(span, fill_value=0.0)
        pieces.append(
            pd.DataFrame(
                {
                    "t": span,
                    "maturity_bucket": maturity,
                    "tod_slot": tod,
                    "volume": per_t.to_numpy(),
                    "delta_v": per_t.diff().to_numpy(),
                }
            )
        )
    changes = pd.concat(pieces, ignore_index=True)
    out = out.merge(changes, on=["t", "maturity_bucket", "tod_slot"], how="left")
    return PressureSeries(out, table.width, scale, spot, volume=changes)


class PressureSeries:
    """Net-buying-pressure series at one interval width.

    ``frame`` has one row per (t, moneyness, maturity_bucket, tod_slot) with
    A_call, A_put, D_call, V, TV, rel_D, rel_V, N, mean_iv_call/put,
    delta_iv_call/put (scaled), trade counts and delta_v. Spot returns and
    volumes live in ``spot`` (indexed by t) and are joined on export.
    """

    def __init__(self, frame=None, width="1h", scale="percent", spot=None, volume=None):
        self.width = width
        self.scale = scale
        self.factor = _scale_factor(scale)
        self.frame = frame if frame is not None else pd.DataFrame()
        if spot is None:
            spot = pd.DataFrame({c: pd.Series(dtype=float) for c in ("t", "close", "r", "v", "rv")})
        self.spot = spot.set_index("t") if "t" in spot.columns else spot
        self.volume = volume

    def __repr__(self):
        return f"PressureSeries(width={self.width}, rows={len(self.frame)}, scale={self.scale})"

    def __len__(self):
        return len(self.frame)

    @property
    def empty(self):
        return self.frame.empty

    @property
    def span(self):
        if self.empty:
            return pd.RangeIndex(0, 0, name="t")
        return pd.RangeIndex(
            int(self.frame["t"].min()), int(self.frame["t"].max()) + 1, name="t"
        )

    def interval_start_ms(self, t):
        return np.asarray(t, dtype=np.int64) * interval_ms(self.width)

    def years(self, t):
        """UTC calendar year of each interval start."""
        stamps = pd.to_datetime(self.interval_start_ms(t), unit="ms", utc=True)
        return np.asarray(stamps.year)

    def tod_slots(self, t):
        """Time-of-day slot of each interval start."""
        if interval_hours(self.width) > settings.TOD_BREAKS[0]:
            raise ValueError(
                f"Time-of-day filters need intervals of at most {settings.TOD_BREAKS[0]}h"
            )
        return tod_slots(self.interval_start_ms(t))

    def _spot_on(self, span):
        return self.spot.reindex(span)[["r", "v", "rv"]]

    def _rows(self, maturity_bucket, tod_slot):
        frame = self.frame
        if frame.empty:
            return frame
        return frame[
            (frame["maturity_bucket"] == MaturityBucket(maturity_bucket).value)
            & (frame["tod_slot"] == TodSlot(tod_slot).value)
        ]

    def category_frame(
        self, moneyness, maturity_bucket=MaturityBucket.All, tod_slot=TodSlot.All
    ):
        """Per-interval series of one moneyness category over the full span.

        Intervals without trades in the category have zero pressures and
        missing IV levels; N, r, v and delta_v come from all categories.
        """
        span = self.span
        rows = self._rows(maturity_bucket, tod_slot)
        if rows.empty:
            raise KeyError(
                f"No series for maturity {MaturityBucket(maturity_bucket).value}, "
                f"tod {TodSlot(tod_slot).value}"
            )
        per_t = rows.groupby("t")[["N"]].first().reindex(span, fill_value=0.0)
        category = rows[rows["moneyness"] == Moneyness(moneyness).value].set_index("t")
        columns = PRESSURE_COLUMNS + [
            "mean_iv_call", "mean_iv_put", "delta_iv_call", "delta_iv_put",
            "count_call", "count_put",
        ]
        category = category[columns].reindex(span)
        category[PRESSURE_COLUMNS + ["count_call", "count_put"]] = category[
            PRESSURE_COLUMNS + ["count_call", "count_put"]
        ].fillna(0.0)
        category["N"] = per_t["N"]
        volume = self.volume
        if volume is not None:
            volume = volume[
                (volume["maturity_bucket"] == MaturityBucket(maturity_bucket).value)
                & (volume["tod_slot"] == TodSlot(tod_slot).value)
            ].set_index("t")
            category["delta_v"] = volume["delta_v"].reindex(span)
        return category.join(self._spot_on(span))

    def totals(self, maturity_bucket=MaturityBucket.All, tod_slot=TodSlot.All):
        """Per-interval market totals used by the predictive regressions.

        Columns: N, volume, delta_v, mean_iv, delta_iv (scaled), r, v, rv,
        delta_rv (scaled).
        """
        span = self.span
        rows = self._rows(maturity_bucket, tod_slot)
        grouped = rows.groupby("t").agg(
            N=("N", "first"),
            iv_sum=("iv_sum", "sum"),
            count_call=("count_call", "sum"),
            count_put=("count_put", "sum"),
        ).reindex(span)
        grouped["N"] = grouped["N"].fillna(0.0)
        count = grouped["count_call"].fillna(0) + grouped["count_put"].fillna(0)
        grouped["mean_iv"] = grouped["iv_sum"] / count.where(count > 0)
        grouped["delta_iv"] = grouped["mean_iv"].diff() * self.factor
        if self.volume is not None:
            volume = self.volume[
                (self.volume["maturity_bucket"] == MaturityBucket(maturity_bucket).value)
                & (self.volume["tod_slot"] == TodSlot(tod_slot).value)
            ].set_index("t")
            grouped["volume"] = volume["volume"].reindex(span)
            grouped["delta_v"] = volume["delta_v"].reindex(span)
        grouped = grouped.join(self._spot_on(span))
        grouped["delta_rv"] = grouped["rv"].diff() * self.factor
        return grouped[["N", "volume", "delta_v", "mean_iv", "delta_iv", "r", "v", "rv",
                        "delta_rv"]]

    def to_frame(self):
        """Long export frame with settings.SERIES_COLUMNS, one row per type."""
        if self.empty:
            return pd.DataFrame({column: [] for column in settings.SERIES_COLUMNS})
        frame = self.frame
        spot = self.spot.reindex(frame["t"].to_numpy())
        pieces = []
        for j, name in (("C", "call"), ("P", "put")):
            pieces.append(
                pd.DataFrame(
                    {
                        "t": frame["t"].to_numpy(),
                        "moneyness": frame["moneyness"].to_numpy(),
                        "type": j,
                        "maturity_bucket": frame["maturity_bucket"].to_numpy(),
                        "tod_slot": frame["tod_slot"].to_numpy(),
                        "N": frame["N"].to_numpy(),
                        "A": frame[f"A_{name}"].to_numpy(),
                        "D_call": frame["D_call"].to_numpy(),
                        "V": frame["V"].to_numpy(),
                        "TV": frame["TV"].to_numpy(),
                        "rel_D": frame["rel_D"].to_numpy(),
                        "rel_V": frame["rel_V"].to_numpy(),
                        "mean_iv": frame[f"mean_iv_{name}"].to_numpy(),
                        "delta_iv": frame[f"delta_iv_{name}"].to_numpy(),
                        "r": spot["r"].to_numpy() if "r" in spot else np.nan,
                        "v": spot["v"].to_numpy() if "v" in spot else np.nan,
                        "delta_v": frame["delta_v"].to_numpy(),
                    }
                )
            )
        long = pd.concat(pieces, ignore_index=True)
        return sort_rows(
            long, ["t", "moneyness", "type", "maturity_bucket", "tod_slot"]
        )[list(settings.SERIES_COLUMNS)]

    def to_csv(self, handle):
        self.to_frame().to_csv(handle, index=False)


def concat_series(series_list):
    """Combine series of the same width and scale built from different tables."""
    series_list = [series for series in series_list if not series.empty]
    if not series_list:
        return PressureSeries()
    first = series_list[0]
    frame = pd.concat([series.frame for series in series_list], ignore_index=True)
    volumes = [series.volume for series in series_list if series.volume is not None]
    merged = PressureSeries(
        sort_rows(frame, ["t", "moneyness", "maturity_bucket", "tod_slot"]),
        first.width,
        first.scale,
        first.spot.reset_index(),
        volume=pd.concat(volumes, ignore_index=True) if volumes else None,
    )
    return merged


def pressure_summary(series, by="year"):
    """Mean and standard deviation of N, A_call, A_put, D_call and V.

    Rows are the All maturity / All tod series of each moneyness category,
    grouped by the calendar year or time-of-day slot of the interval start.

    Returns:
        pd.DataFrame: Columns group, moneyness, metric, mean, std, nobs.
    """
    if by not in ("year", "tod"):
        raise ValueError("Expected 'year' or 'tod'")
    records = []
    for moneyness in MONEYNESS_ORDER:
        try:
            frame = series.category_frame(moneyness)
        except KeyError:
            break
        t = frame.index.to_numpy()
        groups = series.years(t) if by == "year" else series.tod_slots(t)
        frame = frame.assign(group=groups)
        for group, rows in frame.groupby("group", sort=True):
            for metric in ("N", "A_call", "A_put", "D_call", "V"):
                values = rows[metric].to_numpy(dtype=float)
                records.append(
                    {
                        "group": group,
                        "moneyness": moneyness.value,
                        "metric": metric,
                        "mean": float(np.mean(values)),
                        "std": float(np.std(values, ddof=1)) if len(values) > 1 else math.nan,
                        "nobs": len(values),
                    }
                )
    return pd.DataFrame.from_records(
        records, columns=["group", "moneyness", "metric", "mean", "std", "nobs"]
    )


def _volume_shares(book, groups):
    if not book.classified:
        raise ValueError("Trades must be delta-classified first")
    frame = book.to_frame()
    frame = frame[frame["moneyness"] != Moneyness.Excluded.value]
    stamps = pd.to_datetime(frame["timestamp_ms"], unit="ms", utc=True)
    data = pd.DataFrame(
        {
            "year": stamps.dt.year.to_numpy(),
            "moneyness": frame["moneyness"].to_numpy(),
            "option_type": frame["option_type"].to_numpy(),
            "maturity_bucket": maturity_buckets(frame["timestamp_ms"], frame["expiry_ms"]),
            "volume_usd": (frame["amount"] * frame["index_price"]).to_numpy(),
        }
    )
    columns = ["year"] + groups
    grouped = data.groupby(columns, as_index=False).agg(
        trades=("volume_usd", "size"),
        volume_usd=("volume_usd", "sum"),
    )
    totals = grouped.groupby("year")["volume_usd"].transform("sum")
    grouped["share"] = grouped["volume_usd"] / totals
    return sort_rows(grouped, columns)


def volume_by_moneyness(book):
    """Trade counts and USD volume share per year, moneyness and option type.

    Shares are fractions of the year's total unweighted USD volume.
    """
    return _volume_shares(book, ["moneyness", "option_type"])


def volume_by_maturity(book):
    """Trade counts and USD volume share per year and maturity bucket."""
    return _volume_shares(book, ["maturity_bucket"])
