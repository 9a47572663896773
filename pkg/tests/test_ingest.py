"""
Test suite for ingest.py
"""

import datetime
import io
import json
import time

import numpy as np
import pandas as pd
import pytest

from hypothesis import given, settings as hsettings, strategies as st

from nbpress import ingest, option_math, pressure
from nbpress.models import OptionType, SpotBar

from conftest import DAY, T0, hourly_bars


HEADER = "timestamp_ms,instrument,direction,amount,option_price_btc,implied_vol,index_price\n"


def trade_csv(*rows):
    return (HEADER + "".join(row + "\n" for row in rows)).encode("utf-8")


GOOD = "1609459200000,BTC-29JAN21-30000-C,buy,1.0,0.05,0.8,29000.0"


def test_parse_instrument():
    expiry, strike, option_type = ingest.parse_instrument("BTC-28JUL21-35000-C")
    assert expiry == datetime.datetime(2021, 7, 28, 8, tzinfo=datetime.timezone.utc)
    assert strike == 35000.0
    assert option_type is OptionType.Call


def test_parse_instrument_blank_type():
    assert ingest.parse_instrument("BTC-28JUL21-35000-")[2] is OptionType.Unknown


@pytest.mark.parametrize(
    "name", ["XYZ", "BTC-1JAN21-0-C", "BTC-31FEB21-100-C", "BTC-1XXX21-100-C", "BTC-1JAN21-100-X"]
)
def test_parse_instrument_invalid(name):
    with pytest.raises(ingest.IngestError):
        ingest.parse_instrument(name)


def test_parse_instrument_zero_strike_message():
    with pytest.raises(ingest.IngestError, match="Strike must be positive"):
        ingest.parse_instrument("BTC-1JAN21-0-C")


def test_parse_trades_sorted_and_counted():
    data = trade_csv(
        "1609459200500,BTC-29JAN21-30000-P,sell,2.0,0.04,0.9,29000.0",
        GOOD,
        "1609459200100,BTC-29JAN21-30000-,buy,1.0,0.05,0.8,29000.0",
        "1609459200200,BTC-29JAN21-30000-C,buy,1.0,0.05,5.01,29000.0",
        "1609459200300,BTC-29JAN21-30000-C,buy,1.0,0.05,0,29000.0",
        "1609459200400,BTC-29JAN21-30000-C,buy,1.0,0.05,5.0,29000.0",
    )
    book, report = ingest.parse_trades(io.BytesIO(data))
    assert [t.timestamp_ms for t in book] == [1609459200000, 1609459200400, 1609459200500]
    assert report.total_in == 6
    assert report.dropped_missing_type == 1
    assert report.dropped_iv_bounds == 2
    assert report.total_out == 3
    assert report.reconciles()


def test_parse_trades_malformed_rows_recorded():
    data = trade_csv(
        GOOD,
        "notanumber,BTC-29JAN21-30000-C,buy,1.0,0.05,0.8,29000.0",
        "1609459200000,XYZ,buy,1.0,0.05,0.8,29000.0",
        "1609459200000,BTC-29JAN21-30000-C,hold,1.0,0.05,0.8,29000.0",
        "1609459200000,BTC-29JAN21-30000-C,buy,-1.0,0.05,0.8,29000.0",
        "1609459200000,BTC-29JAN21-30000-C,buy,1.0,-0.05,0.8,29000.0",
        "1609459200000,BTC-29JAN21-30000-C,buy,1.0,0.05,0.8,0",
        "1643443200000,BTC-29JAN21-30000-C,buy,1.0,0.05,0.8,29000.0",
        "1609459200000,BTC-29JAN21-30000-C,buy",
    )
    book, report = ingest.parse_trades(io.BytesIO(data))
    assert len(book) == 1
    assert report.malformed == 8
    assert [row for row, _ in report.errors] == [3, 4, 5, 6, 7, 8, 9, 10]
    assert report.reconciles()


def test_parse_trades_empty_file():
    with pytest.raises(ingest.IngestError, match="no trades"):
        ingest.parse_trades(io.BytesIO(b""))


def test_parse_trades_bad_header():
    with pytest.raises(ingest.IngestError, match="header"):
        ingest.parse_trades(io.BytesIO(b"a,b,c\n1,2,3\n"))


def test_parse_trades_unreadable():
    with pytest.raises(ingest.IngestError):
        ingest.parse_trades(io.BytesIO(HEADER.encode() + b"\xff\xfe\xfa\n"))


def test_parse_trades_missing_file(tmp_path):
    with pytest.raises(ingest.IngestError):
        ingest.parse_trades(tmp_path / "missing.csv")


def test_parse_trades_jsonl():
    record = dict(
        timestamp_ms=1609459200000,
        instrument="BTC-29JAN21-30000-C",
        direction="sell",
        amount=0.5,
        option_price_btc=0.05,
        implied_vol=0.8,
        index_price=29000.0,
    )
    data = (json.dumps(record) + "\n{not json}\n").encode()
    book, report = ingest.parse_trades(io.BytesIO(data), format="jsonl")
    assert len(book) == 1
    assert report.malformed == 1
    assert book[0].amount == 0.5


def test_parse_trades_duplicates_kept():
    book, _ = ingest.parse_trades(io.BytesIO(trade_csv(GOOD, GOOD)))
    assert len(book) == 2


def test_write_trades_round_trip(tmp_path):
    data = trade_csv(
        GOOD,
        "1609459260000,BTC-29JAN21-31000-P,sell,0.3,0.1234567890123,1.2345678901234,29123.45",
    )
    book, _ = ingest.parse_trades(io.BytesIO(data))
    for format in ("csv", "jsonl"):
        path = tmp_path / f"trades.{format}"
        with path.open("w", newline="") as fp:
            ingest.write_trades(book, fp, format=format)
        again, report = ingest.parse_trades(path, format=format)
        assert again == book
        assert report.dropped == 0


timestamps = st.integers(min_value=1609459200000, max_value=1609459200000 + 10 ** 9)


@hsettings(max_examples=25, deadline=None)
@given(st.lists(timestamps, min_size=1, max_size=30))
def test_parse_trades_monotone_for_any_order(stamps):
    rows = [f"{ts},BTC-29JAN22-30000-C,buy,1.0,0.05,0.8,29000.0" for ts in stamps]
    book, _ = ingest.parse_trades(io.BytesIO(trade_csv(*rows)))
    out = [t.timestamp_ms for t in book]
    assert out == sorted(stamps)


SPOT_HEADER = "interval_end_ms,close,volume_usd\n"


def test_parse_spot():
    data = (
        SPOT_HEADER
        + "1609466400000,29100,0\n"
        + "1609462800000,29000,1000\n"
        + "1609470000000,-1,10\n"
        + "1609462800000,29050,10\n"
        + "bad,1,1\n"
    ).encode()
    bars, report = ingest.parse_spot(io.BytesIO(data))
    assert bars == [SpotBar(1609462800000, 29000.0, 1000.0), SpotBar(1609466400000, 29100.0, 0.0)]
    assert report.dropped_close == 1
    assert report.duplicates == 1
    assert report.malformed == 1
    assert report.reconciles()


def test_parse_spot_empty():
    with pytest.raises(ingest.IngestError, match="no spot bars"):
        ingest.parse_spot(io.BytesIO(SPOT_HEADER.encode()))


def test_spot_round_trip():
    bars = [SpotBar(1609462800000, 29000.123456789, 1.5e7), SpotBar(1609466400000, 1.0, 0.0)]
    handle = io.StringIO()
    ingest.write_spot(bars, handle)
    again, _ = ingest.parse_spot(io.StringIO(handle.getvalue()))
    assert again == bars


def test_parse_trades_blank_lines_keep_row_numbers():
    data = trade_csv(GOOD, "", "1609459200000,XYZ,buy,1.0,0.05,0.8,29000.0", GOOD)
    book, report = ingest.parse_trades(io.BytesIO(data))
    assert len(book) == 2
    assert report.total_in == 3
    assert report.errors == [(4, "Malformed instrument name: 'XYZ'")]


def test_parse_trades_rows_with_extra_fields():
    data = trade_csv(
        GOOD,
        "1609459200000,BTC-29JAN21-30000-C,buy,1.0,0.05,0.8,29000.0,1,2",
        "1609459200000,BTC-29JAN21-30000-C,buy,1.0,0.05,0.8,29000.0,",
        GOOD,
    )
    book, report = ingest.parse_trades(io.BytesIO(data))
    assert len(book) == 2
    assert [row for row, _ in report.errors] == [3, 4]
    assert report.errors[0][1] == "expected 7 fields, got 9"
    assert report.reconciles()


def test_parse_trades_empty_field():
    data = trade_csv("1609459200000,BTC-29JAN21-30000-C,buy,,0.05,0.8,29000.0", GOOD)
    book, report = ingest.parse_trades(io.BytesIO(data))
    assert len(book) == 1
    assert report.malformed == 1


def write_tick_file(path, n, seed=0):
    """n exchange-format trades over 60 days, 40 instruments expiring 25 Jun 2021."""
    rng = np.random.default_rng(seed)
    names = np.array(
        [f"BTC-25JUN21-{strike}-{kind}" for strike in range(20000, 60000, 2000) for kind in "CP"]
    )
    start = T0 + 31 * DAY
    frame = pd.DataFrame(
        {
            "timestamp_ms": np.sort(start + rng.integers(0, 60 * DAY, size=n)),
            "instrument": names[rng.integers(0, len(names), size=n)],
            "direction": np.where(rng.random(n) < 0.5, "buy", "sell"),
            "amount": np.round(rng.uniform(0.1, 25, size=n), 1),
            "option_price_btc": np.round(rng.uniform(0.0005, 0.5, size=n), 4),
            "implied_vol": np.round(rng.uniform(0.4, 1.6, size=n), 4),
            "index_price": np.round(rng.uniform(30000, 50000, size=n), 2),
        }
    )
    frame.to_csv(path, index=False)


def spot_bars(days=100, seed=0):
    rng = np.random.default_rng(seed)
    closes = 40000 * np.exp(np.cumsum(rng.normal(0, 0.01, size=days * 24)))
    return hourly_bars(closes)


def timed_pipeline(path, bars):
    started = time.perf_counter()
    book, report = ingest.parse_trades(path)
    classified = option_math.classify_trades(book, bars, report=report)
    table = pressure.bucket_trades(classified, "1h")
    elapsed = time.perf_counter() - started
    return elapsed, report, table


# Full-size tick count and budget; the default run uses 1/20 of both
FULL_TICKS = 3_400_000
FULL_BUDGET = 30.0


def test_pipeline_throughput_small(tmp_path):
    path = tmp_path / "trades.csv"
    write_tick_file(path, FULL_TICKS // 20)
    elapsed, report, table = timed_pipeline(path, spot_bars())
    assert report.total_in == FULL_TICKS // 20
    assert report.reconciles()
    assert not table.empty
    assert elapsed < FULL_BUDGET / 20


@pytest.mark.slow
def test_pipeline_throughput_full(tmp_path):
    path = tmp_path / "trades.csv"
    write_tick_file(path, FULL_TICKS)
    elapsed, report, _ = timed_pipeline(path, spot_bars())
    assert report.total_in == FULL_TICKS
    assert report.reconciles()
    assert elapsed < FULL_BUDGET
