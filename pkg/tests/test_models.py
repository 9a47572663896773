"""
Test suite for models.py
"""

import datetime

import pytest

from nbpress import models
from nbpress.models import (
    CleaningReport,
    Direction,
    OptionType,
    SpotBar,
    TradeBook,
    TradeTick,
)


@pytest.fixture
def tick():
    return TradeTick(
        timestamp_ms=1627430400000,
        instrument="BTC-28JUL21-35000-C",
        expiry=datetime.date(2021, 7, 28),
        strike=35000.0,
        option_type=OptionType.Call,
        direction=Direction.BuyerInitiated,
        amount=1.5,
        option_price=0.0125,
        implied_vol=0.8,
        index_price=39000.0,
    )


def test_TradeTick_serialisation(tick, tmp_path):
    d = tick.to_dict()
    assert d == {
        "timestamp_ms": 1627430400000,
        "instrument": "BTC-28JUL21-35000-C",
        "expiry": "2021-07-28",
        "strike": 35000.0,
        "option_type": "C",
        "direction": "buy",
        "amount": 1.5,
        "option_price": 0.0125,
        "implied_vol": 0.8,
        "index_price": 39000.0,
    }
    assert TradeTick.from_dict(d) == tick

    json_file = tmp_path / "json"
    with json_file.open("w") as fp:
        tick.to_json(fp)
    with json_file.open() as fp:
        assert TradeTick.from_json(fp) == tick


def test_TradeTick_expiry_ms(tick):
    # 2021-07-28 08:00 UTC
    assert tick.expiry_ms == 1627459200000


def test_TradeTick_to_record(tick):
    assert tick.to_record() == {
        "timestamp_ms": 1627430400000,
        "instrument": "BTC-28JUL21-35000-C",
        "direction": "buy",
        "amount": 1.5,
        "option_price_btc": 0.0125,
        "implied_vol": 0.8,
        "index_price": 39000.0,
    }


def test_Direction_sign():
    assert Direction.BuyerInitiated.sign == 1
    assert Direction.SellerInitiated.sign == -1


@pytest.mark.parametrize(
    "expiry,strike,option_type,expected",
    [
        (datetime.date(2021, 7, 28), 35000, OptionType.Call, "BTC-28JUL21-35000-C"),
        (datetime.date(2021, 1, 1), 29500.0, OptionType.Put, "BTC-1JAN21-29500-P"),
        (datetime.date(2022, 3, 25), 1250.5, OptionType.Call, "BTC-25MAR22-1250.5-C"),
    ],
)
def test_instrument_name(expiry, strike, option_type, expected):
    assert models.instrument_name(expiry, strike, option_type) == expected


def test_SpotBar_serialisation():
    bar = SpotBar(1609462800000, 29000.5, 1.5e7)
    assert SpotBar.from_json(bar.to_json()) == bar


def test_CleaningReport_reconciles():
    report = CleaningReport(total_in=10, dropped_missing_type=1, dropped_iv_bounds=2)
    report.record_error(3, "bad row")
    report.total_out = 6
    assert report.malformed == 1
    assert report.dropped == 4
    assert report.reconciles()
    assert CleaningReport.from_dict(report.to_dict()).errors == [(3, "bad row")]


def test_CleaningReport_caps_stored_errors(monkeypatch):
    monkeypatch.setattr(models.settings, "MAX_STORED_ERRORS", 2)
    report = CleaningReport()
    for row in range(5):
        report.record_error(row, "bad")
    assert report.malformed == 5
    assert len(report.errors) == 2


def test_TradeBook_from_ticks_sorts(tick):
    later = TradeTick.from_dict({**tick.to_dict(), "timestamp_ms": tick.timestamp_ms + 1})
    book = TradeBook.from_ticks([later, tick])
    assert [t.timestamp_ms for t in book] == [tick.timestamp_ms, later.timestamp_ms]
    assert book[0] == tick
    assert not book.classified


def test_TradeBook_mirrored_and_scaled(tick):
    book = TradeBook.from_ticks([tick])
    assert book.mirrored()[0].direction is Direction.SellerInitiated
    assert book.scaled(3)[0].amount == pytest.approx(4.5)
    assert book[0].amount == 1.5


def test_TradeBook_filter_years(tick):
    book = TradeBook.from_ticks([tick])
    assert len(book.filter_years([2021])) == 1
    assert len(book.filter_years([2019])) == 0
