"""
Shared fixtures and the --runslow option
"""

import numpy as np
import pandas as pd
import pytest

from nbpress import settings
from nbpress.models import SpotBar, TradeBook


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# 2021-01-01 00:00 UTC
T0 = 1609459200000
HOUR = settings.MS_PER_HOUR
DAY = settings.MS_PER_DAY


def classified_book(rows):
    """TradeBook of already-classified trades.

    Each row is a dict with at least timestamp_ms, option_type, direction,
    amount, index_price, delta and moneyness; other columns get defaults.
    """
    defaults = {
        "instrument": "BTC-1FEB21-40000-C",
        "expiry_ms": T0 + 31 * DAY + 8 * HOUR,
        "strike": 40000.0,
        "option_price": 0.05,
        "implied_vol": 0.8,
        "tau": 31 / 365,
        "sigma": 0.8,
    }
    records = [{**defaults, **row} for row in rows]
    frame = pd.DataFrame.from_records(records)
    frame["timestamp_ms"] = frame["timestamp_ms"].astype(np.int64)
    frame["expiry_ms"] = frame["expiry_ms"].astype(np.int64)
    return TradeBook(frame.sort_values("timestamp_ms", kind="stable"))


def hourly_bars(closes, start=T0, volume=1e6):
    """Spot bars ending on consecutive hours after start."""
    return [
        SpotBar(start + (i + 1) * HOUR, float(close), float(volume))
        for i, close in enumerate(closes)
    ]


@pytest.fixture
def three_trades():
    """Two buys (delta-weighted 1.0 and 0.3 USD) and one sell (0.4 USD) in one hour."""
    return classified_book(
        [
            dict(timestamp_ms=T0 + 10, option_type="C", direction="buy", amount=2.0,
                 index_price=1.0, delta=0.5, moneyness="ATM"),
            dict(timestamp_ms=T0 + 20, option_type="C", direction="buy", amount=1.0,
                 index_price=1.0, delta=0.3, moneyness="OTM"),
            dict(timestamp_ms=T0 + 30, option_type="P", direction="sell", amount=4.0,
                 index_price=1.0, delta=-0.1, moneyness="DOTM"),
        ]
    )


@pytest.fixture
def random_book():
    """Many random classified trades over 48 hours."""
    rng = np.random.default_rng(42)
    n = 10_000
    moneyness = np.array(["DOTM", "OTM", "ATM", "ITM", "DITM"])
    bands = {"DOTM": (0.021, 0.125), "OTM": (0.126, 0.375), "ATM": (0.376, 0.625),
             "ITM": (0.626, 0.875), "DITM": (0.876, 0.98)}
    categories = moneyness[rng.integers(0, 5, size=n)]
    low = np.array([bands[c][0] for c in categories])
    high = np.array([bands[c][1] for c in categories])
    types = np.where(rng.random(n) < 0.5, "C", "P")
    delta = rng.uniform(low, high) * np.where(types == "C", 1.0, -1.0)
    rows = pd.DataFrame(
        {
            "timestamp_ms": T0 + rng.integers(0, 48 * HOUR, size=n),
            "option_type": types,
            "direction": np.where(rng.random(n) < 0.5, "buy", "sell"),
            "amount": np.round(rng.uniform(0.1, 10, size=n), 1),
            "index_price": np.round(rng.uniform(30000, 50000, size=n), 2),
            "delta": delta,
            "moneyness": categories,
            "implied_vol": rng.uniform(0.4, 1.5, size=n),
        }
    )
    return classified_book(rows.to_dict(orient="records"))


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    """A small LimitsToArbitrage market written as trades.csv, spot.csv, truth.json."""
    from nbpress.synth import RegimeConfig, gen_dataset

    out = tmp_path_factory.mktemp("synthetic")
    gen_dataset(RegimeConfig(regime="LimitsToArbitrage", horizon_hours=300, seed=3), out)
    return out
