import datetime
import json
import logging

from enum import Enum

import numpy as np
import pandas as pd

from nbpress import settings


LOG = logging.getLogger(__name__)


class Serialiser:
    def to_dict(self):
        raise NotImplementedError

    @classmethod
    def from_dict(cls, d):
        raise NotImplementedError

    def to_json(self, fp=None, **kwargs):
        if fp:
            json.dump(self.to_dict(), fp, indent=2, **kwargs)
        else:
            return json.dumps(self.to_dict(), indent=2, **kwargs)

    @classmethod
    def from_json(cls, js, **kwargs):
        if isinstance(js, str):
            d = json.loads(js, **kwargs)
        else:
            d = json.load(js, **kwargs)
        return cls.from_dict(d)


class OptionType(Enum):
    Call = "C"
    Put = "P"
    Unknown = ""


class Direction(Enum):
    BuyerInitiated = "buy"
    SellerInitiated = "sell"

    @property
    def sign(self):
        return 1 if self is Direction.BuyerInitiated else -1


class Moneyness(Enum):
    DOTM = "DOTM"
    OTM = "OTM"
    ATM = "ATM"
    ITM = "ITM"
    DITM = "DITM"
    Excluded = "Excluded"


# Category order used for rows, columns and delta bands
MONEYNESS_ORDER = [
    Moneyness.DOTM,
    Moneyness.OTM,
    Moneyness.ATM,
    Moneyness.ITM,
    Moneyness.DITM,
]


class MaturityBucket(Enum):
    Short = "short"
    Medium = "medium"
    Long = "long"
    All = "all"


class TodSlot(Enum):
    Asia = "asia"
    Europe = "europe"
    US = "us"
    All = "all"


def expiry_ms(expiry):
    """Settlement time (ms UTC) of an expiry date."""
    moment = datetime.datetime(
        expiry.year,
        expiry.month,
        expiry.day,
        settings.SETTLEMENT_HOUR,
        tzinfo=datetime.timezone.utc,
    )
    return int(moment.timestamp()) * 1000


def instrument_name(expiry, strike, option_type, asset="BTC"):
    """Builds an exchange-style instrument name, e.g. BTC-28JUL21-35000-C."""
    if float(strike).is_integer():
        strike = int(strike)
    month = expiry.strftime("%b").upper()
    return f"{asset}-{expiry.day}{month}{expiry.strftime('%y')}-{strike}-{option_type.value}"


class TradeTick(Serialiser):
    """A single option trade.

    Attributes:
        timestamp_ms (int): Trade time, milliseconds since epoch (UTC).
        instrument (str): Exchange instrument name.
        expiry (datetime.date): Expiry date; settlement at 08:00 UTC.
        strike (float): Strike price in USD.
        option_type (OptionType): Call, Put or Unknown.
        direction (Direction): Buyer- or seller-initiated.
        amount (float): Contract size in BTC.
        option_price (float): Option price in BTC.
        implied_vol (float): Annualised implied volatility (decimal).
        index_price (float): Underlying index price in USD.
    """

    def __init__(
        self,
        timestamp_ms=None,
        instrument=None,
        expiry=None,
        strike=None,
        option_type=OptionType.Unknown,
        direction=None,
        amount=None,
        option_price=None,
        implied_vol=None,
        index_price=None,
    ):
        self.timestamp_ms = timestamp_ms
        self.instrument = instrument
        self.expiry = expiry
        self.strike = strike
        self.option_type = option_type
        self.direction = direction
        self.amount = amount
        self.option_price = option_price
        self.implied_vol = implied_vol
        self.index_price = index_price

    def __repr__(self):
        return (
            f"TradeTick({self.timestamp_ms}, {self.instrument}, "
            f"{self.direction.value if self.direction else None}, {self.amount})"
        )

    def __eq__(self, other):
        if not isinstance(other, type(self)):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    @property
    def expiry_ms(self):
        return expiry_ms(self.expiry)

    def to_row(self):
        """Row in the exchange trade CSV column order."""
        return [
            self.timestamp_ms,
            self.instrument,
            self.direction.value,
            self.amount,
            self.option_price,
            self.implied_vol,
            self.index_price,
        ]

    def to_record(self):
        """Record in the exchange JSONL field naming."""
        return dict(zip(settings.TRADE_COLUMNS, self.to_row()))

    def to_dict(self):
        return {
            "timestamp_ms": self.timestamp_ms,
            "instrument": self.instrument,
            "expiry": self.expiry.isoformat() if self.expiry else None,
            "strike": self.strike,
            "option_type": self.option_type.value,
            "direction": self.direction.value if self.direction else None,
            "amount": self.amount,
            "option_price": self.option_price,
            "implied_vol": self.implied_vol,
            "index_price": self.index_price,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            timestamp_ms=d["timestamp_ms"],
            instrument=d["instrument"],
            expiry=datetime.date.fromisoformat(d["expiry"]) if d["expiry"] else None,
            strike=d["strike"],
            option_type=OptionType(d["option_type"]),
            direction=Direction(d["direction"]) if d["direction"] else None,
            amount=d["amount"],
            option_price=d["option_price"],
            implied_vol=d["implied_vol"],
            index_price=d["index_price"],
        )


class SpotBar(Serialiser):
    """Aggregated spot market bar ending at interval_end_ms."""

    def __init__(self, interval_end_ms=None, close=None, volume=None):
        self.interval_end_ms = interval_end_ms
        self.close = close
        self.volume = volume

    def __repr__(self):
        return f"SpotBar({self.interval_end_ms}, {self.close}, {self.volume})"

    def __eq__(self, other):
        if not isinstance(other, type(self)):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_row(self):
        return [self.interval_end_ms, self.close, self.volume]

    def to_dict(self):
        return {
            "interval_end_ms": self.interval_end_ms,
            "close": self.close,
            "volume": self.volume,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class CleaningReport(Serialiser):
    """Reconciliation of trade rows read against rows kept.

    total_in = total_out + malformed + all dropped_* counts.
    """

    COUNTS = (
        "malformed",
        "dropped_missing_type",
        "dropped_iv_bounds",
        "dropped_delta_bounds",
        "dropped_no_sigma",
    )

    def __init__(
        self,
        total_in=0,
        malformed=0,
        dropped_missing_type=0,
        dropped_iv_bounds=0,
        dropped_delta_bounds=0,
        dropped_no_sigma=0,
        total_out=0,
        errors=None,
    ):
        self.total_in = total_in
        self.malformed = malformed
        self.dropped_missing_type = dropped_missing_type
        self.dropped_iv_bounds = dropped_iv_bounds
        self.dropped_delta_bounds = dropped_delta_bounds
        self.dropped_no_sigma = dropped_no_sigma
        self.total_out = total_out
        self.errors = errors if errors else []

    def __str__(self):
        dropped = ", ".join(f"{key}={getattr(self, key)}" for key in self.COUNTS)
        return f"{self.total_in} in, {self.total_out} out ({dropped})"

    def record_error(self, row, message):
        self.malformed += 1
        if len(self.errors) < settings.MAX_STORED_ERRORS:
            self.errors.append((row, message))

    @property
    def dropped(self):
        return sum(getattr(self, key) for key in self.COUNTS)

    def reconciles(self):
        return self.total_in == self.total_out + self.dropped

    def to_dict(self):
        return {
            "total_in": self.total_in,
            **{key: getattr(self, key) for key in self.COUNTS},
            "total_out": self.total_out,
            "errors": [list(error) for error in self.errors],
        }

    @classmethod
    def from_dict(cls, d):
        report = cls(**{k: v for k, v in d.items() if k != "errors"})
        report.errors = [tuple(error) for error in d.get("errors", [])]
        return report


class SpotReport(Serialiser):
    """Reconciliation of spot bars read against bars kept."""

    def __init__(
        self,
        total_in=0,
        malformed=0,
        dropped_close=0,
        duplicates=0,
        total_out=0,
        errors=None,
    ):
        self.total_in = total_in
        self.malformed = malformed
        self.dropped_close = dropped_close
        self.duplicates = duplicates
        self.total_out = total_out
        self.errors = errors if errors else []

    def record_error(self, row, message):
        if len(self.errors) < settings.MAX_STORED_ERRORS:
            self.errors.append((row, message))

    def reconciles(self):
        return self.total_in == (
            self.total_out + self.malformed + self.dropped_close + self.duplicates
        )

    def to_dict(self):
        return {
            "total_in": self.total_in,
            "malformed": self.malformed,
            "dropped_close": self.dropped_close,
            "duplicates": self.duplicates,
            "total_out": self.total_out,
            "errors": [list(error) for error in self.errors],
        }

    @classmethod
    def from_dict(cls, d):
        report = cls(**{k: v for k, v in d.items() if k != "errors"})
        report.errors = [tuple(error) for error in d.get("errors", [])]
        return report


class TradeBook:
    """Column-backed container of TradeTick records.

    Large tick files are held as a pandas DataFrame (one row per trade, sorted
    by timestamp); iterating yields TradeTick objects. Columns:

    ::

        timestamp_ms  instrument  expiry_ms  strike  option_type  direction
        amount  option_price  implied_vol  index_price

    Classification adds tau, sigma, delta and moneyness.
    """

    COLUMNS = (
        "timestamp_ms",
        "instrument",
        "expiry_ms",
        "strike",
        "option_type",
        "direction",
        "amount",
        "option_price",
        "implied_vol",
        "index_price",
    )

    def __init__(self, frame=None):
        if frame is None:
            frame = pd.DataFrame({column: [] for column in self.COLUMNS})
        self.frame = frame.reset_index(drop=True)

    def __len__(self):
        return len(self.frame)

    def __iter__(self):
        columns = list(self.COLUMNS)
        for row in self.frame[columns].itertuples(index=False, name=None):
            yield self._tick(*row)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return type(self)(self.frame.iloc[index])
        row = self.frame.iloc[index]
        return self._tick(*(row[column] for column in self.COLUMNS))

    def __eq__(self, other):
        if not isinstance(other, TradeBook):
            return NotImplemented
        return list(self) == list(other)

    @staticmethod
    def _tick(
        timestamp_ms,
        instrument,
        expiry_ms_,
        strike,
        option_type,
        direction,
        amount,
        option_price,
        implied_vol,
        index_price,
    ):
        expiry = datetime.datetime.fromtimestamp(
            expiry_ms_ / 1000, tz=datetime.timezone.utc
        ).date()
        return TradeTick(
            timestamp_ms=int(timestamp_ms),
            instrument=instrument,
            expiry=expiry,
            strike=float(strike),
            option_type=OptionType(option_type),
            direction=Direction(direction),
            amount=float(amount),
            option_price=float(option_price),
            implied_vol=float(implied_vol),
            index_price=float(index_price),
        )

    @classmethod
    def from_ticks(cls, ticks):
        ticks = list(ticks)
        frame = pd.DataFrame(
            {
                "timestamp_ms": np.array([t.timestamp_ms for t in ticks], dtype=np.int64),
                "instrument": [t.instrument for t in ticks],
                "expiry_ms": np.array([t.expiry_ms for t in ticks], dtype=np.int64),
                "strike": np.array([t.strike for t in ticks], dtype=float),
                "option_type": [t.option_type.value for t in ticks],
                "direction": [t.direction.value for t in ticks],
                "amount": np.array([t.amount for t in ticks], dtype=float),
                "option_price": np.array([t.option_price for t in ticks], dtype=float),
                "implied_vol": np.array([t.implied_vol for t in ticks], dtype=float),
                "index_price": np.array([t.index_price for t in ticks], dtype=float),
            }
        )
        return cls(frame.sort_values("timestamp_ms", kind="stable"))

    def to_frame(self):
        return self.frame

    def copy(self):
        return type(self)(self.frame.copy())

    @property
    def classified(self):
        return "moneyness" in self.frame.columns

    def mirrored(self):
        """Copy with every buy relabelled sell and vice versa."""
        frame = self.frame.copy()
        frame["direction"] = np.where(frame["direction"] == "buy", "sell", "buy")
        return type(self)(frame)

    def scaled(self, factor):
        """Copy with every traded amount multiplied by factor."""
        frame = self.frame.copy()
        frame["amount"] = frame["amount"] * factor
        return type(self)(frame)

    def filter_years(self, years):
        """Trades whose timestamp falls in one of the given UTC years."""
        stamps = pd.to_datetime(self.frame["timestamp_ms"], unit="ms", utc=True)
        return type(self)(self.frame[stamps.dt.year.isin(list(years))])
