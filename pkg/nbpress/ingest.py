"""Parse, validate and clean exchange trade and spot files."""

import csv
import datetime
import io
import json
import logging
import math
import re

from pathlib import Path

import numpy as np
import pandas as pd

from nbpress import settings
from nbpress.models import (
    CleaningReport,
    Direction,
    OptionType,
    SpotBar,
    SpotReport,
    TradeBook,
    expiry_ms,
)


LOG = logging.getLogger(__name__)


class IngestError(ValueError):
    """Fatal problem with an input stream (unreadable, empty, no usable rows)."""


INSTRUMENT_PATTERN = re.compile(
    r"^(?P<asset>[A-Z]+)-(?P<day>\d{1,2})(?P<month>[A-Z]{3})(?P<year>\d{2})"
    r"-(?P<strike>\d+(?:\.\d+)?)-(?P<type>[A-Z]?)$"
)

MONTHS = {
    "JAN": 1,
    "FEB": 2,
    "MAR": 3,
    "APR": 4,
    "MAY": 5,
    "JUN": 6,
    "JUL": 7,
    "AUG": 8,
    "SEP": 9,
    "OCT": 10,
    "NOV": 11,
    "DEC": 12,
}


def parse_instrument(name):
    """Parse an exchange instrument name into its contract terms.

    For example:

    >>> parse_instrument("BTC-28JUL21-35000-C")
    (datetime.datetime(2021, 7, 28, 8, 0, tzinfo=datetime.timezone.utc), 35000.0, <OptionType.Call: 'C'>)

    A blank type suffix (e.g. ``BTC-28JUL21-35000-``) parses with
    OptionType.Unknown so the row can be counted as missing its type.

    Raises:
        IngestError: name does not match ASSET-DDMMMYY-STRIKE-{C|P}, the date is
            invalid or the strike is not positive.
    """
    match = INSTRUMENT_PATTERN.match(name.strip())
    if not match:
        raise IngestError(f"Malformed instrument name: '{name}'")
    month = MONTHS.get(match.group("month"))
    if month is None:
        raise IngestError(f"Unknown month in instrument name: '{name}'")
    try:
        date = datetime.date(2000 + int(match.group("year")), month, int(match.group("day")))
    except ValueError as exc:
        raise IngestError(f"Invalid expiry date in '{name}': {exc}") from None
    strike = float(match.group("strike"))
    if strike <= 0:
        raise IngestError(f"Strike must be positive: '{name}'")
    suffix = match.group("type")
    if suffix not in ("", "C", "P"):
        raise IngestError(f"Option type must be C or P: '{name}'")
    expiry = datetime.datetime(
        date.year, date.month, date.day, settings.SETTLEMENT_HOUR,
        tzinfo=datetime.timezone.utc,
    )
    return expiry, strike, OptionType(suffix)


def _text_handle(source):
    """Wrap a byte stream, text stream or path as a UTF-8 text handle."""
    if isinstance(source, (str, Path)):
        try:
            return open(source, encoding="utf-8", newline="")
        except OSError as exc:
            raise IngestError(f"Cannot open {source}: {exc}") from None
    if isinstance(source, io.TextIOBase):
        return source
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _finite(value, name):
    number = float(value)
    if not math.isfinite(number):
        raise ValueError(f"{name} is not finite")
    return number


RAW_COLUMNS = settings.TRADE_COLUMNS + ("extra",)


def _raw_csv(handle):
    """Raw trade columns of a CSV stream, one row per physical line.

    The fast path is pandas' C reader; a file with rows longer than the
    header is re-read line by line with the csv module. Empty fields count
    as missing.

    Returns:
        (DataFrame, list): Raw columns with 'row' and 'fields', and
            (row, message) pairs for rows that could not be split.
    """
    header = handle.readline()
    if not header:
        return _raw_frame([], []), []
    names = next(csv.reader([header]), [])
    if [h.strip() for h in names] != list(settings.TRADE_COLUMNS):
        raise IngestError(
            f"Expected header {','.join(settings.TRADE_COLUMNS)}, got {','.join(names)}"
        )
    start = handle.tell()
    try:
        frame = pd.read_csv(
            handle,
            header=None,
            names=list(RAW_COLUMNS),
            keep_default_na=False,
            na_values=[""],
            skip_blank_lines=False,
            low_memory=False,
            float_precision="round_trip",
            engine="c",
        )
    except pd.errors.EmptyDataError:
        return _raw_frame([], []), []
    except pd.errors.ParserError as exc:
        LOG.debug("Ragged trade file (%s), reading row by row", exc)
        handle.seek(start)
        rows, numbers = [], []
        for row_number, row in enumerate(csv.reader(handle), 2):
            if row:
                rows.append(row)
                numbers.append(row_number)
        return _raw_frame(rows, numbers), []

    columns = list(settings.TRADE_COLUMNS)
    present = frame[columns].notna()
    blank = ~present.any(axis=1)
    frame["fields"] = present.sum(axis=1) + frame["extra"].notna()
    frame["row"] = np.arange(2, len(frame) + 2)
    return frame.loc[~blank.to_numpy()], []


def _raw_frame(rows, numbers):
    width = len(settings.TRADE_COLUMNS)
    records = [
        list(row[:width]) + [None] * (width - len(row)) + [len(row)] for row in rows
    ]
    frame = pd.DataFrame(
        records, columns=list(settings.TRADE_COLUMNS) + ["fields"], dtype=object
    )
    frame["fields"] = frame["fields"].astype(np.int64)
    frame["extra"] = None
    frame["row"] = np.asarray(numbers, dtype=np.int64)
    return frame


def _raw_jsonl(handle):
    rows, numbers, errors = [], [], []
    for row_number, values in _iter_jsonl(handle, settings.TRADE_COLUMNS):
        if isinstance(values, Exception):
            errors.append((row_number, str(values)))
            continue
        rows.append(values)
        numbers.append(row_number)
    return _raw_frame(rows, numbers), errors


def _numeric(column):
    return pd.to_numeric(column, errors="coerce").to_numpy(dtype=float)


def _instrument_terms(column):
    """Per-row expiry, strike, type and parse error, parsing each distinct name once."""
    codes, uniques = pd.factorize(column.astype(str), sort=False)
    names = np.array([name.strip() for name in uniques], dtype=object)
    expiry = np.zeros(len(uniques), dtype=np.int64)
    strike = np.zeros(len(uniques), dtype=float)
    kind = np.full(len(uniques), OptionType.Unknown.value, dtype=object)
    error = np.full(len(uniques), None, dtype=object)
    for i, name in enumerate(names):
        try:
            date, strike_, option_type = parse_instrument(name)
        except IngestError as exc:
            error[i] = str(exc)
            continue
        expiry[i] = expiry_ms(date.date())
        strike[i] = strike_
        kind[i] = option_type.value
    return names[codes], expiry[codes], strike[codes], kind[codes], error[codes]


def _clean_trades(raw, report, errors):
    """Validate raw trade columns with whole-column checks.

    A row is malformed at its first failing check, in this order: field
    count, timestamp, instrument, direction, finite amount, option price and
    index price, numeric IV, amount > 0, option price >= 0, index price > 0,
    expiry after the trade. Valid rows missing an option type, or with IV
    outside (0, IV_UPPER], are counted and dropped.
    """
    n = len(raw)
    width = len(settings.TRADE_COLUMNS)
    report.total_in += n + len(errors)
    bad = np.zeros(n, dtype=bool)
    message = np.full(n, None, dtype=object)

    def fail(mask, text):
        mask = np.asarray(mask, dtype=bool) & ~bad
        message[mask] = text[mask] if isinstance(text, np.ndarray) else text
        bad[mask] = True

    fields = raw["fields"].to_numpy()
    short = fields != width
    counts = np.full(n, None, dtype=object)
    counts[short] = [f"expected {width} fields, got {k}" for k in fields[short]]
    fail(short, counts)

    timestamp = _numeric(raw["timestamp_ms"])
    with np.errstate(invalid="ignore"):
        fail(~(np.isfinite(timestamp) & (timestamp == np.floor(timestamp))),
             "invalid timestamp_ms")

    names, expiry, strike, kind, error = _instrument_terms(raw["instrument"])
    fail(pd.notna(error), error)

    codes, uniques = pd.factorize(raw["direction"].astype(str), sort=False)
    sides = np.array([side.strip().lower() for side in uniques], dtype=object)[codes]
    valid_sides = [direction.value for direction in Direction]
    fail(~np.isin(sides, valid_sides), "direction must be buy or sell")

    amount = _numeric(raw["amount"])
    price = _numeric(raw["option_price_btc"])
    index = _numeric(raw["index_price"])
    iv = _numeric(raw["implied_vol"])
    fail(~np.isfinite(amount), "amount is not finite")
    fail(~np.isfinite(price), "option_price_btc is not finite")
    fail(~np.isfinite(index), "index_price is not finite")
    fail(np.isnan(iv), "implied_vol is not a number")
    with np.errstate(invalid="ignore"):
        fail(amount <= 0, "amount must be positive")
        fail(price < 0, "option price must be non-negative")
        fail(index <= 0, "index price must be positive")
        safe_timestamp = np.where(bad, 0, timestamp).astype(np.int64)
        fail(expiry <= safe_timestamp, "expiry is not after the trade timestamp")

    rows = raw["row"].to_numpy()
    report.malformed += len(errors) + int(bad.sum())
    found = sorted(errors + list(zip(rows[bad][: settings.MAX_STORED_ERRORS].tolist(),
                                     message[bad][: settings.MAX_STORED_ERRORS])))
    room = settings.MAX_STORED_ERRORS - len(report.errors)
    report.errors.extend(found[: max(room, 0)])
    if bad.any():
        LOG.debug("%i malformed trade rows, first at row %i", bad.sum(), rows[bad][0])

    good = ~bad
    missing_type = good & (kind == OptionType.Unknown.value)
    report.dropped_missing_type += int(missing_type.sum())
    good &= ~missing_type
    with np.errstate(invalid="ignore"):
        out_of_bounds = good & ~((iv > 0) & (iv <= settings.IV_UPPER))
    report.dropped_iv_bounds += int(out_of_bounds.sum())
    good &= ~out_of_bounds

    frame = pd.DataFrame(
        {
            "timestamp_ms": safe_timestamp[good],
            "instrument": names[good],
            "expiry_ms": expiry[good],
            "strike": strike[good],
            "option_type": kind[good],
            "direction": sides[good],
            "amount": amount[good],
            "option_price": price[good],
            "implied_vol": iv[good],
            "index_price": index[good],
        }
    )
    return TradeBook(frame.sort_values("timestamp_ms", kind="stable"))


def _iter_csv(handle, columns):
    reader = csv.reader(handle)
    header = next(reader, None)
    if header is None:
        return
    if [h.strip() for h in header] != list(columns):
        raise IngestError(f"Expected header {','.join(columns)}, got {','.join(header)}")
    for row_number, row in enumerate(reader, 2):
        if not row:
            continue
        yield row_number, row


def _iter_jsonl(handle, columns):
    for row_number, line in enumerate(handle, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            values = [record[column] for column in columns]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            yield row_number, exc
            continue
        yield row_number, values


def parse_trades(source, format="csv"):
    """Parse an exchange trade file into a cleaned TradeBook.

    Rows are validated column-wise; malformed rows are recorded in the report
    (with row numbers, the header being row 1) and skipped. Rows missing an
    option type, or with implied volatility outside (0, 5.0], are counted and
    dropped.

    Parameters:
        source: Byte stream, text stream or path.
        format (str): 'csv' or 'jsonl'.
    Returns:
        (TradeBook, CleaningReport): Trades sorted by timestamp (stable).
    Raises:
        IngestError: Unreadable stream, or no trades survive cleaning.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError("Expected 'csv' or 'jsonl'")

    report = CleaningReport()
    handle = _text_handle(source)
    try:
        if format == "csv":
            raw, errors = _raw_csv(handle)
        else:
            raw, errors = _raw_jsonl(handle)
    except (UnicodeDecodeError, OSError, csv.Error) as exc:
        raise IngestError(f"Unreadable trade stream: {exc}") from None
    finally:
        if isinstance(source, (str, Path)):
            handle.close()

    book = _clean_trades(raw, report, errors)
    report.total_out = len(book)
    if not len(book):
        raise IngestError("no trades")
    LOG.info("Parsed trades: %s", report)
    return book, report


def write_trades(book, handle, format="csv"):
    """Write trades in the exchange CSV or JSONL format.

    Floats are written with their shortest round-trip representation, so
    parsing the output reproduces the same TradeBook.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError("Expected 'csv' or 'jsonl'")
    frame = book.to_frame()
    columns = ["timestamp_ms", "instrument", "direction", "amount", "option_price",
               "implied_vol", "index_price"]
    rows = (
        (int(ts), name, side, float(amount), float(price), float(iv), float(index))
        for ts, name, side, amount, price, iv, index in frame[columns].itertuples(
            index=False, name=None
        )
    )
    if format == "csv":
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(settings.TRADE_COLUMNS)
        writer.writerows(rows)
    else:
        for row in rows:
            handle.write(json.dumps(dict(zip(settings.TRADE_COLUMNS, row))))
            handle.write("\n")


def parse_spot(source):
    """Parse a spot bar CSV (interval_end_ms,close,volume_usd).

    Bars are sorted by interval end; bars with close <= 0 are dropped and
    reported, zero-volume bars are kept, and repeated interval ends keep only
    the first bar so the series is strictly increasing.

    Returns:
        (list, SpotReport): SpotBar objects and the reconciliation report.
    Raises:
        IngestError: Unreadable stream or no usable bars.
    """
    report = SpotReport()
    bars = []
    handle = _text_handle(source)
    try:
        for row_number, row in _iter_csv(handle, settings.SPOT_COLUMNS):
            report.total_in += 1
            try:
                if len(row) != len(settings.SPOT_COLUMNS):
                    raise ValueError(f"expected 3 fields, got {len(row)}")
                end, close, volume = row
                end = int(end)
                close = _finite(close, "close")
                volume = _finite(volume, "volume_usd")
                if volume < 0:
                    raise ValueError("volume must be non-negative")
            except ValueError as exc:
                LOG.debug("Spot row %i malformed: %s", row_number, exc)
                report.malformed += 1
                report.record_error(row_number, str(exc))
                continue
            if close <= 0:
                report.dropped_close += 1
                report.record_error(row_number, "close must be positive")
                continue
            bars.append(SpotBar(end, close, volume))
    except (UnicodeDecodeError, OSError, csv.Error) as exc:
        raise IngestError(f"Unreadable spot stream: {exc}") from None
    finally:
        if isinstance(source, (str, Path)):
            handle.close()

    bars.sort(key=lambda bar: bar.interval_end_ms)
    unique = []
    for bar in bars:
        if unique and unique[-1].interval_end_ms == bar.interval_end_ms:
            report.duplicates += 1
            continue
        unique.append(bar)
    report.total_out = len(unique)
    if not unique:
        raise IngestError("no spot bars")
    LOG.info("Parsed %i spot bars (%i dropped)", len(unique), report.total_in - len(unique))
    return unique, report


def write_spot(bars, handle):
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow(settings.SPOT_COLUMNS)
    writer.writerows(
        (int(bar.interval_end_ms), float(bar.close), float(bar.volume)) for bar in bars
    )


def spot_frame(bars):
    """Spot bars as a DataFrame with interval_end_ms, close and volume columns."""
    return pd.DataFrame(
        {
            "interval_end_ms": np.array([b.interval_end_ms for b in bars], dtype=np.int64),
            "close": np.array([b.close for b in bars], dtype=float),
            "volume": np.array([b.volume for b in bars], dtype=float),
        }
    )
