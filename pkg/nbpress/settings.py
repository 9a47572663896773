from pathlib import Path

ROOT_DIR = Path(__file__).parent.resolve()

SCHEMA_VERSION = 1

MS_PER_HOUR = 3_600_000
MS_PER_DAY = 24 * MS_PER_HOUR
DAYS_PER_YEAR = 365
MS_PER_YEAR = DAYS_PER_YEAR * MS_PER_DAY

# Upper bound on exchange-reported implied volatility (500%)
IV_UPPER = 5.0

# |delta| breakpoints: Excluded | DOTM | OTM | ATM | ITM | DITM | Excluded
DELTA_BREAKS = (0.02, 0.125, 0.375, 0.625, 0.875, 0.98)

# Expiries settle at 08:00 UTC on the named date
SETTLEMENT_HOUR = 8

INTERVAL_WIDTHS = {
    "1h": 1,
    "4h": 4,
    "8h": 8,
    "24h": 24,
    "5d": 120,
}

TRADE_COLUMNS = (
    "timestamp_ms",
    "instrument",
    "direction",
    "amount",
    "option_price_btc",
    "implied_vol",
    "index_price",
)
SPOT_COLUMNS = ("interval_end_ms", "close", "volume_usd")

SERIES_COLUMNS = (
    "t",
    "moneyness",
    "type",
    "maturity_bucket",
    "tod_slot",
    "N",
    "A",
    "D_call",
    "V",
    "TV",
    "rel_D",
    "rel_V",
    "mean_iv",
    "delta_iv",
    "r",
    "v",
    "delta_v",
)
CURVE_COLUMNS = (
    "window_end",
    "level",
    "left_slope",
    "right_slope",
    "vol_spread",
    "relative_iv_1",
    "relative_iv_2",
    "relative_iv_3",
    "relative_iv_4",
    "relative_iv_5",
)

# Maximum number of row-level errors kept in a cleaning report
MAX_STORED_ERRORS = 1000

# Delta-weighted flow is accumulated on a grid of 2**-20 USD. Sums, differences
# and halves of grid values below 2**33 USD are exact in float64.
FLOW_UNITS_PER_USD = 2 ** 20

# Maturity buckets in whole days remaining: [1, 7], [8, 21], >= 22
SHORT_MAX_DAYS = 7
MEDIUM_MAX_DAYS = 21

# Time-of-day slots (UTC hour starts): Asia 00-08, Europe 08-16, US 16-24
TOD_BREAKS = (8, 16)
