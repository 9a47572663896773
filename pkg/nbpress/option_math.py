"""Black-Scholes analytics, realised volatility and moneyness classification.

Black-Scholes is used only to classify trades by delta and to keep synthetic
prices and implied volatilities consistent; it is not a pricing model for the
underlying.
"""

import bisect
import logging
import math

import numpy as np
import pandas as pd

from scipy import optimize, special

from nbpress import settings
from nbpress.models import Moneyness, OptionType, TradeBook


LOG = logging.getLogger(__name__)


class DomainError(ValueError):
    """Inputs outside the domain of an option-math function."""


class NumericError(ArithmeticError):
    """A numerical routine failed to converge."""


SIGMA_SOURCES = ("rv15", "rv30", "trade_iv")

# Labels for np.searchsorted over settings.DELTA_BREAKS
_BAND_LABELS = [
    Moneyness.Excluded,
    Moneyness.DOTM,
    Moneyness.OTM,
    Moneyness.ATM,
    Moneyness.ITM,
    Moneyness.DITM,
    Moneyness.Excluded,
]
_BAND_VALUES = np.array([label.value for label in _BAND_LABELS], dtype=object)

# Lowest volatility bracket used when inverting prices
SIGMA_FLOOR = 1e-8


class OptionContext:
    """Contract and market state for a Black-Scholes evaluation.

    Attributes:
        spot (float): Underlying price (USD).
        strike (float): Strike price (USD).
        tau (float): Residual maturity in years (ACT/365).
        sigma (float): Annualised volatility; may be None for implied_vol.
        option_type (OptionType): Call or Put.
        rate (float): Annualised risk-free rate (default 0).
    """

    def __init__(self, spot, strike, tau, sigma=None, option_type=OptionType.Call, rate=0.0):
        self.spot = spot
        self.strike = strike
        self.tau = tau
        self.sigma = sigma
        self.option_type = option_type
        self.rate = rate

    def __repr__(self):
        return (
            f"OptionContext(spot={self.spot}, strike={self.strike}, tau={self.tau}, "
            f"sigma={self.sigma}, type={self.option_type.name}, rate={self.rate})"
        )

    def with_sigma(self, sigma):
        return type(self)(
            self.spot, self.strike, self.tau, sigma, self.option_type, self.rate
        )

    @property
    def forward(self):
        return self.spot * math.exp(self.rate * self.tau)

    @property
    def discount(self):
        return math.exp(-self.rate * self.tau)

    def validate(self, need_sigma=True):
        if not self.spot > 0:
            raise DomainError(f"spot must be positive, got {self.spot}")
        if not self.strike > 0:
            raise DomainError(f"strike must be positive, got {self.strike}")
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")
        if need_sigma and not (self.sigma is not None and self.sigma > 0):
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.option_type not in (OptionType.Call, OptionType.Put):
            raise DomainError("option type must be Call or Put")


class RealizedVolWindow:
    """Daily log returns over the most recent window_days days."""

    def __init__(self, daily_log_returns, window_days=15, annualization_days=365):
        self.daily_log_returns = list(daily_log_returns)
        self.window_days = window_days
        self.annualization_days = annualization_days


def norm_cdf(x):
    """Standard normal cumulative distribution function."""
    return float(special.ndtr(x))


def _d1(ctx):
    root = ctx.sigma * math.sqrt(ctx.tau)
    return (math.log(ctx.forward / ctx.strike) + 0.5 * ctx.sigma ** 2 * ctx.tau) / root


def bs_delta(ctx):
    """Black-Scholes delta on the forward: call = Phi(d1), put = call - 1."""
    ctx.validate()
    call = norm_cdf(_d1(ctx))
    if ctx.option_type is OptionType.Call:
        return call
    return call - 1.0


def bs_price(ctx):
    """Black-Scholes price in USD."""
    ctx.validate()
    d1 = _d1(ctx)
    d2 = d1 - ctx.sigma * math.sqrt(ctx.tau)
    discounted_strike = ctx.strike * ctx.discount
    if ctx.option_type is OptionType.Call:
        return ctx.spot * norm_cdf(d1) - discounted_strike * norm_cdf(d2)
    return discounted_strike * norm_cdf(-d2) - ctx.spot * norm_cdf(-d1)


def price_bounds(ctx):
    """No-arbitrage (lower, upper) price bounds for a European option."""
    discounted_strike = ctx.strike * ctx.discount
    if ctx.option_type is OptionType.Call:
        return max(ctx.spot - discounted_strike, 0.0), ctx.spot
    return max(discounted_strike - ctx.spot, 0.0), discounted_strike


def implied_vol(price, ctx, upper=settings.IV_UPPER, maxiter=200):
    """Invert the Black-Scholes price for volatility.

    Uses a bracketed Brent solve on (1e-8, upper]; ctx.sigma is ignored.

    Raises:
        DomainError: price is not strictly inside the no-arbitrage bounds, or
            implies a volatility outside the bracket.
        NumericError: the solver did not converge, or the converged volatility
            does not reproduce the price.
    """
    ctx.validate(need_sigma=False)
    lower_bound, upper_bound = price_bounds(ctx)
    if not lower_bound < price < upper_bound:
        raise DomainError(
            f"price {price} outside no-arbitrage bounds ({lower_bound}, {upper_bound})"
        )

    def objective(sigma):
        return bs_price(ctx.with_sigma(sigma)) - price

    high = objective(upper)
    if high < 0:
        raise DomainError(f"price {price} implies volatility above {upper}")
    if high == 0:
        return upper
    low = objective(SIGMA_FLOOR)
    if low > 0:
        raise DomainError(f"price {price} implies volatility below {SIGMA_FLOOR}")
    if low == 0:
        return SIGMA_FLOOR

    try:
        sigma, result = optimize.brentq(
            objective,
            SIGMA_FLOOR,
            upper,
            xtol=1e-15,
            rtol=4 * np.finfo(float).eps,
            maxiter=maxiter,
            full_output=True,
            disp=False,
        )
    except (RuntimeError, ValueError) as exc:
        raise NumericError(f"implied volatility solve failed: {exc}") from None
    if not result.converged:
        raise NumericError(f"implied volatility did not converge after {maxiter} iterations")
    if abs(objective(sigma)) >= 1e-10 * ctx.spot:
        raise NumericError("implied volatility does not reproduce the price")
    return sigma


def realized_vol(window):
    """Annualised realised volatility: sqrt(annualization_days * mean(r^2))."""
    if window.window_days < 2:
        raise DomainError("window_days must be at least 2")
    returns = np.asarray(window.daily_log_returns, dtype=float)
    if len(returns) != window.window_days:
        raise DomainError(
            f"expected {window.window_days} daily returns, got {len(returns)}"
        )
    return math.sqrt(window.annualization_days * float(np.mean(returns ** 2)))


def classify_moneyness(delta):
    """Moneyness category for a signed delta.

    Bands are left-open/right-closed on |delta|; |delta| <= 0.02 and
    |delta| > 0.98 are Excluded.
    """
    return _BAND_LABELS[bisect.bisect_left(settings.DELTA_BREAKS, abs(delta))]


def classify_moneyness_array(delta):
    """Vectorised classify_moneyness, returning category values."""
    index = np.searchsorted(settings.DELTA_BREAKS, np.abs(delta), side="left")
    return _BAND_VALUES[index]


def bs_delta_array(spot, strike, tau, sigma, is_call, rate=0.0):
    """Vectorised bs_delta over numpy arrays (no validation)."""
    forward = spot * np.exp(rate * tau)
    root = sigma * np.sqrt(tau)
    d1 = (np.log(forward / strike) + 0.5 * sigma ** 2 * tau) / root
    call = special.ndtr(d1)
    return np.where(is_call, call, call - 1.0)


def strike_for_delta(delta, spot, tau, sigma, option_type, rate=0.0):
    """Strike at which an option has the given signed delta."""
    call_delta = delta if option_type is OptionType.Call else delta + 1.0
    if not 0 < call_delta < 1:
        raise DomainError(f"delta {delta} not attainable for a {option_type.name}")
    d1 = float(special.ndtri(call_delta))
    root = sigma * math.sqrt(tau)
    forward = spot * math.exp(rate * tau)
    return forward * math.exp(-(d1 * root - 0.5 * sigma ** 2 * tau))


def daily_closes(bars):
    """Close of each UTC day from spot bars, indexed by day number since epoch.

    A bar ending exactly at midnight closes the previous day. Days without a
    bar are absent from the index.
    """
    ends = np.array([bar.interval_end_ms for bar in bars], dtype=np.int64)
    closes = np.array([bar.close for bar in bars], dtype=float)
    frame = pd.DataFrame({"day": (ends - 1) // settings.MS_PER_DAY, "close": closes})
    return frame.groupby("day")["close"].last()


def realized_vol_by_day(bars, window_days=15, annualization_days=settings.DAYS_PER_YEAR):
    """Realised volatility available to trades on each UTC day.

    The value for day d uses the window_days daily log returns of the days
    ending before d. Days whose window has a missing close get NaN.
    """
    closes = daily_closes(bars)
    if closes.empty:
        return pd.Series(dtype=float)
    days = np.arange(closes.index.min(), closes.index.max() + 2)
    closes = closes.reindex(days)
    squared = np.log(closes / closes.shift(1)) ** 2
    mean = squared.rolling(window_days, min_periods=window_days).mean()
    return np.sqrt(annualization_days * mean).shift(1).dropna()


def sigma_for_trades(frame, bars, sigma_source="rv15"):
    """Volatility used to compute each trade's classification delta."""
    if sigma_source == "trade_iv":
        return frame["implied_vol"].to_numpy(dtype=float)
    if sigma_source not in SIGMA_SOURCES:
        raise DomainError(f"Unknown sigma source '{sigma_source}'")
    if bars is None:
        raise DomainError(f"sigma source '{sigma_source}' requires spot bars")
    window = 15 if sigma_source == "rv15" else 30
    by_day = realized_vol_by_day(bars, window_days=window)
    days = frame["timestamp_ms"].to_numpy() // settings.MS_PER_DAY
    return by_day.reindex(days).to_numpy(dtype=float)


def classify_trades(book, bars=None, sigma_source="rv15", rate=0.0, report=None):
    """Delta-classify every trade into a moneyness category.

    Adds tau, sigma, delta and moneyness columns. Trades without a usable
    sigma and trades in the Excluded band are dropped and counted in the
    cleaning report (dropped_no_sigma / dropped_delta_bounds).

    Returns:
        TradeBook: classified trades, still sorted by timestamp.
    """
    frame = book.to_frame().copy()
    frame["tau"] = (frame["expiry_ms"] - frame["timestamp_ms"]) / settings.MS_PER_YEAR
    frame["sigma"] = sigma_for_trades(frame, bars, sigma_source)

    usable = np.isfinite(frame["sigma"].to_numpy()) & (frame["sigma"].to_numpy() > 0)
    no_sigma = int((~usable).sum())
    frame = frame[usable].copy()

    frame["delta"] = bs_delta_array(
        frame["index_price"].to_numpy(),
        frame["strike"].to_numpy(),
        frame["tau"].to_numpy(),
        frame["sigma"].to_numpy(),
        (frame["option_type"] == OptionType.Call.value).to_numpy(),
        rate=rate,
    )
    frame["moneyness"] = classify_moneyness_array(frame["delta"].to_numpy())
    excluded = (frame["moneyness"] == Moneyness.Excluded.value).to_numpy()
    frame = frame[~excluded]

    if report is not None:
        report.dropped_no_sigma += no_sigma
        report.dropped_delta_bounds += int(excluded.sum())
        report.total_out -= no_sigma + int(excluded.sum())
    if no_sigma:
        LOG.warning("%i trade(s) have no %s volatility and were dropped", no_sigma, sigma_source)
    LOG.info(
        "Classified %i trades (%i outside delta bounds)", len(frame), int(excluded.sum())
    )
    return TradeBook(frame)


def bs_price_array(spot, strike, tau, sigma, is_call, rate=0.0):
    """Vectorised bs_price over numpy arrays (no validation)."""
    root = sigma * np.sqrt(tau)
    d1 = (np.log(spot * np.exp(rate * tau) / strike) + 0.5 * sigma ** 2 * tau) / root
    d2 = d1 - root
    discounted_strike = strike * np.exp(-rate * tau)
    call = spot * special.ndtr(d1) - discounted_strike * special.ndtr(d2)
    put = discounted_strike * special.ndtr(-d2) - spot * special.ndtr(-d1)
    return np.where(is_call, call, put)


def strike_for_delta_array(delta, spot, tau, sigma, is_call, rate=0.0):
    """Vectorised strike_for_delta; delta is signed (negative for puts)."""
    call_delta = np.where(is_call, delta, np.asarray(delta) + 1.0)
    d1 = special.ndtri(call_delta)
    root = sigma * np.sqrt(tau)
    forward = spot * np.exp(rate * tau)
    return forward * np.exp(-(d1 * root - 0.5 * sigma ** 2 * tau))
