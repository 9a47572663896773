"""Synthetic option markets with planted pricing regimes.

gen_underlying draws an hourly jump-diffusion spot path (plus a warm-up
period so realised volatility is available from the first trading hour) and
schedules the volatility/drift events informed traders anticipate. gen_flow
draws buyer- and seller-initiated option trades in every moneyness category
and runs a market maker whose quoted implied volatility reacts to the flow
according to the configured regime:

NullNoise
    quotes follow a random walk unrelated to flow
LimitsToArbitrage
    x_t = (1 - kappa) x_{t-1} + impact * A_t + noise
VolatilityLearning
    x_t = x_{t-1} + impact * (V_t + spillover * V_t^ATM) + noise
DirectionalLearning
    x_t = x_{t-1} + impact * D_t + noise
Mixed
    volatility and directional terms together

where x is the quote's deviation from a baseline smile, flows are
delta-weighted USD millions and every regime adds -leverage * r_t. All trades
of one (hour, moneyness, type) execute at the same quoted IV and are priced
with Black-Scholes at that IV.
"""

import configparser
import datetime
import json
import logging
import math

from collections import namedtuple
from pathlib import Path

import numpy as np
import pandas as pd

from nbpress import settings
from nbpress.config import ConfigError
from nbpress.ingest import write_spot, write_trades
from nbpress.ivcurve import curve_category
from nbpress.models import MONEYNESS_ORDER, Moneyness, OptionType, SpotBar, TradeBook, instrument_name
from nbpress.option_math import (
    bs_delta_array,
    bs_price_array,
    realized_vol_by_day,
    strike_for_delta_array,
)


LOG = logging.getLogger(__name__)


REGIMES = (
    "NullNoise",
    "LimitsToArbitrage",
    "VolatilityLearning",
    "DirectionalLearning",
    "Mixed",
)

# Target |delta| at the centre of each moneyness band
BAND_CENTRES = {
    Moneyness.DOTM: 0.0725,
    Moneyness.OTM: 0.25,
    Moneyness.ATM: 0.5,
    Moneyness.ITM: 0.75,
    Moneyness.DITM: 0.9275,
}

# Baseline IV by strike-ordered curve category (a smile with raised wings)
SMILE = {1: 1.25, 2: 1.08, 3: 1.0, 4: 1.06, 5: 1.2}

IV_FLOOR = 0.1

MAX_EXPIRY_DAYS = 60

TYPES = (OptionType.Call, OptionType.Put)

PlantedEvent = namedtuple("PlantedEvent", ["hour", "kind", "sign"])


class RegimeConfig:
    """Parameters of a synthetic market.

    Defaults plant effects detectable at a 2,000 hour horizon. Impact is in
    decimal IV per USD million of delta-weighted flow; intensities are
    expected trades per hour per (moneyness, type).
    """

    FIELDS = {
        "regime": "NullNoise",
        "horizon_hours": 2000,
        "seed": 0,
        "start_date": "2021-01-01",
        "warmup_days": 31,
        # underlying
        "start_price": 40000.0,
        "drift": 0.0,
        "diffusion_vol": 0.7,
        "jump_intensity": 10.0,
        "jump_mean": 0.0,
        "jump_dispersion": 0.02,
        "spot_volume": 5e7,
        # market maker
        "kappa": 0.4,
        "impact": 0.2,
        "iv_noise": 0.002,
        "iv_level": 0.75,
        "leverage": 0.2,
        "spillover": 0.5,
        # flow
        "informed_intensity": 4.0,
        "uninformed_intensity": 3.0,
        "lead_hours": 6,
        "mean_amount": 1.0,
        # planted events
        "event_rate": 1.0,
        "event_duration": 24,
        "event_vol_shift": 0.5,
        "event_drift": 5.0,
    }

    INTEGERS = ("horizon_hours", "seed", "warmup_days", "lead_hours", "event_duration")

    def __init__(self, **kwargs):
        unknown = sorted(set(kwargs) - set(self.FIELDS))
        if unknown:
            raise ConfigError([(key, "unknown field") for key in unknown])
        for field, default in self.FIELDS.items():
            setattr(self, field, kwargs.get(field, default))

    def __repr__(self):
        return f"RegimeConfig(regime={self.regime}, horizon={self.horizon_hours}, seed={self.seed})"

    def __eq__(self, other):
        if not isinstance(other, RegimeConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def copy(self, **changes):
        return type(self)(**{**self.to_dict(), **changes})

    def to_dict(self):
        return {field: getattr(self, field) for field in self.FIELDS}

    @classmethod
    def from_dict(cls, d):
        """Build and coerce field types from strings (config files)."""
        errors = []
        values = {}
        for key, value in d.items():
            if key not in cls.FIELDS:
                errors.append((key, "unknown field"))
                continue
            default = cls.FIELDS[key]
            try:
                if key in cls.INTEGERS:
                    values[key] = int(value)
                elif isinstance(default, float):
                    values[key] = float(value)
                else:
                    values[key] = str(value).strip()
            except (TypeError, ValueError):
                errors.append((key, f"invalid value {value!r}"))
        if errors:
            raise ConfigError(errors)
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path):
        """Read a JSON object or flat 'key = value' file."""
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"Cannot read {path}: {exc}") from None
        if path.suffix == ".json":
            try:
                return cls.from_dict(json.loads(text))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        parser = configparser.ConfigParser()
        try:
            parser.read_string("[regime]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"Cannot parse {path}: {exc}") from None
        return cls.from_dict(dict(parser["regime"]))

    def validate(self):
        """Check every field, raising one ConfigError listing all problems."""
        errors = []

        def check(field, ok, message):
            if not ok:
                errors.append((field, message))

        check("regime", self.regime in REGIMES, "must be one of " + ", ".join(REGIMES))
        check("horizon_hours", self.horizon_hours >= 100, "must be at least 100")
        check("seed", 0 <= self.seed < 2 ** 64, "must be a 64-bit unsigned integer")
        try:
            datetime.date.fromisoformat(self.start_date)
        except (TypeError, ValueError):
            errors.append(("start_date", "must be an ISO date (YYYY-MM-DD)"))
        check("warmup_days", self.warmup_days >= 31, "must be at least 31")
        check("start_price", self.start_price > 0, "must be positive")
        check("diffusion_vol", self.diffusion_vol >= 0, "must be non-negative")
        check("jump_intensity", self.jump_intensity >= 0, "must be non-negative")
        check("jump_dispersion", self.jump_dispersion >= 0, "must be non-negative")
        check("spot_volume", self.spot_volume > 0, "must be positive")
        check("kappa", 0 < self.kappa <= 1, "must be in (0, 1]")
        check("impact", self.impact > 0, "must be positive")
        check("iv_noise", self.iv_noise >= 0, "must be non-negative")
        check("iv_level", IV_FLOOR < self.iv_level < settings.IV_UPPER / 2, "must be in (0.1, 2.5)")
        check("spillover", self.spillover >= 0, "must be non-negative")
        check("informed_intensity", self.informed_intensity >= 0, "must be non-negative")
        check("uninformed_intensity", self.uninformed_intensity >= 0, "must be non-negative")
        check("lead_hours", self.lead_hours >= 1, "must be at least 1")
        check("mean_amount", self.mean_amount > 0, "must be positive")
        check("event_rate", self.event_rate >= 0, "must be non-negative")
        check("event_duration", self.event_duration >= 1, "must be at least 1")
        check("event_vol_shift", self.event_vol_shift >= 0, "must be non-negative")
        if errors:
            raise ConfigError(errors)
        return self

    @property
    def trading_start_ms(self):
        day = datetime.date.fromisoformat(self.start_date)
        moment = datetime.datetime(day.year, day.month, day.day, tzinfo=datetime.timezone.utc)
        return int(moment.timestamp()) * 1000

    @property
    def warmup_hours(self):
        return self.warmup_days * 24


class SyntheticDataset:
    """Trades, spot bars and the ground truth they were generated from."""

    def __init__(self, trades, spot, truth):
        self.trades = trades
        self.spot = spot
        self.truth = truth

    def __repr__(self):
        return f"SyntheticDataset(trades={len(self.trades)}, bars={len(self.spot)})"


def _streams(seed):
    """Independent generators for events, diffusion, jumps, volume and flow."""
    children = np.random.SeedSequence(seed).spawn(5)
    return [np.random.default_rng(child) for child in children]


def schedule_events(config, rng):
    """Volatility/drift events anticipated by informed traders."""
    kinds = {
        "VolatilityLearning": ("volatility",),
        "DirectionalLearning": ("directional",),
        "Mixed": ("volatility", "directional"),
    }.get(config.regime)
    if not kinds or config.event_rate == 0:
        return []
    horizon = config.horizon_hours
    count = rng.poisson(config.event_rate * horizon / 24)
    hours = np.sort(rng.integers(config.lead_hours, horizon, size=count))
    signs = rng.choice([-1, 1], size=count)
    picks = rng.integers(0, len(kinds), size=count)
    return [
        PlantedEvent(int(hour), kinds[pick], int(sign))
        for hour, sign, pick in zip(hours, signs, picks)
    ]


def gen_underlying(config, seed=None):
    """Hourly jump-diffusion spot path with planted events.

    The path starts config.warmup_days before the first trading hour.
    Volatility events scale the diffusion volatility by (1 + event_vol_shift)
    (or its inverse for negative events) and directional events add
    sign * event_drift to the annual drift, each for event_duration hours.

    Returns:
        (list, list): SpotBar objects and PlantedEvent tuples (hours relative
            to the first trading hour).
    """
    seed = config.seed if seed is None else seed
    event_rng, diffusion_rng, jump_rng, volume_rng, _ = _streams(seed)
    events = schedule_events(config, event_rng)

    hours = config.warmup_hours + config.horizon_hours
    dt = 1.0 / (settings.DAYS_PER_YEAR * 24)
    vol = np.full(hours, float(config.diffusion_vol))
    drift = np.full(hours, float(config.drift))
    for event in events:
        start = config.warmup_hours + event.hour
        stop = min(start + config.event_duration, hours)
        if event.kind == "volatility":
            shift = 1.0 + config.event_vol_shift
            vol[start:stop] *= shift if event.sign > 0 else 1.0 / shift
        else:
            drift[start:stop] += event.sign * config.event_drift

    shocks = diffusion_rng.standard_normal(hours)
    counts = jump_rng.poisson(config.jump_intensity * dt, size=hours)
    jumps = config.jump_mean * counts + config.jump_dispersion * np.sqrt(counts) * (
        jump_rng.standard_normal(hours)
    )
    returns = (drift - 0.5 * vol ** 2) * dt + vol * math.sqrt(dt) * shocks + jumps
    closes = config.start_price * np.exp(np.cumsum(returns))
    volumes = config.spot_volume * np.exp(0.3 * volume_rng.standard_normal(hours))

    first_end = config.trading_start_ms - config.warmup_hours * settings.MS_PER_HOUR
    bars = [
        SpotBar(first_end + (i + 1) * settings.MS_PER_HOUR, float(close), float(volume))
        for i, (close, volume) in enumerate(zip(closes, volumes))
    ]
    LOG.info("Generated %i spot bars and %i planted events", len(bars), len(events))
    return bars, events


def _informed_sides(config, events):
    """Informed intensity and side per (hour, moneyness, type)."""
    shape = (config.horizon_hours, len(MONEYNESS_ORDER), 2)
    intensity = np.zeros(shape)
    side = np.zeros(shape, dtype=int)
    weights = {Moneyness.OTM: 1.0, Moneyness.ATM: 0.5}
    for event in events:
        start = max(event.hour - config.lead_hours, 0)
        for moneyness, weight in weights.items():
            k = MONEYNESS_ORDER.index(moneyness)
            intensity[start:event.hour, k, :] = config.informed_intensity * weight
            if event.kind == "volatility":
                side[start:event.hour, k, :] = event.sign
            else:
                side[start:event.hour, k, 0] = event.sign
                side[start:event.hour, k, 1] = -event.sign
    return intensity, side


def _quote_path(config, flows, returns, rng):
    """Market maker IV quotes per (hour, moneyness, type) for the regime.

    flows holds signed delta-weighted USD millions per (hour, moneyness, type).
    """
    hours = config.horizon_hours
    base = np.array(
        [
            [config.iv_level * SMILE[int(curve_category(j, k))] for j in TYPES]
            for k in MONEYNESS_ORDER
        ]
    )
    atm = MONEYNESS_ORDER.index(Moneyness.ATM)
    volatility = (flows[:, :, 0] + flows[:, :, 1]) / 2
    directional = (flows[:, :, 0] - flows[:, :, 1]) / 2
    directional = np.stack([directional, -directional], axis=2)
    spill = np.zeros_like(volatility)
    spill[:, :] = config.spillover * volatility[:, [atm]]
    spill[:, atm] = 0.0
    learned_volatility = np.repeat((volatility + spill)[:, :, None], 2, axis=2)

    noise = config.iv_noise * rng.standard_normal((hours,) + base.shape)
    leverage = -config.leverage * returns

    quotes = np.empty((hours,) + base.shape)
    deviation = np.zeros(base.shape)
    for t in range(hours):
        step = noise[t] + leverage[t]
        if config.regime == "LimitsToArbitrage":
            deviation = (1 - config.kappa) * deviation + config.impact * flows[t] + step
        elif config.regime == "VolatilityLearning":
            deviation = deviation + config.impact * learned_volatility[t] + step
        elif config.regime == "DirectionalLearning":
            deviation = deviation + config.impact * directional[t] + step
        elif config.regime == "Mixed":
            deviation = deviation + config.impact * (
                learned_volatility[t] + directional[t]
            ) + step
        else:
            deviation = deviation + step
        quote = base + deviation
        quote = np.where(quote < IV_FLOOR, 2 * IV_FLOOR - quote, quote)
        quote = np.where(quote > settings.IV_UPPER, 2 * settings.IV_UPPER - quote, quote)
        deviation = quote - base
        quotes[t] = quote
    return quotes


def gen_flow(config, bars, events=(), seed=None):
    """Option trades and market maker quotes over the trading horizon.

    Strikes sit at the delta band centre of each category under the same
    15-day realised volatility the classifier uses, expiries are daily 08:00
    UTC settlements 1-60 days out and every trade is priced at its quoted IV.

    Returns:
        TradeBook: Trades sorted by timestamp.
    Raises:
        ConfigError: The spot path has no positive realised volatility.
    """
    seed = config.seed if seed is None else seed
    rng = _streams(seed)[4]
    hours = config.horizon_hours
    start = config.trading_start_ms
    warmup = config.warmup_hours
    hour_ms = settings.MS_PER_HOUR

    closes = np.array([bar.close for bar in bars], dtype=float)
    opens = closes[warmup - 1:warmup - 1 + hours]
    returns = np.log(closes[warmup:warmup + hours] / opens)
    rv = realized_vol_by_day(bars, window_days=15)
    hour_starts = start + np.arange(hours, dtype=np.int64) * hour_ms
    sigma = rv.reindex(hour_starts // settings.MS_PER_DAY).to_numpy(dtype=float)
    if not (np.isfinite(sigma).all() and (sigma > 0).all()):
        raise ConfigError([("diffusion_vol", "spot path needs positive realised volatility")])

    shape = (hours, len(MONEYNESS_ORDER), 2)
    informed_intensity, informed_side = _informed_sides(config, events)
    uninformed = rng.poisson(config.uninformed_intensity, size=shape)
    informed = rng.poisson(informed_intensity)

    cells = np.arange(np.prod(shape)).reshape(shape)
    cell = np.concatenate([np.repeat(cells.ravel(), uninformed.ravel()),
                           np.repeat(cells.ravel(), informed.ravel())])
    hour, k, j = np.unravel_index(cell, shape)
    n = len(cell)
    n_uninformed = int(uninformed.sum())
    sides = np.empty(n, dtype=int)
    sides[:n_uninformed] = rng.choice([-1, 1], size=n_uninformed)
    sides[n_uninformed:] = informed_side[
        hour[n_uninformed:], k[n_uninformed:], j[n_uninformed:]
    ]

    stamps = hour_starts[hour] + rng.integers(0, hour_ms, size=n)
    days_out = rng.integers(1, MAX_EXPIRY_DAYS + 1, size=n)
    expiry = (stamps // settings.MS_PER_DAY + days_out) * settings.MS_PER_DAY + (
        settings.SETTLEMENT_HOUR * hour_ms
    )
    tau = (expiry - stamps) / settings.MS_PER_YEAR
    is_call = j == 0
    spot = opens[hour]
    centre = np.array([BAND_CENTRES[m] for m in MONEYNESS_ORDER])[k]
    target = np.where(is_call, centre, -centre)
    strike = np.rint(strike_for_delta_array(target, spot, tau, sigma[hour], is_call))
    delta = np.abs(bs_delta_array(spot, strike, tau, sigma[hour], is_call))
    amount = np.maximum(
        np.round(config.mean_amount * rng.lognormal(-0.125, 0.5, size=n), 1), 0.1
    )

    signed = sides * amount * spot * delta / 1e6
    flows = np.bincount(cell, weights=signed, minlength=cells.size).reshape(shape)
    quotes = _quote_path(config, flows, returns, rng)
    iv = quotes[hour, k, j]
    price = np.maximum(bs_price_array(spot, strike, tau, iv, is_call), 0.0) / spot

    order = np.lexsort((np.arange(n), stamps))
    names = {}
    instruments = []
    for e, s, c in zip(expiry[order], strike[order], is_call[order]):
        key = (e, s, c)
        if key not in names:
            date = datetime.datetime.fromtimestamp(e / 1000, tz=datetime.timezone.utc).date()
            names[key] = instrument_name(date, s, OptionType.Call if c else OptionType.Put)
        instruments.append(names[key])

    frame = pd.DataFrame(
        {
            "timestamp_ms": stamps[order].astype(np.int64),
            "instrument": instruments,
            "expiry_ms": expiry[order].astype(np.int64),
            "strike": strike[order],
            "option_type": np.where(is_call[order], "C", "P"),
            "direction": np.where(sides[order] > 0, "buy", "sell"),
            "amount": amount[order],
            "option_price": price[order],
            "implied_vol": iv[order],
            "index_price": spot[order],
        }
    )
    LOG.info("Generated %i trades (%s regime)", n, config.regime)
    return TradeBook(frame)


def planted_truth(config, events):
    """Ground truth of a generated dataset: config, planted effects and events."""
    impact = config.impact * 100
    lag = -config.kappa / 2 if config.regime == "LimitsToArbitrage" else 0.0
    return {
        "schema_version": settings.SCHEMA_VERSION,
        "config": config.to_dict(),
        "planted": {
            "regime": config.regime,
            "kappa": config.kappa if config.regime == "LimitsToArbitrage" else None,
            "impact_pp_per_usd_million": impact,
            "expected_lag_coefficient": lag,
            "volatility_learning": config.regime in ("VolatilityLearning", "Mixed"),
            "directional_learning": config.regime in ("DirectionalLearning", "Mixed"),
            "limits_to_arbitrage": config.regime == "LimitsToArbitrage",
        },
        "events": [event._asdict() for event in events],
    }


def gen_dataset(config, out_dir=None, format="csv"):
    """Generate a synthetic dataset and optionally write it to out_dir.

    Files: trades.csv (or trades.jsonl), spot.csv and truth.json, in the
    formats read by nbpress.ingest. Identical config gives byte-identical
    files.
    """
    config.validate()
    bars, events = gen_underlying(config)
    trades = gen_flow(config, bars, events)
    dataset = SyntheticDataset(trades, bars, planted_truth(config, events))
    if out_dir is not None:
        write_dataset(dataset, out_dir, format=format)
    return dataset


def write_dataset(dataset, out_dir, format="csv"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = "csv" if format == "csv" else "jsonl"
    with (out_dir / f"trades.{suffix}").open("w", newline="") as fp:
        write_trades(dataset.trades, fp, format=format)
    with (out_dir / "spot.csv").open("w", newline="") as fp:
        write_spot(dataset.spot, fp)
    with (out_dir / "truth.json").open("w") as fp:
        json.dump(dataset.truth, fp, indent=2, sort_keys=True)
        fp.write("\n")
    LOG.info("Wrote synthetic dataset to %s", out_dir)
