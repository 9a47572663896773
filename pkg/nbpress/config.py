"""Run configuration: code defaults, user config.ini, flat config files and flags."""

import configparser
import hashlib
import json
import logging

from pathlib import Path

import appdirs

from nbpress import settings
from nbpress.models import MONEYNESS_ORDER, MaturityBucket, TodSlot


LOG = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists (field, message) pairs."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [(None, errors)]
        self.errors = list(errors)
        super().__init__(
            "; ".join(f"{field}: {message}" if field else message for field, message in self.errors)
        )


SECTION = "nbpress"

SIGMA_SOURCES = ("rv15", "rv30", "trade_iv")
SCALES = ("percent", "decimal")
STD_ERRORS = ("classical", "robust")
REPORT_FORMATS = ("tsv", "json", "csv")
TRADE_FORMATS = ("csv", "jsonl")
CURVE_WINDOWS = ("week", "year")
TYPES = ("C", "P")

# Keys accepted by --filters and the list fields they extend
FILTER_KEYS = {
    "year": "years",
    "maturity": "maturity",
    "tod": "tod",
    "moneyness": "moneyness",
    "type": "types",
}

LIST_FIELDS = ("years", "maturity", "tod", "moneyness", "types", "formats")
BOOL_FIELDS = ("by_year",)
FLOAT_FIELDS = ("rate", "alpha")


class RunConfig:
    """Settings of one analysis run.

    Attributes mirror the command line flags; list fields select the
    regression filter grid (an empty years list means the full sample).
    """

    FIELDS = {
        "trades": None,
        "spot": None,
        "trades_format": "csv",
        "interval": "1h",
        "sigma": "rv15",
        "rate": 0.0,
        "scale": "percent",
        "se": "classical",
        "alpha": 0.05,
        "years": [],
        "by_year": False,
        "maturity": ["all"],
        "tod": ["all"],
        "moneyness": [m.value for m in MONEYNESS_ORDER],
        "types": list(TYPES),
        "curve_window": "week",
        "out": "nbpress_out",
        "formats": list(REPORT_FORMATS),
    }

    def __init__(self, **kwargs):
        unknown = sorted(set(kwargs) - set(self.FIELDS))
        if unknown:
            raise ConfigError([(key, "unknown field") for key in unknown])
        for field, default in self.FIELDS.items():
            value = kwargs.get(field, default)
            setattr(self, field, list(value) if isinstance(value, (list, tuple)) else value)

    def __repr__(self):
        return f"RunConfig({self.to_dict()})"

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self):
        d = {}
        for field in self.FIELDS:
            value = getattr(self, field)
            if isinstance(value, Path):
                value = str(value)
            d[field] = value
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d).validate()

    def config_hash(self):
        """SHA-256 of the canonical JSON of every field."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def update(self, values):
        """Overlay string or typed values (from a file or flags), skipping None."""
        errors = []
        for key, value in values.items():
            if value is None:
                continue
            if key not in self.FIELDS:
                errors.append((key, "unknown field"))
                continue
            try:
                setattr(self, key, _coerce(key, value))
            except ValueError as exc:
                errors.append((key, str(exc)))
        if errors:
            raise ConfigError(errors)
        return self

    def apply_filters(self, filters):
        """Apply 'key=value[,value]' filter terms, e.g. year=2019 tod=asia."""
        errors = []
        overrides = {}
        for term in filters:
            key, sep, value = term.partition("=")
            key = key.strip()
            if not sep or key not in FILTER_KEYS:
                errors.append(
                    (term, "expected key=value with key in " + ", ".join(FILTER_KEYS))
                )
                continue
            field = FILTER_KEYS[key]
            overrides.setdefault(field, []).extend(_split(value))
        if errors:
            raise ConfigError(errors)
        return self.update(overrides)

    def validate(self):
        """Check every field, raising one ConfigError listing all problems."""
        errors = []

        def check(field, ok, message):
            if not ok:
                errors.append((field, message))

        def choices(field, allowed):
            value = getattr(self, field)
            values = value if isinstance(value, list) else [value]
            bad = [v for v in values if v not in allowed]
            check(field, not bad, f"invalid value(s) {', '.join(map(str, bad))}; "
                  f"expected {', '.join(map(str, allowed))}")

        choices("trades_format", TRADE_FORMATS)
        choices("interval", [w for w in settings.INTERVAL_WIDTHS if w != "5d"])
        choices("sigma", SIGMA_SOURCES)
        choices("scale", SCALES)
        choices("se", STD_ERRORS)
        choices("maturity", [m.value for m in MaturityBucket])
        choices("tod", [s.value for s in TodSlot])
        choices("moneyness", [m.value for m in MONEYNESS_ORDER])
        choices("types", TYPES)
        choices("curve_window", CURVE_WINDOWS)
        choices("formats", REPORT_FORMATS)
        check("alpha", 0 < self.alpha < 1, "must be in (0, 1)")
        check("years", all(isinstance(y, int) for y in self.years), "must be integers")
        if any(s != TodSlot.All.value for s in self.tod):
            check(
                "tod",
                settings.INTERVAL_WIDTHS.get(self.interval, 0) <= settings.TOD_BREAKS[0],
                "time-of-day filters need an interval of 8h or less",
            )
        if errors:
            raise ConfigError(errors)
        return self


def _split(value):
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _coerce(key, value):
    if key in LIST_FIELDS:
        values = value if isinstance(value, (list, tuple)) else _split(value)
        if key == "years":
            try:
                return [int(v) for v in values]
            except (TypeError, ValueError):
                raise ValueError(f"invalid years {value!r}") from None
        return [str(v) for v in values]
    if key in BOOL_FIELDS:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"invalid boolean {value!r}")
    if key in FLOAT_FIELDS:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ValueError(f"invalid number {value!r}") from None
    return str(value).strip() if not isinstance(value, Path) else str(value)


def get_config_dir():
    path = appdirs.user_config_dir(appname="nbpress")
    return Path(path)


def read_flat_file(path):
    """Read a flat 'key = value' file (no section header needed)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([(str(path), f"cannot read: {exc}")]) from None
    parser = configparser.ConfigParser()
    try:
        if not text.lstrip().startswith(f"[{SECTION}]"):
            text = f"[{SECTION}]\n" + text
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([(str(path), f"cannot parse: {exc}")]) from None
    return dict(parser[SECTION]) if parser.has_section(SECTION) else {}


def user_defaults():
    """Values saved with `nbpress config`, or an empty dict."""
    config_ini = get_config_dir() / "config.ini"
    if not config_ini.exists():
        return {}
    LOG.debug("Reading user defaults from %s", config_ini)
    return read_flat_file(config_ini)


def load_config(config_file=None, flags=None, filters=None):
    """Resolve a RunConfig: defaults < user config.ini < config_file < flags.

    Raises:
        ConfigError: Unknown keys or invalid values, listed field by field.
    """
    config = RunConfig()
    config.update(user_defaults())
    if config_file:
        LOG.info("Reading configuration from %s", config_file)
        config.update(read_flat_file(config_file))
    if flags:
        config.update(flags)
    if filters:
        config.apply_filters(filters)
    return config.validate()


def write_config_file(**kwargs):
    """Persist default values to the user config.ini."""
    LOG.info("Starting config module")

    values = {key: value for key, value in kwargs.items() if value is not None}
    if not values:
        raise ConfigError("No arguments given")
    RunConfig().update(values).validate()

    config_dir = get_config_dir()
    if not config_dir.is_dir():
        LOG.info("No config directory found, creating %s", config_dir)
        config_dir.mkdir(parents=True)

    config_ini = config_dir / "config.ini"
    config_parser = configparser.ConfigParser()
    if config_ini.exists():
        LOG.info("Found existing configuration file, reading")
        config_parser.read(config_ini)
    if not config_parser.has_section(SECTION):
        config_parser[SECTION] = {}

    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        config_parser[SECTION][key] = str(value)

    LOG.info("Writing configuration to %s", config_ini)
    with config_ini.open("w") as cfg:
        config_parser.write(cfg)
    return config_ini
