"""Regime recovery: does the regression battery find what the generator planted?

For each pure regime and seed a synthetic market is generated in memory,
classified, bucketed hourly and run through the full-sample battery. The
verdict flag matching the planted regime should be set (recovery), and under
NullNoise no flag should be set (false positives).
"""

import json
import logging

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from nbpress import option_math, pressure, regress, settings
from nbpress.analysis import run_battery
from nbpress.synth import RegimeConfig, gen_flow, gen_underlying


LOG = logging.getLogger(__name__)

HYPOTHESES = ("limits_to_arbitrage", "volatility_learning", "directional_learning")

# Regime -> verdict flag it plants
PLANTED = {
    "LimitsToArbitrage": "limits_to_arbitrage",
    "VolatilityLearning": "volatility_learning",
    "DirectionalLearning": "directional_learning",
}

# Minimum recovery rates per regime, maximum null false-positive rate
THRESHOLDS = {
    "LimitsToArbitrage": 0.95,
    "VolatilityLearning": 0.90,
    "DirectionalLearning": 0.90,
}
NULL_FPR = 0.10

REGIMES = ("NullNoise",) + tuple(PLANTED)


def run_seed(config):
    """Verdict flags for one synthetic market.

    Returns:
        dict: Hypothesis -> bool, plus 'seed' and 'regime'; flags are None
            when no verdict could be reached.
    """
    bars, events = gen_underlying(config)
    book = gen_flow(config, bars, events)
    classified = option_math.classify_trades(book, bars)
    table = pressure.bucket_trades(classified, "1h")
    series = pressure.build_series(table, pressure.spot_series(bars, "1h"))
    results, notices = run_battery(series)
    outcome = {"seed": config.seed, "regime": config.regime}
    try:
        verdict = regress.evaluate_verdict(results)
    except regress.RegressionError as exc:
        LOG.warning("%s seed %i: %s", config.regime, config.seed, exc)
        outcome.update({name: None for name in HYPOTHESES})
        return outcome
    for name in HYPOTHESES:
        outcome[name] = bool(getattr(verdict, name))
    outcome["notices"] = len(notices)
    return outcome


def _rate(outcomes, name):
    if not outcomes:
        return None
    return sum(1 for o in outcomes if o[name]) / len(outcomes)


def summarise(outcomes):
    """Recovery and false-positive rates with pass/fail per criterion."""
    by_regime = {regime: [] for regime in REGIMES}
    for outcome in outcomes:
        by_regime.setdefault(outcome["regime"], []).append(outcome)

    summary = {"recovery": {}, "null_false_positive": {}, "passed": True}
    for regime, flag in PLANTED.items():
        rate = _rate(by_regime[regime], flag)
        if rate is None:
            continue
        ok = rate >= THRESHOLDS[regime]
        summary["recovery"][regime] = {
            "hypothesis": flag,
            "rate": rate,
            "threshold": THRESHOLDS[regime],
            "passed": ok,
            "seeds": len(by_regime[regime]),
            "off_target": {
                name: _rate(by_regime[regime], name) for name in HYPOTHESES if name != flag
            },
        }
        summary["passed"] &= ok
    null = by_regime["NullNoise"]
    for name in HYPOTHESES:
        rate = _rate(null, name)
        if rate is None:
            continue
        ok = rate <= NULL_FPR
        summary["null_false_positive"][name] = {
            "rate": rate,
            "threshold": NULL_FPR,
            "passed": ok,
            "seeds": len(null),
        }
        summary["passed"] &= ok
    return summary


def validate(n_seeds=100, jobs=1, base=None, regimes=REGIMES, first_seed=0):
    """Run every regime for n_seeds seeds.

    Parameters:
        n_seeds (int): Seeds per regime (>= 1).
        jobs (int): Worker processes; 1 runs in this process.
        base (RegimeConfig): Parameters shared by every run.
        regimes (tuple): Regimes to include.
        first_seed (int): Seeds are first_seed .. first_seed + n_seeds - 1.
    Returns:
        dict: Summary (see summarise) with the per-seed outcomes.
    """
    if n_seeds < 1:
        raise ValueError("Expected at least one seed")
    base = base or RegimeConfig()
    configs = [
        base.copy(regime=regime, seed=first_seed + i).validate()
        for regime in regimes
        for i in range(n_seeds)
    ]
    LOG.info("Validating %i regimes x %i seeds on %i worker(s)", len(regimes), n_seeds, jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            outcomes = list(executor.map(run_seed, configs))
    else:
        outcomes = [run_seed(config) for config in configs]

    summary = summarise(outcomes)
    summary["schema_version"] = settings.SCHEMA_VERSION
    summary["config"] = base.to_dict()
    summary["n_seeds"] = n_seeds
    summary["outcomes"] = outcomes
    return summary


def format_summary(summary):
    lines = []
    for regime, entry in summary["recovery"].items():
        lines.append(
            f"{regime:<20}{entry['hypothesis']:<24}recovered {entry['rate']:.2f}"
            f" (>= {entry['threshold']:.2f}) {'PASS' if entry['passed'] else 'FAIL'}"
        )
        off_target = ", ".join(f"{name} {rate:.2f}" for name, rate in entry["off_target"].items())
        lines.append(" " * 44 + f"off-target {off_target}")
    for name, entry in summary["null_false_positive"].items():
        lines.append(
            f"{'NullNoise':<20}{name:<24}false pos {entry['rate']:.2f}"
            f" (<= {entry['threshold']:.2f}) {'PASS' if entry['passed'] else 'FAIL'}"
        )
    return "\n".join(lines)


def write_recovery(summary, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "recovery.json"
    with path.open("w") as fp:
        json.dump(summary, fp, indent=2, sort_keys=True)
        fp.write("\n")
    LOG.info("Wrote %s", path)
    return path
