"""
Test suite for validate.py
"""

import json

import pytest

from nbpress import validate
from nbpress.synth import RegimeConfig


def outcome(regime, seed=0, **flags):
    result = {"seed": seed, "regime": regime}
    result.update({name: flags.get(name, False) for name in validate.HYPOTHESES})
    return result


def test_summarise_pass():
    outcomes = (
        [outcome("LimitsToArbitrage", i, limits_to_arbitrage=True) for i in range(20)]
        + [outcome("VolatilityLearning", i, volatility_learning=i > 0) for i in range(20)]
        + [outcome("DirectionalLearning", i, directional_learning=i > 1) for i in range(20)]
        + [outcome("NullNoise", i, limits_to_arbitrage=i < 2) for i in range(20)]
    )
    summary = validate.summarise(outcomes)
    assert summary["passed"]
    assert summary["recovery"]["VolatilityLearning"]["rate"] == pytest.approx(0.95)
    assert summary["recovery"]["DirectionalLearning"]["rate"] == pytest.approx(0.90)
    assert summary["null_false_positive"]["limits_to_arbitrage"]["rate"] == pytest.approx(0.1)
    assert summary["recovery"]["LimitsToArbitrage"]["off_target"] == {
        "volatility_learning": 0.0, "directional_learning": 0.0
    }
    text = validate.format_summary(summary)
    assert text.count("PASS") == 6
    assert "FAIL" not in text


def test_summarise_fail():
    outcomes = [outcome("LimitsToArbitrage", i, limits_to_arbitrage=i > 1) for i in range(20)]
    outcomes += [outcome("NullNoise", i, volatility_learning=i < 3) for i in range(20)]
    summary = validate.summarise(outcomes)
    assert not summary["passed"]
    assert not summary["recovery"]["LimitsToArbitrage"]["passed"]
    assert not summary["null_false_positive"]["volatility_learning"]["passed"]
    assert "VolatilityLearning" not in summary["recovery"]


def test_summarise_counts_missing_verdicts_as_misses():
    outcomes = [outcome("LimitsToArbitrage", 0, limits_to_arbitrage=None)]
    summary = validate.summarise(outcomes)
    assert summary["recovery"]["LimitsToArbitrage"]["rate"] == 0


def test_validate_rejects_no_seeds():
    with pytest.raises(ValueError):
        validate.validate(n_seeds=0)


def test_validate_runs_every_regime(mocker, tmp_path):
    run_seed = mocker.patch.object(
        validate, "run_seed",
        side_effect=lambda config: outcome(
            config.regime, config.seed,
            **{validate.PLANTED.get(config.regime, "none"): True},
        ),
    )
    summary = validate.validate(n_seeds=3, base=RegimeConfig(horizon_hours=500), first_seed=10)
    assert run_seed.call_count == 3 * len(validate.REGIMES)
    seeds = sorted({call.args[0].seed for call in run_seed.call_args_list})
    assert seeds == [10, 11, 12]
    assert all(call.args[0].horizon_hours == 500 for call in run_seed.call_args_list)
    assert summary["passed"]
    assert summary["n_seeds"] == 3
    path = validate.write_recovery(summary, tmp_path / "out")
    assert json.loads(path.read_text())["config"]["horizon_hours"] == 500


@pytest.mark.parametrize(
    "regime,flag",
    [("LimitsToArbitrage", "limits_to_arbitrage"), ("VolatilityLearning", "volatility_learning")],
)
def test_run_seed_recovers_strong_regimes(regime, flag):
    result = validate.run_seed(RegimeConfig(regime=regime, seed=1))
    assert result["regime"] == regime
    assert result[flag] is True


@pytest.mark.slow
def test_run_seed_directional():
    result = validate.run_seed(RegimeConfig(regime="DirectionalLearning", seed=1))
    assert result["directional_learning"] is True


@pytest.mark.slow
def test_full_recovery():
    summary = validate.validate(n_seeds=100, jobs=4)
    assert summary["passed"], validate.format_summary(summary)


def test_summarise_off_target_rates():
    outcomes = [
        outcome("VolatilityLearning", i, volatility_learning=True, directional_learning=i < 5)
        for i in range(20)
    ]
    summary = validate.summarise(outcomes)
    entry = summary["recovery"]["VolatilityLearning"]
    assert entry["passed"]
    assert entry["off_target"] == {
        "limits_to_arbitrage": 0.0, "directional_learning": pytest.approx(0.25)
    }
    assert "off-target limits_to_arbitrage 0.00, directional_learning 0.25" in (
        validate.format_summary(summary)
    )


def test_validate_default_regimes():
    summary = validate.validate(n_seeds=3)
    assert set(summary["recovery"]) == set(validate.PLANTED)
    assert set(summary["null_false_positive"]) == set(validate.HYPOTHESES)
    assert all(entry["passed"] for entry in summary["null_false_positive"].values())
    assert all(entry["seeds"] == 3 for entry in summary["null_false_positive"].values())
    assert summary["passed"], validate.format_summary(summary)
