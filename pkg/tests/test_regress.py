"""
Test suite for regress.py
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from scipy import stats

from nbpress import regress
from nbpress.models import MaturityBucket, Moneyness, OptionType, TodSlot
from nbpress.regress import RegressionSpec


class StubSeries:
    """Minimal stand-in for PressureSeries with hand-built category frames."""

    def __init__(self, categories, totals=None, width="1h", split_year=None):
        self.categories = categories
        self._totals = totals
        self.width = width
        self.split_year = split_year

    @property
    def empty(self):
        return not self.categories and self._totals is None

    def years(self, t):
        t = np.asarray(t)
        if self.split_year is None:
            return np.full(len(t), 2021)
        return np.where(t < self.split_year, 2021, 2022)

    def tod_slots(self, t):
        return np.array(["asia", "europe", "us"])[np.asarray(t) % 3]

    def category_frame(self, moneyness, maturity_bucket=MaturityBucket.All,
                       tod_slot=TodSlot.All):
        if MaturityBucket(maturity_bucket) is not MaturityBucket.All:
            raise KeyError(f"No series for maturity {MaturityBucket(maturity_bucket).value}")
        try:
            return self.categories[Moneyness(moneyness)]
        except KeyError:
            raise KeyError(f"No series for {Moneyness(moneyness).value}") from None

    def totals(self):
        return self._totals


def planted_category(rng, n=2000, lag=-0.458, a_call=3.0, a_put=1.0, symmetric=False):
    """Category frame whose IV changes follow a known Bollen-style equation."""
    r = rng.normal(0, 0.01, n)
    v = rng.normal(0, 1.0, n)
    call = rng.normal(0, 1.0, n)
    put = call.copy() if symmetric else rng.normal(0, 1.0, n)
    series = {}
    for name, own_call, own_put in (("call", a_call, a_put), ("put", a_put, a_call)):
        dsig = np.zeros(n)
        noise = rng.normal(0, 0.1, n)
        for t in range(1, n):
            dsig[t] = (
                0.5 + 2.0 * r[t] + 0.1 * v[t] + own_call * call[t] + own_put * put[t]
                + lag * dsig[t - 1] + noise[t]
            )
        series[name] = dsig
    return pd.DataFrame(
        {
            "delta_iv_call": series["call"],
            "delta_iv_put": series["put"],
            "A_call": call,
            "A_put": put,
            "D_call": (call - put) / 2,
            "V": (call + put) / 2,
            "r": r,
            "v": v,
        },
        index=pd.RangeIndex(n, name="t"),
    )


@pytest.fixture
def planted():
    rng = np.random.default_rng(7)
    categories = {
        Moneyness.ATM: planted_category(rng),
        Moneyness.OTM: planted_category(rng, a_call=1.0, a_put=0.5),
    }
    return StubSeries(categories, split_year=1000)


def test_stars():
    assert [regress.stars(p) for p in (0.003, 0.04, 0.07, 0.5, math.nan, None)] == [
        "***", "**", "*", "", "", ""
    ]


def test_ols_exact_fit():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 2))
    y = 1.0 + 2.0 * x[:, 0] - 3.0 * x[:, 1]
    result = regress.ols_fit(regress.add_constant(x), y)
    assert result.coefficients == pytest.approx([1.0, 2.0, -3.0], abs=1e-10)
    assert result.r_squared == pytest.approx(1.0)
    assert result.columns == ["const", "x1", "x2"]
    assert result.nobs == 50


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(1)
    X = regress.add_constant(rng.normal(size=(200, 3)) * [1.0, 1e3, 1e-3])
    y = X @ [0.3, -1.0, 2e-3, 500.0] + rng.normal(size=200)
    result = regress.ols_fit(X, y)

    beta = np.linalg.solve(X.T @ X, X.T @ y)
    residuals = y - X @ beta
    s2 = residuals @ residuals / (200 - 4)
    classic = np.sqrt(np.diag(np.linalg.inv(X.T @ X)) * s2)
    np.testing.assert_allclose(result.coefficients, beta, rtol=1e-8)
    np.testing.assert_allclose(result.std_errors, classic, rtol=1e-8)
    centred = y - y.mean()
    assert result.r_squared == pytest.approx(1 - residuals @ residuals / (centred @ centred))

    robust = regress.ols_fit(X, y, robust=True)
    bread = np.linalg.inv(X.T @ X)
    meat = (X * residuals[:, None] ** 2).T @ X
    hc1 = bread @ meat @ bread * 200 / (200 - 4)
    np.testing.assert_allclose(robust.std_errors, np.sqrt(np.diag(hc1)), rtol=1e-8)
    np.testing.assert_allclose(robust.coefficients, result.coefficients)


def test_ols_p_values_are_two_sided():
    rng = np.random.default_rng(2)
    x = rng.normal(size=100)
    result = regress.ols_fit(regress.add_constant(x), 0.1 * x + rng.normal(size=100))
    expected = 2 * stats.t.sf(abs(result.t_stats[1]), 98)
    assert result.p_values[1] == pytest.approx(expected)


def random_problem(seed):
    """Seeded OLS problem with n <= 500 rows and k <= 6 regressors."""
    rng = np.random.default_rng(1000 + seed)
    k = int(rng.integers(1, 7))
    n = int(rng.integers(k + 10, 501))
    X = regress.add_constant(rng.normal(size=(n, k)) * rng.uniform(0.1, 10, size=k))
    noise = rng.normal(size=n) * (1 + np.abs(X[:, 1]))
    y = X @ rng.normal(size=k + 1) + noise
    return X, y


@pytest.mark.parametrize("seed", range(200))
def test_ols_random_problems(seed):
    X, y = random_problem(seed)
    n, p = X.shape
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    residuals = y - X @ beta
    bread = np.linalg.inv(X.T @ X)

    result = regress.ols_fit(X, y)
    np.testing.assert_allclose(result.coefficients, beta, rtol=1e-7, atol=1e-10)
    classic = np.sqrt(np.diag(bread) * (residuals @ residuals) / (n - p))
    np.testing.assert_allclose(result.std_errors, classic, rtol=1e-7)
    scale = np.abs(X).max() * np.abs(y).max() * n
    assert np.abs(X.T @ result.residuals).max() < 1e-9 * scale

    robust = regress.ols_fit(X, y, robust=True)
    hc1 = bread @ ((X * residuals[:, None] ** 2).T @ X) @ bread * n / (n - p)
    np.testing.assert_allclose(robust.covariance, hc1, rtol=1e-6, atol=1e-10 * np.abs(hc1).max())
    np.testing.assert_allclose(robust.covariance, robust.covariance.T)
    eigenvalues = np.linalg.eigvalsh(robust.covariance)
    assert eigenvalues.min() >= -1e-10 * max(eigenvalues.max(), 1e-300)


@pytest.mark.parametrize("seed", range(20))
def test_wald_equal_is_symmetric(seed):
    X, y = random_problem(seed)
    if X.shape[1] < 3:
        X = np.column_stack([X, np.random.default_rng(seed).normal(size=len(X))])
    for robust in (False, True):
        result = regress.ols_fit(X, y, robust=robust)
        assert regress.wald_equal(result, 1, 2) == pytest.approx(
            regress.wald_equal(result, 2, 1), rel=1e-12, abs=1e-300
        )
    assert 0 <= result.p_values[1] <= 1


def test_ols_invariances():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(100, 2))
    y = x @ [1.0, -0.5] + rng.normal(size=100)
    base = regress.ols_fit(regress.add_constant(x), y)
    rescaled = regress.ols_fit(regress.add_constant(x * [10.0, 1.0]), y)
    assert rescaled.coefficients[1] == pytest.approx(base.coefficients[1] / 10)
    assert rescaled.t_stats == pytest.approx(base.t_stats)
    shifted = regress.ols_fit(regress.add_constant(x), y + 5.0)
    assert shifted.coefficients[0] == pytest.approx(base.coefficients[0] + 5.0)
    assert shifted.coefficients[1:] == pytest.approx(base.coefficients[1:])
    assert shifted.r_squared == pytest.approx(base.r_squared)


def test_ols_collinear():
    rng = np.random.default_rng(4)
    x = rng.normal(size=30)
    X = regress.add_constant(np.column_stack([x, 2 * x]))
    with pytest.raises(regress.RegressionError, match="collinear"):
        regress.ols_fit(X, rng.normal(size=30), columns=["const", "a", "b"])


@pytest.mark.parametrize(
    "X,y,error",
    [
        (np.ones((3, 3)), np.arange(3.0), regress.InsufficientRowsError),
        (regress.add_constant([1.0, np.nan, 3.0, 4.0]), np.arange(4.0), regress.RegressionError),
        (regress.add_constant([1.0, 2.0, 3.0, 4.0]), np.ones(4), regress.RegressionError),
        (regress.add_constant([1.0, 2.0, 3.0]), np.arange(4.0), regress.RegressionError),
    ],
)
def test_ols_degenerate(X, y, error):
    with pytest.raises(error):
        regress.ols_fit(X, y)


def test_wald_equal():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(500, 2))
    different = regress.ols_fit(regress.add_constant(x), x @ [1.0, 2.0] + rng.normal(size=500))
    assert regress.wald_equal(different, "x1", "x2") < 1e-6
    assert regress.wald_equal(different, 1, 1) == 1.0
    with pytest.raises(regress.RegressionError):
        regress.wald_equal(different, 1, 3)
    with pytest.raises(regress.RegressionError):
        regress.wald_equal(different, "x1", "x9")


def test_result_serialisation():
    rng = np.random.default_rng(6)
    x = rng.normal(size=40)
    spec = RegressionSpec("Predictive", "return_1h", ["x_lag", "y_lag"], years=(2021, 2021))
    result = regress.ols_fit(
        regress.add_constant(np.column_stack([x, x ** 2])), x + rng.normal(size=40),
        columns=["const", "x_lag", "y_lag"], spec=spec,
    )
    again = regress.RegressionResult.from_json(json.dumps(result.to_dict()))
    assert again.columns == result.columns
    assert again.coefficients == pytest.approx(result.coefficients)
    assert again.spec.label == "Predictive return_1h~y_lag 2021"


def test_spec_arity():
    with pytest.raises(regress.RegressionError, match="takes 5 regressors"):
        RegressionSpec("ChenDecomposition", "dsig", ["r", "v"])
    with pytest.raises(regress.RegressionError, match="Unknown regression"):
        RegressionSpec("Probit", "dsig", [])


def test_spec_label():
    spec = RegressionSpec(
        "BollenK", "dsig", ["r", "v", "A_own", "A_atm_put", "dsig_lag"],
        years=(2019, 2021), maturity_bucket="short", tod_slot="us",
        moneyness="OTM", option_type="C", atm_driver="P",
    )
    assert spec.label == "BollenK OTM C ATMP 2019-2021 short us"
    assert RegressionSpec.from_dict(spec.to_dict()).label == spec.label


def test_bollen_atm_recovers_planted_coefficients(planted):
    result = regress.run_bollen_atm(planted, OptionType.Call)
    assert result.columns == ["const", "r", "v", "A_atm_call", "A_atm_put", "dsig_lag"]
    assert result.coefficient("dsig_lag") == pytest.approx(-0.458, abs=0.02)
    assert result.coefficient("A_atm_call") == pytest.approx(3.0, abs=0.02)
    assert result.coefficient("A_atm_put") == pytest.approx(1.0, abs=0.02)
    assert result.significant("dsig_lag", sign=-1)
    assert result.nobs == 1999


def test_bollen_atm_put(planted):
    result = regress.run_bollen_atm(planted, "P")
    assert result.coefficient("A_atm_call") == pytest.approx(1.0, abs=0.02)
    assert result.coefficient("A_atm_put") == pytest.approx(3.0, abs=0.02)


def test_bollen_atm_filters(planted):
    first = regress.run_bollen_atm(planted, "C", years=(2021, 2021))
    assert first.nobs == 999
    us = regress.run_bollen_atm(planted, "C", tod_slot=TodSlot.US)
    assert 600 < us.nobs < 700
    assert us.spec.label == "BollenATM ATM C us"


def test_bollen_k(planted):
    result = regress.run_bollen_k(planted, Moneyness.OTM, OptionType.Call)
    assert result.columns[3:5] == ["A_own", "A_atm_call"]
    assert result.coefficient("A_own") == pytest.approx(1.0, abs=0.05)
    crossed = regress.run_bollen_k(planted, Moneyness.OTM, OptionType.Call, atm_driver="P")
    assert crossed.columns[4] == "A_atm_put"
    with pytest.raises(regress.RegressionError, match="non-ATM"):
        regress.run_bollen_k(planted, Moneyness.ATM, OptionType.Call)


def test_missing_category_is_insufficient(planted):
    with pytest.raises(regress.InsufficientRowsError, match="DITM"):
        regress.run_chen(planted, Moneyness.DITM, OptionType.Call)
    with pytest.raises(regress.InsufficientRowsError):
        regress.run_bollen_atm(planted, "C", maturity_bucket=MaturityBucket.Short)


def test_chen(planted):
    call = regress.run_chen(planted, Moneyness.ATM, OptionType.Call)
    put = regress.run_chen(planted, Moneyness.ATM, OptionType.Put)
    # A_call = V + D and A_put = V - D, so b3 = a3 + a4 and b4 = a3 - a4
    assert call.coefficient("V") == pytest.approx(4.0, abs=0.03)
    assert call.coefficient("D") == pytest.approx(2.0, abs=0.03)
    assert put.coefficient("V") == pytest.approx(4.0, abs=0.03)
    assert put.coefficient("D") == pytest.approx(2.0, abs=0.03)


def test_chen_symmetric_flow_is_collinear():
    rng = np.random.default_rng(8)
    stub = StubSeries({Moneyness.ATM: planted_category(rng, n=300, symmetric=True)})
    with pytest.raises(regress.RegressionError, match="symmetric"):
        regress.run_chen(stub, Moneyness.ATM, OptionType.Call)


def predictive_stub(n=3000, gamma=0.002, width="1h", seed=9):
    rng = np.random.default_rng(seed)
    N = rng.normal(0, 10, n)
    r = np.zeros(n)
    for t in range(1, n):
        r[t] = 0.1 * r[t - 1] + gamma * N[t - 1] + rng.normal(0, 0.01)
    totals = pd.DataFrame(
        {
            "N": N,
            "volume": rng.uniform(1, 2, n),
            "delta_v": rng.normal(size=n),
            "mean_iv": np.nan,
            "delta_iv": rng.normal(size=n),
            "r": r,
            "v": 1.0,
            "rv": np.nan,
            "delta_rv": rng.normal(size=n),
        },
        index=pd.RangeIndex(n, name="t"),
    )
    return StubSeries({}, totals=totals, width=width)


def test_run_predictive():
    result = regress.run_predictive(predictive_stub(), "1h", x="return", y="N")
    assert result.columns == ["const", "x_lag", "y_lag"]
    assert result.coefficient("x_lag") == pytest.approx(0.1, abs=0.04)
    assert result.coefficient("y_lag") == pytest.approx(0.002, abs=2e-4)
    assert result.significant("y_lag", sign=1)
    assert result.spec.label == "Predictive return_1h~y_lag"


def test_run_predictive_no_effect():
    result = regress.run_predictive(predictive_stub(gamma=0.0), "1h", x="iv", y="volume")
    assert result.nobs == 2999
    assert abs(result.t_stats[2]) < 4


@pytest.mark.parametrize(
    "kwargs,match",
    [
        (dict(horizon="2h"), "horizon"),
        (dict(x="price"), "predictive variable"),
        (dict(y="oi"), "predictor"),
        (dict(horizon="1d"), "needs a 24h series"),
    ],
)
def test_run_predictive_arguments(kwargs, match):
    with pytest.raises(regress.RegressionError, match=match):
        regress.run_predictive(predictive_stub(n=50), **kwargs)


def test_run_predictive_empty_series():
    with pytest.raises(regress.InsufficientRowsError):
        regress.run_predictive(StubSeries({}), "1h")


def test_verdict_on_planted(planted):
    results = [
        regress.run_bollen_atm(planted, "C"),
        regress.run_bollen_atm(planted, "P"),
        regress.run_chen(planted, "ATM", "C"),
        regress.run_chen(planted, "ATM", "P"),
    ]
    verdict = regress.evaluate_verdict(results)
    assert verdict.limits_to_arbitrage
    assert verdict.volatility_learning
    assert verdict.directional_learning
    assert verdict.strength_ratio == pytest.approx(2.0, abs=0.05)
    assert verdict.wald_equal_p < 1e-6
    assert verdict.evidence["lag_results"] == 4
    assert verdict.evidence["lag_significant_negative"] == 4
    again = regress.HypothesisVerdict.from_json(verdict.to_json())
    assert again.to_dict() == verdict.to_dict()


def atm_result(a3, a4, se=0.1, lag=-0.5, lag_se=0.1, covariance=0.0, option_type="C"):
    """Hand-built BollenATM result with the given pressure coefficients."""
    columns = ["const", "r", "v", "A_atm_call", "A_atm_put", "dsig_lag"]
    coefficients = np.array([0.0, 0.0, 0.0, a3, a4, lag])
    std_errors = np.array([1.0, 1.0, 1.0, se, se, lag_se])
    t_stats = coefficients / std_errors
    df = 1000 - len(columns)
    cov = np.diag(std_errors ** 2)
    cov[3, 4] = cov[4, 3] = covariance
    spec = RegressionSpec("BollenATM", "dsig", columns[1:], moneyness="ATM",
                          option_type=option_type)
    return regress.RegressionResult(
        columns, coefficients, std_errors, t_stats, 2 * stats.t.sf(np.abs(t_stats), df),
        r_squared=0.5, nobs=1000, covariance=cov, spec=spec,
    )


def test_wald_equal_hand_built():
    assert regress.wald_equal(atm_result(1.0, 1.0), "A_atm_call", "A_atm_put") == 1.0
    # difference 0.2 with variance 0.01 + 0.01 - 2 * 0.005 = 0.01
    p = regress.wald_equal(atm_result(1.2, 1.0, covariance=0.005), 3, 4)
    assert p == pytest.approx(2 * stats.t.sf(2.0, 994))


@pytest.mark.parametrize(
    "a3,a4,expected",
    [
        (1.0, 1.05, True),
        (1.0, 0.05, False),
        (1.0, -1.0, False),
        (0.1, 0.1, False),
    ],
)
def test_verdict_atm_volatility_rule(a3, a4, expected):
    results = [atm_result(a3, a4), atm_result(a3, a4, option_type="P")]
    verdict = regress.evaluate_verdict(results)
    assert verdict.volatility_learning is expected
    assert not verdict.directional_learning
    assert verdict.strength_ratio is None


def test_verdict_lag_majority():
    significant = atm_result(1.0, 1.0, lag=-0.5)
    flat = atm_result(1.0, 1.0, lag=-0.05)
    assert regress.evaluate_verdict([significant, significant, flat]).limits_to_arbitrage
    assert not regress.evaluate_verdict([significant, flat]).limits_to_arbitrage
    positive = atm_result(1.0, 1.0, lag=0.5)
    assert not regress.evaluate_verdict([positive]).limits_to_arbitrage


def test_verdict_needs_lagged_results():
    rng = np.random.default_rng(11)
    x = rng.normal(size=20)
    result = regress.ols_fit(regress.add_constant(x), x + rng.normal(size=20))
    with pytest.raises(regress.RegressionError, match="Missing regression results"):
        regress.evaluate_verdict([result])
    with pytest.raises(regress.RegressionError):
        regress.evaluate_verdict([])


def chen_result(v, d, p_v, p_d, p_lag=0.5, option_type="C"):
    """Hand-built ChenDecomposition result with chosen V, D and lag p-values."""
    columns = ["const", "r", "v", "V", "D", "dsig_lag"]
    coefficients = np.array([0.0, 0.0, 0.0, v, d, -0.1])
    p_values = np.array([0.5, 0.5, 0.5, p_v, p_d, p_lag])
    std_errors = np.ones(len(columns))
    spec = RegressionSpec("ChenDecomposition", "dsig", columns[1:], moneyness="OTM",
                          option_type=option_type)
    return regress.RegressionResult(
        columns, coefficients, std_errors, coefficients / std_errors, p_values,
        r_squared=0.2, nobs=1000, covariance=np.eye(len(columns)), spec=spec,
    )


@pytest.mark.parametrize(
    "v,d,p_v,p_d,expected",
    [
        # volatility demand significant, directional not
        (0.8, 0.1, 0.001, 0.4, (False, True, False)),
        (0.1, 0.8, 0.4, 0.001, (False, False, True)),
        (0.1, 0.1, 0.4, 0.6, (False, False, False)),
        # significant but negative
        (-0.8, -0.8, 0.001, 0.001, (False, False, False)),
    ],
)
def test_verdict_chen_patterns(v, d, p_v, p_d, expected):
    results = [chen_result(v, d, p_v, p_d, option_type=kind) for kind in "CP"]
    verdict = regress.evaluate_verdict(results)
    flags = (verdict.limits_to_arbitrage, verdict.volatility_learning,
             verdict.directional_learning)
    assert flags == expected
    assert verdict.strength_ratio is None


def test_verdict_chen_majority_and_strength():
    both = chen_result(0.9, 0.3, 0.001, 0.01)
    vol_only = chen_result(0.9, 0.3, 0.001, 0.3)
    verdict = regress.evaluate_verdict([both, vol_only, vol_only])
    assert verdict.volatility_learning
    assert not verdict.directional_learning
    assert verdict.strength_ratio == pytest.approx(3.0)
    # the ATM fallback is not used when decomposition results exist
    mixed = regress.evaluate_verdict([atm_result(1.0, 1.05), chen_result(0.1, 0.1, 0.5, 0.5)])
    assert not mixed.volatility_learning


def test_run_predictive_white_noise_false_positive_rate():
    rejected = 0
    seeds = range(100)
    for seed in seeds:
        stub = predictive_stub(n=500, gamma=0.0, seed=seed)
        result = regress.run_predictive(stub, "1h", x="return", y="N")
        rejected += result.p_value("y_lag") < 0.05
    assert rejected <= 0.10 * len(seeds)


def test_run_predictive_zero_predictor_is_collinear():
    stub = predictive_stub(n=200)
    stub._totals["N"] = 0.0
    with pytest.raises(regress.RegressionError, match="rank deficient.*y_lag"):
        regress.run_predictive(stub, "1h", x="return", y="N")
