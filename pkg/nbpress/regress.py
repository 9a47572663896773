"""Least squares engine, the pressure regressions and hypothesis verdicts.

Four regression families are fitted on PressureSeries data:

Predictive
    x_t = g0 + g1 x_{t-1} + g2 y_{t-1}
BollenATM
    dsig^ATM_j = a0 + a1 r + a2 v + a3 A^ATM_C + a4 A^ATM_P + a5 dsig_lag
BollenK
    dsig^k_j = a0 + a1 r + a2 v + a3 A^k_j + a4 A^ATM_i + a5 dsig_lag
ChenDecomposition
    dsig^k_j = b0 + b1 r + b2 v + b3 V^k + b4 D^k_j + b5 dsig_lag
"""

import logging
import math

import numpy as np

from scipy import linalg, stats

from nbpress.models import MaturityBucket, Moneyness, OptionType, Serialiser, TodSlot


LOG = logging.getLogger(__name__)


class RegressionError(ValueError):
    """A regression could not be fitted (degenerate design or data)."""


class InsufficientRowsError(RegressionError):
    """Too few complete observations for the requested regression."""


SPEC_NAMES = ("Predictive", "BollenATM", "BollenK", "ChenDecomposition")

ARITY = {
    "Predictive": 2,
    "BollenATM": 5,
    "BollenK": 5,
    "ChenDecomposition": 5,
}

# Predictive horizon -> interval width of the series it is fitted on
HORIZONS = {"1h": "1h", "1d": "24h", "5d": "5d"}
PREDICTORS = {"return": "r", "iv": "delta_iv", "rv": "delta_rv"}
TARGETS = {"volume": "delta_v", "N": "N"}

STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.10, "*"))

# Wald test level below which a3 = a4 is rejected in the ATM volatility rule
WALD_LEVEL = 0.10


def stars(p_value):
    """Significance stars for a two-sided p-value.

    >>> stars(0.003), stars(0.04), stars(0.07), stars(0.5)
    ('***', '**', '*', '')
    """
    if p_value is None or not math.isfinite(p_value):
        return ""
    for level, mark in STAR_LEVELS:
        if p_value < level:
            return mark
    return ""


class RegressionSpec(Serialiser):
    """One regression: family, dependent series, regressors and sample filter.

    Attributes:
        name (str): One of SPEC_NAMES.
        dependent (str): Dependent series id.
        regressors (list): Ordered regressor series ids (intercept excluded).
        years (tuple): Inclusive (first, last) year range, or None for all.
        maturity_bucket (MaturityBucket): Maturity filter.
        tod_slot (TodSlot): Time-of-day filter (interval start).
        moneyness (Moneyness): Category k, if any.
        option_type (OptionType): Type j, if any.
        atm_driver (OptionType): ATM type i for BollenK.
    """

    def __init__(
        self,
        name,
        dependent,
        regressors,
        years=None,
        maturity_bucket=MaturityBucket.All,
        tod_slot=TodSlot.All,
        moneyness=None,
        option_type=None,
        atm_driver=None,
    ):
        if name not in SPEC_NAMES:
            raise RegressionError(f"Unknown regression '{name}'")
        if len(regressors) != ARITY[name]:
            raise RegressionError(
                f"{name} takes {ARITY[name]} regressors, got {len(regressors)}"
            )
        self.name = name
        self.dependent = dependent
        self.regressors = list(regressors)
        self.years = tuple(years) if years else None
        self.maturity_bucket = MaturityBucket(maturity_bucket)
        self.tod_slot = TodSlot(tod_slot)
        self.moneyness = Moneyness(moneyness) if moneyness else None
        self.option_type = OptionType(option_type) if option_type else None
        self.atm_driver = OptionType(atm_driver) if atm_driver else None

    def __repr__(self):
        return f"RegressionSpec({self.label})"

    @property
    def label(self):
        parts = [self.name]
        if self.moneyness:
            parts.append(self.moneyness.value)
        if self.option_type:
            parts.append(self.option_type.value)
        if self.atm_driver:
            parts.append(f"ATM{self.atm_driver.value}")
        if self.name == "Predictive":
            parts.append(f"{self.dependent}~{self.regressors[1]}")
        if self.years:
            first, last = self.years
            parts.append(str(first) if first == last else f"{first}-{last}")
        if self.maturity_bucket is not MaturityBucket.All:
            parts.append(self.maturity_bucket.value)
        if self.tod_slot is not TodSlot.All:
            parts.append(self.tod_slot.value)
        return " ".join(parts)

    def to_dict(self):
        return {
            "name": self.name,
            "dependent": self.dependent,
            "regressors": list(self.regressors),
            "years": list(self.years) if self.years else None,
            "maturity_bucket": self.maturity_bucket.value,
            "tod_slot": self.tod_slot.value,
            "moneyness": self.moneyness.value if self.moneyness else None,
            "option_type": self.option_type.value if self.option_type else None,
            "atm_driver": self.atm_driver.value if self.atm_driver else None,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class RegressionResult(Serialiser):
    """Fitted OLS regression.

    The first coefficient is the intercept ``const``; the remaining ones
    follow ``columns``.
    """

    def __init__(
        self,
        columns,
        coefficients,
        std_errors,
        t_stats,
        p_values,
        r_squared,
        nobs,
        covariance,
        residuals=None,
        robust=False,
        spec=None,
    ):
        self.columns = list(columns)
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.std_errors = np.asarray(std_errors, dtype=float)
        self.t_stats = np.asarray(t_stats, dtype=float)
        self.p_values = np.asarray(p_values, dtype=float)
        self.r_squared = r_squared
        self.nobs = nobs
        self.covariance = np.asarray(covariance, dtype=float)
        self.residuals = np.asarray(residuals if residuals is not None else [], dtype=float)
        self.robust = robust
        self.spec = spec

    def __repr__(self):
        label = self.spec.label if self.spec else "OLS"
        return f"RegressionResult({label}, nobs={self.nobs}, r2={self.r_squared:.4f})"

    @property
    def df_resid(self):
        return self.nobs - len(self.columns)

    @property
    def stars(self):
        return [stars(p) for p in self.p_values]

    def index(self, column):
        if isinstance(column, (int, np.integer)):
            if not 0 <= column < len(self.columns):
                raise RegressionError(
                    f"Coefficient index {column} out of range 0..{len(self.columns) - 1}"
                )
            return int(column)
        try:
            return self.columns.index(column)
        except ValueError:
            raise RegressionError(f"No coefficient named '{column}'") from None

    def coefficient(self, column):
        return float(self.coefficients[self.index(column)])

    def p_value(self, column):
        return float(self.p_values[self.index(column)])

    def significant(self, column, alpha=0.05, sign=0):
        """True if the coefficient is significant at alpha with the given sign."""
        i = self.index(column)
        if not self.p_values[i] < alpha:
            return False
        return sign == 0 or np.sign(self.coefficients[i]) == sign

    def to_dict(self, residuals=False):
        d = {
            "spec": self.spec.to_dict() if self.spec else None,
            "columns": self.columns,
            "coefficients": self.coefficients.tolist(),
            "std_errors": self.std_errors.tolist(),
            "t_stats": self.t_stats.tolist(),
            "p_values": self.p_values.tolist(),
            "stars": self.stars,
            "r_squared": self.r_squared,
            "nobs": self.nobs,
            "covariance": self.covariance.tolist(),
            "robust": self.robust,
        }
        if residuals:
            d["residuals"] = self.residuals.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        spec = d.get("spec")
        return cls(
            columns=d["columns"],
            coefficients=d["coefficients"],
            std_errors=d["std_errors"],
            t_stats=d["t_stats"],
            p_values=d["p_values"],
            r_squared=d["r_squared"],
            nobs=d["nobs"],
            covariance=d["covariance"],
            residuals=d.get("residuals"),
            robust=d.get("robust", False),
            spec=RegressionSpec.from_dict(spec) if spec else None,
        )


def add_constant(matrix):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    return np.column_stack([np.ones(len(matrix)), matrix])


def ols_fit(design, y, columns=None, robust=False, spec=None):
    """Ordinary least squares via a column-equilibrated pivoted QR.

    Parameters:
        design: (n, p) matrix including the intercept column.
        y: (n,) dependent vector.
        columns (list): Column names (default const, x1, x2, ...).
        robust (bool): White heteroskedasticity-consistent (HC1) errors
            instead of classical ones.
        spec (RegressionSpec): Attached to the result.
    Returns:
        RegressionResult
    Raises:
        InsufficientRowsError: nobs <= number of columns.
        RegressionError: non-finite data, zero-variance dependent variable,
            or a rank-deficient design (the collinear columns are named).
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise RegressionError(f"Design {X.shape} does not match dependent {y.shape}")
    n, p = X.shape
    if columns is None:
        columns = ["const"] + [f"x{i}" for i in range(1, p)]
    if len(columns) != p:
        raise RegressionError(f"Expected {p} column names, got {len(columns)}")
    if n <= p:
        raise InsufficientRowsError(f"{n} observations for {p} coefficients")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise RegressionError("Design or dependent variable has non-finite values")
    if np.ptp(y) == 0:
        raise RegressionError("Dependent variable has zero variance")

    norms = np.sqrt((X ** 2).sum(axis=0))
    zero = norms == 0
    norms[zero] = 1.0
    scaled = X / norms

    Q, R, pivot = linalg.qr(scaled, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(R))
    tolerance = max(n, p) * np.finfo(float).eps * diagonal[0]
    rank = int((diagonal > tolerance).sum())
    if rank < p:
        collinear = sorted(columns[i] for i in pivot[rank:])
        raise RegressionError(
            "Design matrix is rank deficient; collinear column(s): " + ", ".join(collinear)
        )

    R_inv = linalg.solve_triangular(R, np.eye(p))
    beta_scaled = np.empty(p)
    beta_scaled[pivot] = R_inv @ (Q.T @ y)
    inverse_scaled = np.empty((p, p))
    inverse_scaled[np.ix_(pivot, pivot)] = R_inv @ R_inv.T

    coefficients = beta_scaled / norms
    residuals = y - X @ coefficients
    ssr = float(residuals @ residuals)
    df = n - p
    if robust:
        meat = (scaled * residuals[:, None] ** 2).T @ scaled
        covariance_scaled = inverse_scaled @ meat @ inverse_scaled * (n / df)
    else:
        covariance_scaled = inverse_scaled * (ssr / df)
    covariance = covariance_scaled / np.outer(norms, norms)

    std_errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = coefficients / std_errors
    p_values = 2 * stats.t.sf(np.abs(t_stats), df)

    centred = y - y.mean()
    r_squared = min(max(1.0 - ssr / float(centred @ centred), 0.0), 1.0)

    result = RegressionResult(
        columns=columns,
        coefficients=coefficients,
        std_errors=std_errors,
        t_stats=t_stats,
        p_values=p_values,
        r_squared=r_squared,
        nobs=n,
        covariance=covariance,
        residuals=residuals,
        robust=robust,
        spec=spec,
    )
    LOG.debug("Fitted %r", result)
    return result


def wald_equal(result, index_a, index_b):
    """Two-sided p-value for equality of two coefficients.

    Raises:
        RegressionError: index out of range or unknown column name.
    """
    a = result.index(index_a)
    b = result.index(index_b)
    if a == b:
        return 1.0
    difference = result.coefficients[a] - result.coefficients[b]
    cov = result.covariance
    variance = cov[a, a] + cov[b, b] - 2 * cov[a, b]
    if not variance > 0:
        return 1.0 if difference == 0 else 0.0
    statistic = abs(difference) / math.sqrt(variance)
    return float(2 * stats.t.sf(statistic, result.df_resid))


def _fit_frame(frame, dependent, regressors, spec, robust):
    """Listwise-delete missing values and fit dependent on regressors."""
    data = frame[[dependent] + regressors].replace([np.inf, -np.inf], np.nan).dropna()
    if len(data) <= len(regressors) + 1:
        raise InsufficientRowsError(
            f"{spec.label}: {len(data)} complete observation(s) for "
            f"{len(regressors) + 1} coefficients"
        )
    result = ols_fit(
        add_constant(data[regressors].to_numpy(dtype=float)),
        data[dependent].to_numpy(dtype=float),
        columns=["const"] + list(regressors),
        robust=robust,
        spec=spec,
    )
    LOG.info("%s: nobs=%i, R2=%.4f", spec.label, result.nobs, result.r_squared)
    return result


def _filter_rows(series, frame, years=None, tod_slot=TodSlot.All):
    t = frame.index.to_numpy()
    mask = np.ones(len(frame), dtype=bool)
    if years:
        first, last = years
        year = series.years(t)
        mask &= (year >= first) & (year <= last)
    tod_slot = TodSlot(tod_slot)
    if tod_slot is not TodSlot.All:
        mask &= series.tod_slots(t) == tod_slot.value
    return frame[mask]


def _category(series, moneyness, maturity_bucket, label):
    try:
        return series.category_frame(moneyness, maturity_bucket, TodSlot.All)
    except KeyError as exc:
        raise InsufficientRowsError(f"{label}: {exc.args[0]}") from None


def _type_column(option_type):
    option_type = OptionType(option_type)
    if option_type not in (OptionType.Call, OptionType.Put):
        raise RegressionError("Option type must be Call or Put")
    return "call" if option_type is OptionType.Call else "put"


def _iv_columns(frame, option_type):
    name = _type_column(option_type)
    return frame[f"delta_iv_{name}"], frame[f"delta_iv_{name}"].shift(1)


def run_predictive(
    series, horizon="1h", x="return", y="N", years=None, robust=False
):
    """Predictive regression x_t = g0 + g1 x_{t-1} + g2 y_{t-1}.

    Parameters:
        series (PressureSeries): Built at the horizon's width (HORIZONS).
        horizon (str): '1h', '1d' or '5d'.
        x (str): 'return', 'iv' or 'rv'.
        y (str): 'volume' or 'N'.
    """
    if horizon not in HORIZONS:
        raise RegressionError(f"Unknown horizon '{horizon}'")
    if x not in PREDICTORS:
        raise RegressionError(f"Unknown predictive variable '{x}'")
    if y not in TARGETS:
        raise RegressionError(f"Unknown predictor '{y}'")
    if series.width != HORIZONS[horizon]:
        raise RegressionError(
            f"Horizon {horizon} needs a {HORIZONS[horizon]} series, got {series.width}"
        )
    spec = RegressionSpec(
        "Predictive", f"{x}_{horizon}", ["x_lag", "y_lag"], years=years
    )
    if series.empty:
        raise InsufficientRowsError(f"{spec.label}: empty series")
    totals = series.totals()
    frame = totals.assign(
        x=totals[PREDICTORS[x]],
        x_lag=totals[PREDICTORS[x]].shift(1),
        y_lag=totals[TARGETS[y]].shift(1),
    )
    frame = _filter_rows(series, frame, years)
    return _fit_frame(frame.rename(columns={"x": spec.dependent}), spec.dependent,
                      spec.regressors, spec, robust)


def run_bollen_atm(
    series,
    option_type,
    years=None,
    maturity_bucket=MaturityBucket.All,
    tod_slot=TodSlot.All,
    robust=False,
):
    """ATM IV changes on returns, spot volume, both ATM pressures and the lag."""
    regressors = ["r", "v", "A_atm_call", "A_atm_put", "dsig_lag"]
    spec = RegressionSpec(
        "BollenATM", "dsig", regressors, years=years,
        maturity_bucket=maturity_bucket, tod_slot=tod_slot,
        moneyness=Moneyness.ATM, option_type=option_type,
    )
    atm = _category(series, Moneyness.ATM, maturity_bucket, spec.label)
    dsig, lag = _iv_columns(atm, option_type)
    frame = atm.assign(
        dsig=dsig, dsig_lag=lag, A_atm_call=atm["A_call"], A_atm_put=atm["A_put"]
    )
    frame = _filter_rows(series, frame, years, tod_slot)
    return _fit_frame(frame, "dsig", regressors, spec, robust)


def run_bollen_k(
    series,
    moneyness,
    option_type,
    atm_driver=None,
    years=None,
    maturity_bucket=MaturityBucket.All,
    tod_slot=TodSlot.All,
    robust=False,
):
    """IV changes of category k on its own pressure and an ATM pressure.

    atm_driver is the ATM option type whose pressure enters as the fourth
    regressor (default: the same type as the dependent series).
    """
    moneyness = Moneyness(moneyness)
    if moneyness in (Moneyness.ATM, Moneyness.Excluded):
        raise RegressionError("BollenK needs a non-ATM moneyness category")
    atm_driver = OptionType(atm_driver or option_type)
    driver = f"A_atm_{_type_column(atm_driver)}"
    regressors = ["r", "v", "A_own", driver, "dsig_lag"]
    spec = RegressionSpec(
        "BollenK", "dsig", regressors, years=years,
        maturity_bucket=maturity_bucket, tod_slot=tod_slot,
        moneyness=moneyness, option_type=option_type, atm_driver=atm_driver,
    )
    own = _category(series, moneyness, maturity_bucket, spec.label)
    atm = _category(series, Moneyness.ATM, maturity_bucket, spec.label)
    dsig, lag = _iv_columns(own, option_type)
    frame = own.assign(
        dsig=dsig,
        dsig_lag=lag,
        A_own=own[f"A_{_type_column(option_type)}"],
    )
    frame[driver] = atm[f"A_{_type_column(atm_driver)}"]
    frame = _filter_rows(series, frame, years, tod_slot)
    return _fit_frame(frame, "dsig", regressors, spec, robust)


def run_chen(
    series,
    moneyness,
    option_type,
    years=None,
    maturity_bucket=MaturityBucket.All,
    tod_slot=TodSlot.All,
    robust=False,
):
    """IV changes of category k on volatility (V) and directional (D) demand.

    D is D_call for calls and D_put = -D_call for puts.
    """
    moneyness = Moneyness(moneyness)
    regressors = ["r", "v", "V", "D", "dsig_lag"]
    spec = RegressionSpec(
        "ChenDecomposition", "dsig", regressors, years=years,
        maturity_bucket=maturity_bucket, tod_slot=tod_slot,
        moneyness=moneyness, option_type=option_type,
    )
    own = _category(series, moneyness, maturity_bucket, spec.label)
    dsig, lag = _iv_columns(own, option_type)
    sign = 1.0 if OptionType(option_type) is OptionType.Call else -1.0
    frame = own.assign(dsig=dsig, dsig_lag=lag, D=sign * own["D_call"])
    frame = _filter_rows(series, frame, years, tod_slot)
    try:
        return _fit_frame(frame, "dsig", regressors, spec, robust)
    except InsufficientRowsError:
        raise
    except RegressionError as exc:
        if "collinear" in str(exc) and "D" in str(exc).split(": ")[-1].split(", "):
            raise RegressionError(
                f"{spec.label}: {exc}. Call and put pressures are symmetric in this "
                "sample so directional demand D is identically zero; use the BollenATM "
                "or BollenK regressions, or a sample with asymmetric call/put flow"
            ) from None
        raise


class HypothesisVerdict(Serialiser):
    """Verdicts on the limits-to-arbitrage and learning hypotheses.

    Attributes:
        limits_to_arbitrage (bool)
        volatility_learning (bool)
        directional_learning (bool)
        wald_equal_p (float): p-value of a3 = a4 in the first ATM regression.
        strength_ratio (float): b3 / b4 where both are significant, else None.
        alpha (float): Significance level used.
        evidence (dict): Counts and driver statistics behind each verdict.
    """

    def __init__(
        self,
        limits_to_arbitrage=False,
        volatility_learning=False,
        directional_learning=False,
        wald_equal_p=None,
        strength_ratio=None,
        alpha=0.05,
        evidence=None,
    ):
        self.limits_to_arbitrage = limits_to_arbitrage
        self.volatility_learning = volatility_learning
        self.directional_learning = directional_learning
        self.wald_equal_p = wald_equal_p
        self.strength_ratio = strength_ratio
        self.alpha = alpha
        self.evidence = evidence if evidence else {}

    def __repr__(self):
        return (
            f"HypothesisVerdict(limits={self.limits_to_arbitrage}, "
            f"volatility={self.volatility_learning}, "
            f"directional={self.directional_learning})"
        )

    @staticmethod
    def label(supported):
        return "supported" if supported else "not supported"

    def to_dict(self):
        return {
            "limits_to_arbitrage": self.label(self.limits_to_arbitrage),
            "volatility_learning": self.label(self.volatility_learning),
            "directional_learning": self.label(self.directional_learning),
            "wald_equal_p": self.wald_equal_p,
            "strength_ratio": self.strength_ratio,
            "alpha": self.alpha,
            "evidence": self.evidence,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            limits_to_arbitrage=d["limits_to_arbitrage"] == "supported",
            volatility_learning=d["volatility_learning"] == "supported",
            directional_learning=d["directional_learning"] == "supported",
            wald_equal_p=d.get("wald_equal_p"),
            strength_ratio=d.get("strength_ratio"),
            alpha=d.get("alpha", 0.05),
            evidence=d.get("evidence"),
        )


def _name(result):
    return result.spec.name if result.spec else None


def evaluate_verdict(results, alpha=0.05):
    """Apply the hypothesis rules to a set of fitted regressions.

    - limits_to_arbitrage: the lagged IV change coefficient is significantly
      negative in a strict majority of the results that carry it.
    - volatility_learning: V is significantly positive in a strict majority
      of the Chen results;
      without Chen results, both ATM pressures are positive, at least one is
      significant and a3 = a4 is not rejected at the 10% level.
    - directional_learning: D is significantly positive in a strict majority
      of the Chen results.
    - strength_ratio: b3 / b4 of the first Chen result where both pass.

    Raises:
        RegressionError: No result carries a lagged IV change.
    """
    results = list(results)
    lagged = [r for r in results if "dsig_lag" in r.columns]
    if not lagged:
        raise RegressionError(
            "Missing regression results: need at least one of BollenATM, BollenK, "
            "ChenDecomposition"
        )
    negative = sum(r.significant("dsig_lag", alpha, sign=-1) for r in lagged)
    limits = 2 * negative > len(lagged)

    chen = [r for r in results if _name(r) == "ChenDecomposition"]
    atm = [r for r in results if _name(r) == "BollenATM"]
    volatility_hits = [r for r in chen if r.significant("V", alpha, sign=1)]
    directional_hits = [r for r in chen if r.significant("D", alpha, sign=1)]

    wald_p = None
    if atm:
        wald_p = wald_equal(atm[0], "A_atm_call", "A_atm_put")

    if chen:
        volatility = 2 * len(volatility_hits) > len(chen)
    else:
        volatility = False
        for result in atm:
            a3 = result.coefficient("A_atm_call")
            a4 = result.coefficient("A_atm_put")
            one_significant = result.p_value("A_atm_call") < alpha or result.p_value(
                "A_atm_put"
            ) < alpha
            if (
                a3 > 0
                and a4 > 0
                and one_significant
                and wald_equal(result, "A_atm_call", "A_atm_put") >= WALD_LEVEL
            ):
                volatility = True
                break

    strength_ratio = None
    for result in chen:
        if result in volatility_hits and result in directional_hits:
            strength_ratio = result.coefficient("V") / result.coefficient("D")
            break

    evidence = {
        "lag_results": len(lagged),
        "lag_significant_negative": int(negative),
        "chen_results": len(chen),
        "volatility_significant": [r.spec.label for r in volatility_hits],
        "directional_significant": [r.spec.label for r in directional_hits],
    }
    verdict = HypothesisVerdict(
        limits_to_arbitrage=limits,
        volatility_learning=volatility,
        directional_learning=2 * len(directional_hits) > len(chen) if chen else False,
        wald_equal_p=wald_p,
        strength_ratio=strength_ratio,
        alpha=alpha,
        evidence=evidence,
    )
    LOG.info("Verdict: %r", verdict)
    return verdict
