"""Fixed-effects regression of RCA change on baseline dependency profiles.

The unit of observation is a (country, product) pair over network products.
The outcome is the outcome-window mean RCA minus the baseline-window mean;
covariates are baseline-window means only: the product's own RCA, exposure,
HHI and STR, plus the same indicators and RCA averaged over the product's
direct input products for that country. Controls are cluster-membership and
tier dummies with configurable reference categories. Rows with any
undefined covariate are dropped (complete case, counted).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from reenet.errors import CollinearityError, DataError
from reenet.netbuild import ProductionNetwork

logger = logging.getLogger(__name__)

COVARIATES = (
    "rca",
    "exposure_all",
    "hhi_all",
    "str_all",
    "exposure_inputs",
    "hhi_inputs",
    "str_inputs",
    "rca_inputs",
)


def _window_years(window: tuple[int, int]) -> list[int]:
    start, end = int(window[0]), int(window[1])
    if end < start:
        raise DataError(f"window {window} has end before start")
    return list(range(start, end + 1))


def check_windows(baseline: tuple[int, int], outcome: tuple[int, int]) -> None:
    b_years, o_years = set(_window_years(baseline)), set(_window_years(outcome))
    if b_years & o_years:
        raise DataError(f"windows {baseline} and {outcome} overlap")
    if max(b_years) > min(o_years):
        raise DataError(f"baseline {baseline} must end before outcome {outcome} starts")


def _window_mean(series: pd.Series, years: list[int]) -> float:
    values = series[series.index.isin(years)].dropna()
    if len(values) == 0:
        return np.nan
    return float(values.mean())


def delta_rca(
    panel_or_rca,
    country: str,
    product: str,
    baseline_window: tuple[int, int],
    outcome_window: tuple[int, int],
) -> float:
    """Outcome-window mean RCA minus baseline-window mean; NaN when either
    window has no defined RCA. Accepts a TradePanel or a precomputed RCA
    table (columns country, hs6, year, rca)."""
    check_windows(baseline_window, outcome_window)
    if isinstance(panel_or_rca, pd.DataFrame):
        rca_values = panel_or_rca
    else:
        from reenet.scores import rca_table

        rca_values = rca_table(panel_or_rca)
    mine = rca_values[(rca_values["country"] == country) & (rca_values["hs6"] == product)]
    series = mine.set_index("year")["rca"]
    base = _window_mean(series, _window_years(baseline_window))
    out = _window_mean(series, _window_years(outcome_window))
    if np.isnan(base) or np.isnan(out):
        return np.nan
    return out - base


def baseline_covariates(
    rca_values: pd.DataFrame,
    indicators: pd.DataFrame,
    network: ProductionNetwork,
    baseline_window: tuple[int, int],
    input_aggregation: str = "mean",
    input_weights: pd.DataFrame | None = None,
) -> pd.DataFrame:
    """Baseline-window covariates per (country, networked product).

    Product-level covariates are baseline-window means; input-set covariates
    average over the product's direct input products, with equal weight
    ("mean") or by baseline trade value ("trade-weighted", needing
    ``input_weights`` with columns country, hs6, weight). Rows with any
    undefined covariate, or for products without input products, are
    omitted. Columns: country, hs6, the 8 covariates, tier.
    """
    base_years = _window_years(baseline_window)
    if input_aggregation not in ("mean", "trade-weighted"):
        raise DataError(f"unknown input aggregation: {input_aggregation!r}")
    weight_lookup: dict[tuple[str, str], float] = {}
    if input_aggregation == "trade-weighted":
        if input_weights is None:
            raise DataError("trade-weighted input aggregation needs input_weights")
        weight_lookup = {
            (c, p): float(w)
            for c, p, w in zip(
                input_weights["country"], input_weights["hs6"], input_weights["weight"]
            )
        }

    rca_base = (
        rca_values[rca_values["year"].isin(base_years)]
        .groupby(["country", "hs6"])["rca"]
        .mean()
    )
    ind_base = (
        indicators[indicators["year"].isin(base_years)]
        .groupby(["country", "hs6"])[["exposure", "hhi", "str"]]
        .mean()
    )
    countries = sorted(set(rca_values["country"]))
    rows = []
    for country in countries:
        for product in network.tiered_products():
            inputs = network.predecessors(product)
            if not inputs:
                continue
            base = rca_base.get((country, product), np.nan)
            if np.isnan(base):
                continue
            own = (
                ind_base.loc[(country, product)]
                if (country, product) in ind_base.index
                else None
            )
            if own is None or own.isna().any():
                continue
            agg = _aggregate_inputs(
                country, inputs, ind_base, rca_base, input_aggregation, weight_lookup
            )
            if agg is None:
                continue
            rows.append(
                {
                    "country": country,
                    "hs6": product,
                    "rca": base,
                    "exposure_all": own["exposure"],
                    "hhi_all": own["hhi"],
                    "str_all": own["str"],
                    "exposure_inputs": agg["exposure"],
                    "hhi_inputs": agg["hhi"],
                    "str_inputs": agg["str"],
                    "rca_inputs": agg["rca"],
                    "tier": int(network.tiers[product]),
                }
            )
    return pd.DataFrame(rows, columns=["country", "hs6", *COVARIATES, "tier"])


def build_observations(
    rca_values: pd.DataFrame,
    indicators: pd.DataFrame,
    network: ProductionNetwork,
    modal_clusters: pd.DataFrame,
    baseline_window: tuple[int, int],
    outcome_window: tuple[int, int],
    input_aggregation: str = "mean",
    input_weights: pd.DataFrame | None = None,
) -> tuple[pd.DataFrame, dict]:
    """Regression observations: baseline covariates joined with the outcome
    delta and the country's modal cluster. Complete-case: rows with an
    undefined outcome or covariate are dropped and counted; countries with
    no or outlier (-1) modal cluster drop too. Returns (observations,
    drop report)."""
    check_windows(baseline_window, outcome_window)
    covariates = baseline_covariates(
        rca_values, indicators, network, baseline_window, input_aggregation, input_weights
    )
    base_years = _window_years(baseline_window)
    out_years = _window_years(outcome_window)
    rca_base = (
        rca_values[rca_values["year"].isin(base_years)]
        .groupby(["country", "hs6"])["rca"]
        .mean()
    )
    rca_out = (
        rca_values[rca_values["year"].isin(out_years)]
        .groupby(["country", "hs6"])["rca"]
        .mean()
    )
    clusters = dict(zip(modal_clusters["country"], modal_clusters["modal_label"]))

    n_countries = len(set(rca_values["country"]))
    report = {
        "n_candidates": n_countries * len(network.tiered_products()),
        "dropped_incomplete_covariates": 0,
        "dropped_undefined_outcome": 0,
        "dropped_outlier_cluster": 0,
        "dropped_no_cluster": 0,
    }
    report["dropped_incomplete_covariates"] = report["n_candidates"] - len(covariates)
    rows = []
    for record in covariates.to_dict("records"):
        key = (record["country"], record["hs6"])
        cluster = clusters.get(record["country"])
        if cluster is None:
            report["dropped_no_cluster"] += 1
            continue
        if cluster == -1:
            report["dropped_outlier_cluster"] += 1
            continue
        out = rca_out.get(key, np.nan)
        if np.isnan(out):
            report["dropped_undefined_outcome"] += 1
            continue
        record["delta_rca"] = float(out - rca_base[key])
        record["cluster"] = int(cluster)
        rows.append(record)
    observations = pd.DataFrame(
        rows,
        columns=["country", "hs6", "delta_rca", *COVARIATES, "cluster", "tier"],
    )
    dropped = report["n_candidates"] - len(observations)
    if dropped:
        logger.info(
            "dropped %d/%d candidate observations: %s",
            dropped,
            report["n_candidates"],
            report,
        )
    return observations, report


def _aggregate_inputs(
    country: str,
    inputs: tuple[str, ...],
    ind_base: pd.DataFrame,
    rca_base: pd.Series,
    how: str,
    weight_lookup: dict[tuple[str, str], float],
) -> dict | None:
    """Average the baseline indicator triple and RCA over a product's input
    products; None when any of the four has no defined contribution."""
    metrics = {"exposure": ([], []), "hhi": ([], []), "str": ([], []), "rca": ([], [])}
    for q in inputs:
        weight = 1.0 if how == "mean" else weight_lookup.get((country, q), 0.0)
        if weight <= 0.0:
            continue
        if (country, q) in ind_base.index:
            row = ind_base.loc[(country, q)]
            for name in ("exposure", "hhi", "str"):
                if not np.isnan(row[name]):
                    values, weights = metrics[name]
                    values.append(float(row[name]))
                    weights.append(weight)
        rca_q = rca_base.get((country, q), np.nan)
        if not np.isnan(rca_q):
            values, weights = metrics["rca"]
            values.append(float(rca_q))
            weights.append(weight)
    out = {}
    for name, (values, weights) in metrics.items():
        if not values:
            return None
        out[name] = float(np.average(values, weights=weights))
    return out


def _dummies(values: pd.Series, prefix: str, reference: int) -> pd.DataFrame:
    present = sorted(values.unique())
    if reference not in present:
        fallback = present[0]
        logger.warning(
            "%s reference %s absent from observations; using %s", prefix, reference, fallback
        )
        reference = fallback
    columns = {}
    for level in present:
        if level == reference:
            continue
        columns[f"{prefix}_{level}"] = (values == level).astype(float)
    return pd.DataFrame(columns, index=values.index)


def build_design(
    observations: pd.DataFrame,
    ref_cluster: int = 1,
    ref_tier: int = 0,
) -> tuple[pd.DataFrame, pd.Series]:
    """Design matrix: intercept, the 8 covariates, cluster dummies and tier
    dummies with the configured reference categories omitted. Raises on
    collinearity, naming the first dependent column."""
    if len(observations) == 0:
        raise DataError("no regression observations survived filtering")
    X = pd.DataFrame({"const": np.ones(len(observations))}, index=observations.index)
    for cov in COVARIATES:
        X[cov] = observations[cov].astype(float)
    X = pd.concat(
        [
            X,
            _dummies(observations["cluster"], "cluster", ref_cluster),
            _dummies(observations["tier"], "tier", ref_tier),
        ],
        axis=1,
    )
    if len(X) < X.shape[1] + 5:
        raise DataError(
            f"need >= {X.shape[1] + 5} observations for {X.shape[1]} terms, got {len(X)}"
        )
    matrix = X.to_numpy(dtype=float)
    rank = 0
    for j in range(matrix.shape[1]):
        new_rank = np.linalg.matrix_rank(matrix[:, : j + 1])
        if new_rank == rank:
            raise CollinearityError(X.columns[j])
        rank = new_rank
    y = observations["delta_rca"].astype(float)
    return X, y


@dataclass
class RegressionResult:
    terms: list[str]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_statistics: np.ndarray
    p_values: np.ndarray
    n_obs: int
    r_squared: float
    se_type: str
    reference: dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "term": self.terms,
                "coef": self.coefficients,
                "se": self.standard_errors,
                "t": self.t_statistics,
                "p": self.p_values,
            }
        )


def ols_fit(design: pd.DataFrame, response: pd.Series, se_type: str = "robust") -> RegressionResult:
    """Least squares with heteroskedasticity-robust (HC1) standard errors by
    default; ``se_type="classical"`` for homoskedastic errors. Rows are
    sorted canonically before solving so results do not depend on
    observation order."""
    if se_type not in ("robust", "classical"):
        raise DataError(f"unknown se_type: {se_type!r}")
    terms = list(design.columns)
    data = np.column_stack([design.to_numpy(dtype=float), response.to_numpy(dtype=float)])
    data = data[np.lexsort(data.T[::-1])]
    X, y = data[:, :-1], data[:, -1]
    n, k = X.shape
    if n <= k:
        raise DataError(f"need more observations ({n}) than terms ({k})")

    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < k:
        raise CollinearityError(terms[int(rank)])
    residuals = y - X @ coef
    xtx_inv = np.linalg.inv(X.T @ X)
    if se_type == "classical":
        sigma2 = float(residuals @ residuals) / (n - k)
        cov = sigma2 * xtx_inv
    else:
        meat = (X * residuals[:, None] ** 2).T @ X
        cov = xtx_inv @ meat @ xtx_inv * (n / (n - k))
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = coef / se
    p_values = 2.0 * stats.t.sf(np.abs(t_stats), df=n - k)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(residuals @ residuals) / tss if tss > 0.0 else np.nan
    return RegressionResult(terms, coef, se, t_stats, p_values, n, r2, se_type)


def window_sweep(
    rca_values: pd.DataFrame,
    indicators: pd.DataFrame,
    network: ProductionNetwork,
    modal_clusters: pd.DataFrame,
    baseline_windows: list[tuple[int, int]],
    outcome_windows: list[tuple[int, int]],
    min_gap: int = 4,
    se_type: str = "robust",
    ref_cluster: int = 1,
    ref_tier: int = 0,
) -> pd.DataFrame:
    """One regression per (baseline, outcome) window pair with at least
    ``min_gap`` years between them; per-pair failures become error rows,
    never aborting the sweep. Columns: baseline_window, outcome_window,
    term, coef, se, p, sign, error."""
    rows = []
    for baseline in baseline_windows:
        for outcome in outcome_windows:
            tag_b = f"{baseline[0]}-{baseline[1]}"
            tag_o = f"{outcome[0]}-{outcome[1]}"
            if outcome[0] - baseline[1] < min_gap:
                continue
            try:
                check_windows(baseline, outcome)
                obs, _ = build_observations(
                    rca_values, indicators, network, modal_clusters, baseline, outcome
                )
                X, y = build_design(obs, ref_cluster=ref_cluster, ref_tier=ref_tier)
                result = ols_fit(X, y, se_type=se_type)
            except Exception as exc:  # noqa: BLE001 - per-pair errors become rows
                rows.append(
                    {
                        "baseline_window": tag_b,
                        "outcome_window": tag_o,
                        "term": "",
                        "coef": np.nan,
                        "se": np.nan,
                        "p": np.nan,
                        "sign": "",
                        "error": str(exc),
                    }
                )
                continue
            for term, coef, se, p in zip(
                result.terms, result.coefficients, result.standard_errors, result.p_values
            ):
                rows.append(
                    {
                        "baseline_window": tag_b,
                        "outcome_window": tag_o,
                        "term": term,
                        "coef": coef,
                        "se": se,
                        "p": p,
                        "sign": "+" if coef > 0 else "-",
                        "error": "",
                    }
                )
    return pd.DataFrame(
        rows,
        columns=["baseline_window", "outcome_window", "term", "coef", "se", "p", "sign", "error"],
    )


def sign_stability(sweep: pd.DataFrame, alpha: float = 0.05) -> pd.DataFrame:
    """Per-covariate sign consistency across sweep cells: the share of
    estimable cells with a positive coefficient and with a significant
    coefficient of the modal sign."""
    rows = []
    fitted = sweep[(sweep["error"] == "") & sweep["term"].isin(COVARIATES)]
    for term, group in fitted.groupby("term", sort=True):
        positive = (group["coef"] > 0).mean()
        modal_sign = "+" if positive >= 0.5 else "-"
        significant = (
            (group["sign"] == modal_sign) & (group["p"] < alpha)
        ).mean()
        rows.append(
            {
                "term": term,
                "n_cells": len(group),
                "frac_positive": positive,
                "modal_sign": modal_sign,
                "frac_significant_modal": significant,
            }
        )
    return pd.DataFrame(
        rows, columns=["term", "n_cells", "frac_positive", "modal_sign", "frac_significant_modal"]
    )
