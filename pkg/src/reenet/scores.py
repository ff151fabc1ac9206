"""Composite dependency scores, revealed comparative advantage, strengths.

RCA follows the Balassa index on export values: a country's export share in
a product relative to the world's share. A product is a comparative strength
when its time-averaged RCA exceeds 1 (mean rule; a majority-of-years rule is
available). A country's input products are the direct network predecessors
of its strengths. The composite is the first principal component of the
standardized (exposure, hhi, str) triple, oriented so the exposure loading
is non-negative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from reenet.errors import RankDeficientError
from reenet.indicators import IndicatorPanel
from reenet.ingest import TradePanel
from reenet.netbuild import ProductionNetwork

logger = logging.getLogger(__name__)

PCA_INDICATORS = ("exposure", "hhi", "str")


def rca(panel: TradePanel, country: str, product: str, year: int) -> float:
    """Balassa index; NaN when the country exports nothing that year or the
    world exports none of the product. A country exporting none of a product
    it could export has RCA 0, which is defined."""
    exports = panel.exports_cpt()
    x_c = float(exports.groupby(level=[0, 2]).sum().get((country, year), 0.0))
    by_product = exports.groupby(level=[1, 2]).sum()
    x_wp = float(by_product.get((product, year), 0.0))
    if x_c <= 0.0 or x_wp <= 0.0:
        return np.nan
    x_w = float(by_product.xs(year, level=1).sum())
    x_cp = float(exports.get((country, product, year), 0.0))
    return (x_cp / x_c) / (x_wp / x_w)


def rca_table(panel: TradePanel, years: list[int] | None = None) -> pd.DataFrame:
    """RCA for every (country, product, year) cell where it is defined,
    rectangularized within each year so zero-export cells appear with RCA 0.
    Columns: country, hs6, year, rca."""
    exports = panel.exports_cpt().rename("x_cp").reset_index()
    exports.columns = ["country", "hs6", "year", "x_cp"]
    if years is not None:
        exports = exports[exports["year"].isin(set(years))]
    by_country = exports.groupby(["country", "year"], as_index=False)["x_cp"].sum()
    by_country = by_country.rename(columns={"x_cp": "x_c"})
    by_country = by_country[by_country["x_c"] > 0.0]
    by_product = exports.groupby(["hs6", "year"], as_index=False)["x_cp"].sum()
    by_product = by_product.rename(columns={"x_cp": "x_wp"})
    by_product = by_product[by_product["x_wp"] > 0.0]
    world = exports.groupby("year", as_index=False)["x_cp"].sum().rename(columns={"x_cp": "x_w"})

    grid = by_country.merge(by_product, on="year").merge(world, on="year")
    grid = grid.merge(exports, on=["country", "hs6", "year"], how="left")
    grid["x_cp"] = grid["x_cp"].fillna(0.0)
    grid["rca"] = (grid["x_cp"] / grid["x_c"]) / (grid["x_wp"] / grid["x_w"])
    out = grid[["country", "hs6", "year", "rca"]]
    return out.sort_values(["year", "hs6", "country"], kind="mergesort").reset_index(drop=True)


def comparative_strengths(
    panel: TradePanel,
    country: str,
    years: list[int] | None = None,
    rule: str = "mean",
    rca_values: pd.DataFrame | None = None,
) -> set[str]:
    """Products whose RCA for the country averages above 1 over the years
    where it is defined. ``rule="majority"`` instead requires more than half
    of the defined years above 1."""
    table = rca_values if rca_values is not None else rca_table(panel, years)
    mine = table[table["country"] == country]
    if years is not None:
        mine = mine[mine["year"].isin(set(years))]
    if rule == "mean":
        means = mine.groupby("hs6")["rca"].mean()
        return set(means[means > 1.0].index)
    if rule == "majority":
        frac = mine.groupby("hs6")["rca"].agg(lambda s: (s > 1.0).mean())
        return set(frac[frac > 0.5].index)
    raise ValueError(f"unknown strength rule: {rule!r}")


def input_products(network: ProductionNetwork, strengths: set[str]) -> set[str]:
    """Union of direct network predecessors of the strength products."""
    outside = strengths - set(network.nodes)
    if outside:
        logger.warning("ignoring %d strengths outside the network", len(outside))
    result: set[str] = set()
    for product in strengths & set(network.nodes):
        result.update(network.predecessors(product))
    return result


@dataclass(frozen=True)
class PcaModel:
    """First principal component of the standardized indicator triple."""

    means: np.ndarray
    scales: np.ndarray
    loadings: np.ndarray
    explained_variance_ratio: float

    def to_json_dict(self) -> dict:
        return {
            "indicators": list(PCA_INDICATORS),
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "loadings": self.loadings.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "PcaModel":
        return cls(
            np.asarray(payload["means"], dtype=float),
            np.asarray(payload["scales"], dtype=float),
            np.asarray(payload["loadings"], dtype=float),
            float(payload["explained_variance_ratio"]),
        )


def fit_pca(indicator_panel: IndicatorPanel, min_records: int = 10) -> PcaModel:
    """Fit on all complete records, pooled across years so scores are
    comparable over time. Standardization is a global z-score per indicator;
    the sign convention makes the exposure loading non-negative."""
    complete = indicator_panel.complete()
    if len(complete) < min_records:
        raise RankDeficientError(
            f"PCA needs >= {min_records} complete records, found {len(complete)}"
        )
    X = complete[list(PCA_INDICATORS)].to_numpy(dtype=float)
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    for name, scale in zip(PCA_INDICATORS, scales):
        if scale == 0.0:
            raise RankDeficientError(f"rank-deficient: {name}")
    Z = (X - means) / scales
    corr = (Z.T @ Z) / len(Z)
    eigenvalues, eigenvectors = np.linalg.eigh(corr)
    loadings = eigenvectors[:, -1]
    if loadings[0] < 0.0:
        loadings = -loadings
    evr = float(eigenvalues[-1] / eigenvalues.sum())
    return PcaModel(means, scales, loadings, evr)


def composite_score(model: PcaModel, record) -> float:
    """Projection of a standardized (exposure, hhi, str) record onto the
    loadings; NaN for incomplete records."""
    values = np.array([record[name] for name in PCA_INDICATORS], dtype=float)
    if np.isnan(values).any():
        return np.nan
    return float(((values - model.means) / model.scales) @ model.loadings)


def composite_scores(model: PcaModel, indicator_panel: IndicatorPanel) -> pd.DataFrame:
    """Composite for every record; NaN where any indicator is undefined.
    Columns: country, hs6, year, composite."""
    df = indicator_panel.records
    X = df[list(PCA_INDICATORS)].to_numpy(dtype=float)
    Z = (X - model.means) / model.scales
    scores = Z @ model.loadings
    scores[np.isnan(X).any(axis=1)] = np.nan
    out = df[["country", "hs6", "year"]].copy()
    out["composite"] = scores
    return out
