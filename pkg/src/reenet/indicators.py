"""Dependency indicators per (country, product, year).

Exposure = imports / (imports + exports). Import concentration is the
Herfindahl-Hirschman index of supplier shares. Systemic trade risk row-sums
the inverse of (I - W), where W weights each supplier's import share by its
political instability (1 - PV/100); influence is a supplier's off-diagonal
column sum of that inverse, its marginal contribution to everyone else's
risk. Undefined is a value here (NaN in the panel), not an error.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import lu_factor, lu_solve

from reenet.errors import SingularRiskMatrixError
from reenet.ingest import StabilityPanel, TradePanel
from reenet.netbuild import ProductionNetwork

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8


def exposure(panel: TradePanel, country: str, product: str, year: int) -> float:
    """imports / (imports + exports); NaN when the country does not trade
    the product that year."""
    imports = panel.import_total(country, product, year)
    exports = panel.export_total(country, product, year)
    total = imports + exports
    if total <= 0.0:
        return np.nan
    return imports / total


def import_concentration(panel: TradePanel, country: str, product: str, year: int) -> float:
    """Sum of squared supplier import shares; NaN without imports."""
    suppliers = panel.imports_by_supplier(country, product, year)
    total = float(suppliers.sum())
    if total <= 0.0:
        return np.nan
    shares = suppliers.to_numpy() / total
    return float(shares @ shares)


@dataclass(frozen=True)
class RiskMatrix:
    """Stability-weighted import-share matrix W for one product-year.

    W[c, a] = (1 - PV(a, t)/100, clamped to <= 1 - clamp_delta) * share of
    supplier a in c's imports. Importer rows, supplier columns; countries in
    panel order; zero rows for countries with no imports of the product.
    """

    product: str
    year: int
    countries: tuple[str, ...]
    W: np.ndarray


def build_risk_matrix(
    panel: TradePanel,
    stability: StabilityPanel,
    product: str,
    year: int,
    clamp_delta: float = 1e-6,
) -> RiskMatrix:
    """Assemble W; missing PV falls back to the country's nearest year,
    then the year's cross-country median (logged). The instability factor is
    clamped below 1 so (I - W) stays invertible."""
    countries = panel.countries
    index = {c: i for i, c in enumerate(countries)}
    n = len(countries)
    W = np.zeros((n, n))
    flows = panel.product_flows(product, year)
    if len(flows) == 0:
        return RiskMatrix(product, year, countries, W)

    importer_idx = flows["importer"].map(index).to_numpy()
    exporter_idx = flows["exporter"].map(index).to_numpy()
    values = flows["value"].to_numpy(dtype=float)
    totals = np.zeros(n)
    np.add.at(totals, importer_idx, values)
    factors = np.zeros(n)
    for supplier in flows["exporter"].unique():
        pv, source = stability.resolve(supplier, year)
        if source != "exact":
            logger.info("pv fallback for (%s, %d): %s", supplier, year, source)
        factors[index[supplier]] = min(1.0 - pv / 100.0, 1.0 - clamp_delta)

    shares = values / totals[importer_idx]
    np.add.at(W, (importer_idx, exporter_idx), factors[exporter_idx] * shares)
    return RiskMatrix(product, year, countries, W)


def _inverse(risk: RiskMatrix) -> np.ndarray:
    """Dense (I - W)^-1 via one LU factorization, identity right-hand side."""
    n = len(risk.countries)
    A = np.eye(n) - risk.W
    try:
        lu, piv = lu_factor(A)
        inv = lu_solve((lu, piv), np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularRiskMatrixError(
            f"(I - W) singular for {risk.product}/{risk.year}: {exc}",
            float(np.linalg.cond(A)),
        )
    residual = float(np.abs(A @ inv - np.eye(n)).max())
    if not np.isfinite(inv).all() or residual > RESIDUAL_TOL:
        raise SingularRiskMatrixError(
            f"(I - W) solve failed for {risk.product}/{risk.year}, residual {residual:.3e}",
            float(np.linalg.cond(A)),
        )
    return inv


def systemic_trade_risk(risk: RiskMatrix) -> pd.Series:
    """STR_c = row sum of (I - W)^-1; equals 1 for non-importers."""
    inv = _inverse(risk)
    return pd.Series(inv.sum(axis=1), index=list(risk.countries), name="str")


def influence(risk: RiskMatrix, include_self: bool = False) -> pd.Series:
    """Supplier influence: column sums of (I - W)^-1 excluding the diagonal
    (a country's self-risk is not influence over others). ``include_self``
    switches to full column sums."""
    inv = _inverse(risk)
    cols = inv.sum(axis=0)
    if not include_self:
        cols = cols - np.diag(inv)
    return pd.Series(cols, index=list(risk.countries), name="influence")


def _str_and_influence(risk: RiskMatrix, include_self: bool) -> tuple[pd.Series, pd.Series]:
    inv = _inverse(risk)
    strs = pd.Series(inv.sum(axis=1), index=list(risk.countries))
    cols = inv.sum(axis=0)
    if not include_self:
        cols = cols - np.diag(inv)
    return strs, pd.Series(cols, index=list(risk.countries))


@dataclass
class IndicatorPanel:
    """Records for every (country, tiered product, year) with any trade.

    Columns: country, hs6, year, tier, exposure, hhi, str, influence.
    NaN cells are undefined: hhi/str need imports, exposure needs any trade.
    """

    records: pd.DataFrame

    def get(self, country: str, product: str, year: int) -> pd.Series | None:
        df = self.records
        hit = df[(df["country"] == country) & (df["hs6"] == product) & (df["year"] == year)]
        return hit.iloc[0] if len(hit) else None

    def complete(self) -> pd.DataFrame:
        """Rows where exposure, hhi and str are all defined."""
        df = self.records
        return df[df[["exposure", "hhi", "str"]].notna().all(axis=1)]

    def to_csv(self, path) -> None:
        self.records.to_csv(path, index=False, float_format="%.12g")

    @classmethod
    def from_csv(cls, path) -> "IndicatorPanel":
        df = pd.read_csv(path, dtype={"hs6": str}, comment="#")
        return cls(df)


def _product_year_records(
    panel: TradePanel,
    stability: StabilityPanel,
    product: str,
    tier: int,
    year: int,
    clamp_delta: float,
    include_self: bool,
) -> pd.DataFrame:
    """Vectorized per-country records for one product-year."""
    risk = build_risk_matrix(panel, stability, product, year, clamp_delta)
    strs, infl = _str_and_influence(risk, include_self)
    countries = np.array(risk.countries)
    n = len(countries)

    flows = panel.product_flows(product, year)
    index = {c: i for i, c in enumerate(countries)}
    imports = np.zeros(n)
    exports = np.zeros(n)
    sq_imports = np.zeros(n)
    if len(flows):
        importer_idx = flows["importer"].map(index).to_numpy()
        exporter_idx = flows["exporter"].map(index).to_numpy()
        values = flows["value"].to_numpy(dtype=float)
        np.add.at(imports, importer_idx, values)
        np.add.at(exports, exporter_idx, values)
        np.add.at(sq_imports, importer_idx, values**2)

    trades = (imports + exports) > 0.0
    has_imports = imports > 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        exposure_v = np.where(trades, imports / (imports + exports), np.nan)
        hhi_v = np.where(has_imports, sq_imports / imports**2, np.nan)
    str_v = np.where(has_imports, strs.to_numpy(), np.nan)
    return pd.DataFrame(
        {
            "country": countries[trades],
            "hs6": product,
            "year": year,
            "tier": tier,
            "exposure": exposure_v[trades],
            "hhi": hhi_v[trades],
            "str": str_v[trades],
            "influence": infl.to_numpy()[trades],
        }
    )


def compute_indicator_panel(
    panel: TradePanel,
    stability: StabilityPanel,
    network: ProductionNetwork,
    years: list[int] | None = None,
    clamp_delta: float = 1e-6,
    include_self_influence: bool = False,
    jobs: int = 1,
) -> IndicatorPanel:
    """All four indicators for every (country, tiered product, year).

    Product-year matrices are independent; ``jobs`` > 1 computes them in
    parallel with a deterministic ordered merge.
    """
    years = list(years) if years is not None else list(panel.years)
    tasks = [
        (product, network.tiers[product], year)
        for year in years
        for product in network.tiered_products()
        if product in panel.products
    ]
    # warm the panel's lazy caches before any parallel dispatch
    panel.imports_cpt()
    panel.exports_cpt()
    if tasks:
        panel.product_flows(tasks[0][0], tasks[0][2])
    runner = Parallel(n_jobs=jobs, prefer="threads") if jobs != 1 else None
    if runner is None:
        chunks = [
            _product_year_records(
                panel, stability, product, tier, year, clamp_delta, include_self_influence
            )
            for product, tier, year in tasks
        ]
    else:
        chunks = runner(
            delayed(_product_year_records)(
                panel, stability, product, tier, year, clamp_delta, include_self_influence
            )
            for product, tier, year in tasks
        )
    columns = ["country", "hs6", "year", "tier", "exposure", "hhi", "str", "influence"]
    chunks = [c for c in chunks if len(c)]
    if chunks:
        records = pd.concat(chunks, ignore_index=True)[columns]
    else:
        records = pd.DataFrame(columns=columns)
    records = records.sort_values(["year", "hs6", "country"], kind="mergesort").reset_index(
        drop=True
    )
    return IndicatorPanel(records)
