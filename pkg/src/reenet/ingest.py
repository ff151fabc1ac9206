"""Parse and validate trade, stability, and candidate-link inputs.

Loaded panels are immutable once constructed and safe to share across
workers. All loaders accept gzip-compressed files by ``.gz`` extension and
skip ``#`` comment lines, so re-ingesting emitted artifacts round-trips.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from reenet.countries import normalize_country
from reenet.errors import IngestError

logger = logging.getLogger(__name__)

TRADE_COLUMNS = ["year", "exporter", "importer", "hs6", "value_kusd"]
PV_COLUMNS = ["country", "year", "pv_percentile"]
LINK_COLUMNS = ["input_hs6", "output_hs6", "votes"]


@dataclass
class IngestConfig:
    year_min: int = 2007
    year_max: int = 2023
    max_reject_frac: float = 0.05


@dataclass(frozen=True)
class TradeFlow:
    """One bilateral flow; value in thousand USD."""

    year: int
    exporter: str
    importer: str
    product: str
    value: float


@dataclass
class IngestReport:
    n_rows: int = 0
    n_rejected: int = 0
    n_duplicates_merged: int = 0
    reject_reasons: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class MarginalMatrix:
    """Per-product country-year trade marginals, laid out for the kernels.

    Cell index = country_index * n_years + year_index, with countries and
    years in panel order. ``imports[p, cell]`` is total imports of product p
    into that country-year; ``exports`` the total exports from it.
    """

    products: tuple[str, ...]
    countries: tuple[str, ...]
    years: tuple[int, ...]
    imports: np.ndarray
    exports: np.ndarray

    def product_row(self, product: str) -> int:
        return self.products.index(product)

    def cell_labels(self) -> list[tuple[str, int]]:
        return [(c, y) for c in self.countries for y in self.years]


class TradePanel:
    """Indexed bilateral flows with canonical ordering.

    ``flows`` has one row per (year, exporter, importer, hs6) key; duplicate
    input rows are summed at load with a merge count in the report.
    """

    def __init__(self, flows: pd.DataFrame, report: IngestReport | None = None):
        flows = flows.reset_index(drop=True)
        flows["year"] = flows["year"].astype(np.int64)
        flows["value"] = flows["value"].astype(np.float64)
        self.flows = flows.sort_values(
            ["year", "hs6", "exporter", "importer"], kind="mergesort"
        ).reset_index(drop=True)
        self.countries: tuple[str, ...] = tuple(
            sorted(set(flows["exporter"]) | set(flows["importer"]))
        )
        self.products: tuple[str, ...] = tuple(sorted(flows["hs6"].unique()))
        self.years: tuple[int, ...] = tuple(sorted(flows["year"].unique()))
        self.report = report or IngestReport(n_rows=len(flows))
        self._imports_cpt: pd.Series | None = None
        self._exports_cpt: pd.Series | None = None
        self._marginals: MarginalMatrix | None = None
        self._flow_groups: dict[tuple[str, int], pd.DataFrame] | None = None

    @classmethod
    def from_rows(cls, rows: pd.DataFrame, report: IngestReport | None = None) -> "TradePanel":
        """Aggregate duplicate keys by summation and build the panel."""
        keys = ["year", "exporter", "importer", "hs6"]
        n_before = len(rows)
        flows = rows.groupby(keys, as_index=False, sort=True)["value"].sum()
        merged = n_before - len(flows)
        rep = report or IngestReport(n_rows=n_before)
        rep.n_duplicates_merged += merged
        if merged:
            logger.warning("summed %d duplicate flow keys", merged)
        return cls(flows, rep)

    def __len__(self) -> int:
        return len(self.flows)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TradePanel):
            return NotImplemented
        return self.flows.equals(other.flows)

    # -- indexed marginals ------------------------------------------------

    def imports_cpt(self) -> pd.Series:
        """(importer, hs6, year) -> total import value."""
        if self._imports_cpt is None:
            self._imports_cpt = self.flows.groupby(["importer", "hs6", "year"])["value"].sum()
        return self._imports_cpt

    def exports_cpt(self) -> pd.Series:
        """(exporter, hs6, year) -> total export value."""
        if self._exports_cpt is None:
            self._exports_cpt = self.flows.groupby(["exporter", "hs6", "year"])["value"].sum()
        return self._exports_cpt

    def import_total(self, country: str, product: str, year: int) -> float:
        return float(self.imports_cpt().get((country, product, year), 0.0))

    def export_total(self, country: str, product: str, year: int) -> float:
        return float(self.exports_cpt().get((country, product, year), 0.0))

    def trade_total(self, country: str, product: str, year: int) -> float:
        return self.import_total(country, product, year) + self.export_total(
            country, product, year
        )

    def product_flows(self, product: str, year: int) -> pd.DataFrame:
        """All flows of one product-year (exporter, importer, value)."""
        if self._flow_groups is None:
            self._flow_groups = {
                key: grp[["exporter", "importer", "value"]]
                for key, grp in self.flows.groupby(["hs6", "year"], sort=False)
            }
        empty = pd.DataFrame(columns=["exporter", "importer", "value"])
        return self._flow_groups.get((product, year), empty)

    def imports_by_supplier(self, country: str, product: str, year: int) -> pd.Series:
        """Supplier -> import value into ``country`` for one product-year."""
        grp = self.product_flows(product, year)
        sub = grp[grp["importer"] == country]
        return sub.groupby("exporter")["value"].sum()

    def marginals(self) -> MarginalMatrix:
        """Dense per-product import/export marginal matrices."""
        if self._marginals is not None:
            return self._marginals
        products, countries, years = self.products, self.countries, self.years
        p_idx = {p: i for i, p in enumerate(products)}
        c_idx = {c: i for i, c in enumerate(countries)}
        y_idx = {y: i for i, y in enumerate(years)}
        n_years = len(years)
        shape = (len(products), len(countries) * n_years)
        imports = np.zeros(shape)
        exports = np.zeros(shape)
        imp = self.imports_cpt()
        for (country, product, year), value in imp.items():
            imports[p_idx[product], c_idx[country] * n_years + y_idx[year]] = value
        exp = self.exports_cpt()
        for (country, product, year), value in exp.items():
            exports[p_idx[product], c_idx[country] * n_years + y_idx[year]] = value
        self._marginals = MarginalMatrix(products, countries, tuple(years), imports, exports)
        return self._marginals

    def to_csv(self, path) -> None:
        out = self.flows.rename(columns={"value": "value_kusd"})[TRADE_COLUMNS]
        out.to_csv(path, index=False, float_format="%.12g")


class StabilityPanel:
    """(country, year) -> political-stability percentile in [0, 100]."""

    def __init__(self, entries: pd.DataFrame, report: IngestReport | None = None):
        entries = entries.sort_values(["country", "year"], kind="mergesort").reset_index(drop=True)
        entries["year"] = entries["year"].astype(np.int64)
        entries["pv"] = entries["pv"].astype(np.float64)
        self.entries = entries
        self.report = report or IngestReport(n_rows=len(entries))
        self._map = {
            (c, int(y)): float(v)
            for c, y, v in zip(entries["country"], entries["year"], entries["pv"])
        }
        self._by_country: dict[str, list[tuple[int, float]]] = {}
        for c, y, v in zip(entries["country"], entries["year"], entries["pv"]):
            self._by_country.setdefault(c, []).append((int(y), float(v)))
        self._year_median = entries.groupby("year")["pv"].median().to_dict()
        self._global_median = float(entries["pv"].median()) if len(entries) else None

    def get(self, country: str, year: int) -> float | None:
        return self._map.get((country, year))

    def resolve(self, country: str, year: int, default: float = 50.0) -> tuple[float, str]:
        """PV with fallback chain: exact, nearest year for the country,
        median across countries for the year, global median, default."""
        exact = self._map.get((country, year))
        if exact is not None:
            return exact, "exact"
        series = self._by_country.get(country)
        if series:
            # nearest year; ties broken toward the earlier year
            nearest_year, value = min(series, key=lambda item: (abs(item[0] - year), item[0]))
            return value, f"nearest:{nearest_year}"
        if year in self._year_median:
            return float(self._year_median[year]), "year-median"
        if self._global_median is not None:
            return self._global_median, "global-median"
        return default, "default"

    def to_csv(self, path) -> None:
        out = self.entries.rename(columns={"pv": "pv_percentile"})[PV_COLUMNS]
        out.to_csv(path, index=False, float_format="%.12g")


@dataclass(frozen=True)
class CandidateLink:
    input_product: str
    output_product: str
    votes: int


@dataclass
class CandidateLinkSet:
    links: tuple[CandidateLink, ...]
    report: IngestReport

    def __len__(self) -> int:
        return len(self.links)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(l.input_product, l.output_product, l.votes) for l in self.links],
            columns=LINK_COLUMNS,
        )


# -- loaders ---------------------------------------------------------------


def _read_csv(path, columns: list[str], dtypes: dict | None = None) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=dtypes or {}, comment="#", skip_blank_lines=True)
    except FileNotFoundError:
        raise IngestError(f"missing file: {path}")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise IngestError(f"unreadable CSV {path}: {exc}")
    if list(df.columns) != columns:
        raise IngestError(
            f"malformed header in {path}: expected {columns}, found {list(df.columns)}"
        )
    return df


def _reject(report: IngestReport, row_no: int, reason: str, keep_first: int = 10) -> None:
    report.n_rejected += 1
    if len(report.reject_reasons) < keep_first:
        report.reject_reasons.append(f"row {row_no}: {reason}")


def load_trade_csv(path, config: IngestConfig | None = None) -> TradePanel:
    """Load bilateral flows; invalid rows are rejected and counted,
    duplicate keys summed. More than ``max_reject_frac`` rejects is a hard
    error listing the first ten offenders."""
    config = config or IngestConfig()
    df = _read_csv(path, TRADE_COLUMNS, dtypes={"hs6": str})
    report = IngestReport(n_rows=len(df))
    if len(df) == 0:
        return TradePanel(
            pd.DataFrame(columns=["year", "exporter", "importer", "hs6", "value"]).astype(
                {"year": np.int64, "value": np.float64}
            ),
            report,
        )

    year = pd.to_numeric(df["year"], errors="coerce")
    value = pd.to_numeric(df["value_kusd"], errors="coerce")
    hs6 = df["hs6"].astype(str).str.strip()
    exporter = df["exporter"].map(lambda s: normalize_country(s))
    importer = df["importer"].map(lambda s: normalize_country(s))

    ok_year = year.notna() & (year == year.round()) & year.between(config.year_min, config.year_max)
    ok_value = value.notna() & np.isfinite(value) & (value >= 0)
    ok_hs6 = hs6.str.fullmatch(r"\d{6}").fillna(False)
    ok_exp = exporter.notna()
    ok_imp = importer.notna()
    ok_pair = ok_exp & ok_imp & (exporter != importer)

    valid = ok_year & ok_value & ok_hs6 & ok_pair
    for idx in df.index[~valid]:
        if not ok_year[idx]:
            reason = f"year {df['year'][idx]!r} outside {config.year_min}-{config.year_max} or not an integer"
        elif not ok_exp[idx]:
            reason = f"unknown exporter code {df['exporter'][idx]!r}"
        elif not ok_imp[idx]:
            reason = f"unknown importer code {df['importer'][idx]!r}"
        elif not (exporter[idx] != importer[idx]):
            reason = f"exporter equals importer ({exporter[idx]})"
        elif not ok_hs6[idx]:
            reason = f"hs6 {df['hs6'][idx]!r} is not exactly 6 digits"
        else:
            reason = f"value {df['value_kusd'][idx]!r} negative or not a number"
        _reject(report, int(idx) + 1, reason)

    if report.n_rejected > config.max_reject_frac * len(df):
        offenders = "; ".join(report.reject_reasons)
        raise IngestError(
            f"{report.n_rejected}/{len(df)} rows rejected in {path} "
            f"(> {config.max_reject_frac:.0%}): {offenders}"
        )
    if report.n_rejected:
        logger.warning("rejected %d/%d trade rows", report.n_rejected, len(df))

    rows = pd.DataFrame(
        {
            "year": year[valid].astype(np.int64),
            "exporter": exporter[valid],
            "importer": importer[valid],
            "hs6": hs6[valid],
            "value": value[valid].astype(np.float64),
        }
    )
    return TradePanel.from_rows(rows, report)


def load_pv_csv(path) -> StabilityPanel:
    """Load the political-stability percentile panel."""
    df = _read_csv(path, PV_COLUMNS)
    report = IngestReport(n_rows=len(df))
    if len(df) == 0:
        return StabilityPanel(pd.DataFrame(columns=["country", "year", "pv"]), report)

    year = pd.to_numeric(df["year"], errors="coerce")
    pv = pd.to_numeric(df["pv_percentile"], errors="coerce")
    country = df["country"].map(lambda s: normalize_country(s))

    valid = (
        country.notna()
        & year.notna()
        & (year == year.round())
        & pv.notna()
        & (pv >= 0.0)
        & (pv <= 100.0)
    )
    for idx in df.index[~valid]:
        _reject(report, int(idx) + 1, f"invalid entry {tuple(df.loc[idx])!r}")
    if report.n_rejected:
        logger.warning("rejected %d/%d pv rows", report.n_rejected, len(df))

    entries = pd.DataFrame(
        {
            "country": country[valid],
            "year": year[valid].astype(np.int64),
            "pv": pv[valid].astype(np.float64),
        }
    )
    dups = entries.duplicated(subset=["country", "year"], keep=False)
    if dups.any():
        first = entries[dups].iloc[0]
        raise IngestError(
            f"duplicate stability entries for ({first['country']}, {first['year']}) in {path}"
        )
    return StabilityPanel(entries, report)


def load_candidate_links(path, min_votes: int = 6, max_votes: int = 10) -> CandidateLinkSet:
    """Load candidate input-output links, keeping those with votes >= min_votes."""
    df = _read_csv(path, LINK_COLUMNS, dtypes={"input_hs6": str, "output_hs6": str})
    report = IngestReport(n_rows=len(df))
    votes = pd.to_numeric(df["votes"], errors="coerce")
    in_p = df["input_hs6"].astype(str).str.strip()
    out_p = df["output_hs6"].astype(str).str.strip()

    ok_codes = in_p.str.fullmatch(r"\d{6}").fillna(False) & out_p.str.fullmatch(r"\d{6}").fillna(False)
    ok_votes = votes.notna() & (votes == votes.round()) & (votes >= 1) & (votes <= max_votes)
    self_loop = in_p == out_p
    valid = ok_codes & ok_votes & ~self_loop
    for idx in df.index[~valid]:
        if self_loop.get(idx, False):
            reason = f"self-loop {in_p[idx]}"
            logger.warning("dropping self-loop candidate link %s", in_p[idx])
        elif not ok_codes[idx]:
            reason = "product codes not 6-digit"
        else:
            reason = f"votes {df['votes'][idx]!r} outside 1..{max_votes}"
        _reject(report, int(idx) + 1, reason)

    kept = pd.DataFrame({"input": in_p[valid], "output": out_p[valid], "votes": votes[valid].astype(int)})
    dups = kept.duplicated(subset=["input", "output"], keep=False)
    if dups.any():
        first = kept[dups].iloc[0]
        raise IngestError(
            f"duplicate candidate link ({first['input']}, {first['output']}) in {path}"
        )
    kept = kept[kept["votes"] >= min_votes]
    kept = kept.sort_values(["input", "output"], kind="mergesort")
    links = tuple(
        CandidateLink(i, o, int(v)) for i, o, v in zip(kept["input"], kept["output"], kept["votes"])
    )
    return CandidateLinkSet(links, report)


def aggregate_region(panel: TradePanel, members: set[str], region_code: str) -> TradePanel:
    """Collapse ``members`` into a single region: intra-member flows are
    removed, member flows with outside partners re-keyed to ``region_code``
    and summed. Extra-region trade value is conserved."""
    if not members:
        raise IngestError("empty region member set")
    if region_code in panel.countries:
        raise IngestError(f"region code {region_code} already present in panel")
    missing = sorted(set(members) - set(panel.countries))
    if missing:
        raise IngestError(f"region members not in panel: {missing}")

    flows = panel.flows.copy()
    exp_member = flows["exporter"].isin(members)
    imp_member = flows["importer"].isin(members)
    flows = flows[~(exp_member & imp_member)].copy()
    flows.loc[flows["exporter"].isin(members), "exporter"] = region_code
    flows.loc[flows["importer"].isin(members), "importer"] = region_code
    report = IngestReport(n_rows=len(flows))
    return TradePanel.from_rows(flows, report)
