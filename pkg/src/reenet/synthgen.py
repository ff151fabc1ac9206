"""Deterministic synthetic data with planted ground truth.

Emits trade, stability, and candidate-link CSVs plus a ``truth.json``
manifest. True input-output links get co-moving series: a per-edge latent
country-year factor drives both the input product's import demand and the
output product's exports, with the shared-variance fraction set by
``corr_strength``. Decoy candidates have no shared factor. The regression
outcome is planted by computing the pipeline's own baseline covariates on
the generated data, drawing delta-RCA as a linear signal plus noise, and
fitting outcome-window exports so realized RCA hits the target (a
biproportional fixed-point iteration; RCA is scale-free per year, which the
iteration exploits).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.optimize import least_squares

from reenet.econometrics import COVARIATES, baseline_covariates
from reenet.errors import ConfigError
from reenet.indicators import compute_indicator_panel
from reenet.ingest import StabilityPanel, TradePanel
from reenet.netbuild import ProductionNetwork, ValidatedEdge, assign_tiers
from reenet.scores import rca_table

logger = logging.getLogger(__name__)

REE_SEEDS = ("280530", "284610", "284690")

# Sign pattern of the published dependency-growth regression.
TABLE_SIGN_COEFFICIENTS = {
    "rca": -0.13,
    "exposure_all": 1.1,
    "hhi_all": -0.66,
    "str_all": -0.36,
    "exposure_inputs": 0.1,
    "hhi_inputs": 0.26,
    "str_inputs": -0.37,
    "rca_inputs": 0.07,
}


@dataclass
class SynthConfig:
    n_countries: int = 12
    n_products: int = 20
    n_years: int = 5
    start_year: int = 2007
    n_seeds: int = 2
    n_true_links: int = 10
    n_decoy_links: int = 8
    n_subthreshold_links: int = 2
    corr_strength: float = 0.95
    baseline_years: int = 2
    outcome_years: int = 2
    coefficients: dict = field(default_factory=lambda: dict(TABLE_SIGN_COEFFICIENTS))
    delta_scale: float = 0.25
    noise_scale: float = 0.05
    rng_seed: int = 0

    def validate(self) -> None:
        positive = {
            "n_countries": self.n_countries,
            "n_products": self.n_products,
            "n_years": self.n_years,
            "baseline_years": self.baseline_years,
            "outcome_years": self.outcome_years,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.n_countries < 4:
            raise ConfigError("need at least 4 countries")
        if not 1 <= self.n_seeds <= len(REE_SEEDS):
            raise ConfigError(f"n_seeds must be in 1..{len(REE_SEEDS)}")
        if self.n_products <= self.n_seeds + 1:
            raise ConfigError("n_products must exceed n_seeds + 1")
        if self.n_years < self.baseline_years + self.outcome_years:
            raise ConfigError("n_years must cover baseline and outcome windows")
        if not 0.0 < self.corr_strength < 1.0:
            raise ConfigError("corr_strength must lie in (0, 1)")
        if min(self.n_true_links, self.n_decoy_links, self.n_subthreshold_links) < 0:
            raise ConfigError("link counts must be non-negative")
        unknown = set(self.coefficients) - set(COVARIATES)
        if unknown:
            raise ConfigError(f"unknown planted coefficients: {sorted(unknown)}")

    @property
    def years(self) -> list[int]:
        return list(range(self.start_year, self.start_year + self.n_years))

    @property
    def baseline_window(self) -> tuple[int, int]:
        return (self.start_year, self.start_year + self.baseline_years - 1)

    @property
    def outcome_window(self) -> tuple[int, int]:
        last = self.start_year + self.n_years - 1
        return (last - self.outcome_years + 1, last)


def _product_codes(config: SynthConfig) -> tuple[list[str], list[str]]:
    seeds = list(REE_SEEDS[: config.n_seeds])
    others = [f"{850000 + i:06d}" for i in range(config.n_products - config.n_seeds)]
    return seeds, others


def _country_codes(n: int) -> list[str]:
    return [f"C{chr(65 + i // 26)}{chr(65 + i % 26)}" for i in range(n)]


def _build_true_dag(config: SynthConfig, rng: np.random.Generator, seeds, others):
    """Layered DAG rooted at the seeds. Every in-edge of a node comes from
    the previous tier, so BFS tiers are exact by construction. Attachment
    prefers low fan-out parents: a product feeding many outputs dilutes its
    per-link co-movement signal."""
    tiers = {s: 0 for s in seeds}
    edges: list[tuple[str, str]] = []
    networked = list(seeds)
    pool = list(others)
    out_degree: dict[str, int] = {s: 0 for s in seeds}
    # keep ~30% of the links as extra in-edges so input sets differ across
    # products instead of forming a pure attachment tree
    attach = min(max(1, round(0.7 * config.n_true_links)), len(pool))
    if config.n_true_links == 0:
        attach = 0
    for _ in range(attach):
        child = pool.pop(0)
        lowest = min(out_degree[n] for n in networked)
        candidates = [n for n in networked if out_degree[n] == lowest]
        parent = candidates[rng.integers(0, len(candidates))]
        edges.append((parent, child))
        tiers[child] = tiers[parent] + 1
        networked.append(child)
        out_degree[child] = 0
        out_degree[parent] += 1
    # extra in-edges diversify input sets; cap both degrees at 2 extra so no
    # product spreads its co-movement signal across too many edges
    extra = config.n_true_links - attach
    candidates_by_tier: dict[int, list[str]] = {}
    for node, tier in tiers.items():
        candidates_by_tier.setdefault(tier, []).append(node)
    in_degree = {n: 1 if t >= 1 else 0 for n, t in tiers.items()}
    attempts = 0
    while extra > 0 and attempts < 50 * config.n_true_links:
        attempts += 1
        targets = [n for n, t in tiers.items() if t >= 1 and in_degree[n] < 2]
        if not targets:
            break
        child = targets[rng.integers(0, len(targets))]
        parents = [
            p
            for p in candidates_by_tier.get(tiers[child] - 1, [])
            if out_degree.get(p, 0) < 3 and (p, child) not in edges
        ]
        if not parents:
            continue
        parent = parents[rng.integers(0, len(parents))]
        edges.append((parent, child))
        in_degree[child] += 1
        out_degree[parent] = out_degree.get(parent, 0) + 1
        extra -= 1
    return edges, tiers


def _draw_decoys(rng, products, true_edges, count):
    forbidden = set(true_edges) | {(j, i) for i, j in true_edges}
    decoys: list[tuple[str, str]] = []
    attempts = 0
    while len(decoys) < count and attempts < 200 * max(count, 1):
        attempts += 1
        i, j = rng.choice(len(products), size=2, replace=False)
        pair = (products[i], products[j])
        if pair in forbidden or pair in decoys:
            continue
        decoys.append(pair)
    return decoys


def _role_factors(rng, edges, countries_n, years_n):
    """Latents keyed by each link's input product: a yearly country factor
    and a static per-country processing capacity. A country's import demand
    for input i carries i's latents undiluted; exports of an output product
    carry the unit-variance sum over its parents' latents. The capacity ties
    the LEVEL of input imports to output exports (what the pooled
    correlation sees); the yearly factor adds co-movement over time. Keying
    by input means an input's several outputs share its factor, which is
    safe: the test statistic never pairs two outputs' export series."""
    inputs = sorted({e[0] for e in edges})
    factor = {i: rng.normal(0.0, 1.0, (countries_n, years_n)) for i in inputs}
    capacity = {i: rng.normal(0.0, 1.0, countries_n) for i in inputs}
    parents: dict[str, list] = {}
    for i, j in edges:
        parents.setdefault(j, []).append(i)

    def combined_outputs(latents):
        out = {}
        for product, members in parents.items():
            stacked = np.sum([latents[i] for i in members], axis=0)
            out[product] = stacked / np.sqrt(len(members))
        return out

    input_factor = {i: factor[i] for i in inputs}
    input_capacity = {i: capacity[i] for i in inputs}
    return (
        input_factor,
        combined_outputs(factor),
        input_capacity,
        combined_outputs(capacity),
    )


def _rca_of(exports: np.ndarray) -> np.ndarray:
    """RCA matrix of a country x product export matrix; NaN where undefined."""
    x_c = exports.sum(axis=1, keepdims=True)
    x_p = exports.sum(axis=0, keepdims=True)
    x_w = exports.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        return (exports / x_c) / (x_p / x_w)


def _fit_exports_to_rca(target: np.ndarray, init: np.ndarray) -> tuple[np.ndarray, float]:
    """Closest realizable export matrix to a target RCA pattern.

    Arbitrary per-cell RCA targets are generally unrealizable (RCA satisfies
    world-share identities), so we search the family X = diag(e^a) target
    diag(e^b), whose realized RCA differs from the target only by row/column
    factors, and minimize the log gap over (a, b). Returns (X, max abs gap);
    the gap is the unavoidable projection residual, not a solver failure.
    """
    C, P = target.shape
    support = target > 0.0
    log_target = np.log(target[support])
    u0 = init.sum(axis=1)
    v0 = init.sum(axis=0)
    u0 = np.where(u0 > 0.0, u0, u0[u0 > 0.0].min() if (u0 > 0.0).any() else 1.0)
    v0 = np.where(v0 > 0.0, v0, v0[v0 > 0.0].min() if (v0 > 0.0).any() else 1.0)
    total0 = float(init.sum()) or 1.0

    def exports_of(params: np.ndarray) -> np.ndarray:
        a = np.clip(params[:C], -40.0, 40.0)
        b = np.clip(params[C:], -40.0, 40.0)
        return np.exp(a)[:, None] * target * np.exp(b)[None, :]

    def residuals(params: np.ndarray) -> np.ndarray:
        realized = _rca_of(exports_of(params))
        return np.log(realized[support]) - log_target

    x0 = np.concatenate([np.log(u0 / total0), np.log(v0 / total0)])
    solution = least_squares(residuals, x0, method="lm", xtol=1e-14, ftol=1e-14)
    X = exports_of(solution.x)
    X *= total0 / X.sum()
    gap = np.abs(_rca_of(X) - target)[support]
    return X, float(gap.max()) if gap.size else 0.0


def generate(config: SynthConfig, out_dir) -> dict:
    """Write trade.csv, pv.csv, links.csv and truth.json into ``out_dir``;
    byte-identical per seed. Returns a manifest with paths and ground truth."""
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.rng_seed)

    seeds, others = _product_codes(config)
    products = seeds + others
    countries = _country_codes(config.n_countries)
    years = config.years
    C, P, Y = len(countries), len(products), len(years)
    baseline_idx = list(range(config.baseline_years))
    outcome_idx = list(range(Y - config.outcome_years, Y))

    true_edges, true_tiers = _build_true_dag(config, rng, seeds, others)
    decoys = _draw_decoys(rng, products, true_edges, config.n_decoy_links)
    sub_links = _draw_decoys(
        rng, products, true_edges + decoys, config.n_subthreshold_links
    )
    input_factor, output_factor, input_capacity, output_capacity = _role_factors(
        rng, true_edges, C, Y
    )

    country_scale = rng.normal(0.0, 0.4, C)
    year_factor = np.exp(rng.normal(0.0, 0.05, Y))
    tau = 0.8  # log-sd of the yearly co-movement component
    kappa = 1.0  # log-sd of the static processing-capacity component
    sig = np.sqrt(config.corr_strength)
    idio = np.sqrt(1.0 - config.corr_strength)

    # Exports X[c, p, y], import-demand weights W[c, p, y], and a static
    # bilateral affinity A[a, c, p] giving each importer its own supplier
    # mix (and so cross-country variation in concentration and risk).
    # Products in a linked role trade densely; the rest get sparse masks.
    exports = np.zeros((C, P, Y))
    demand = np.zeros((C, P, Y))
    affinity = np.zeros((C, C, P))
    for pi, product in enumerate(products):
        out_role = product in output_factor
        in_role = product in input_factor
        linked = out_role or in_role
        exporter_mask = rng.random(C) < 0.75
        if exporter_mask.sum() < 2:
            exporter_mask[np.argsort(rng.random(C))[:2]] = True
        if out_role:
            exporter_mask = np.ones(C, dtype=bool)
        x_static = rng.normal(3.0 + country_scale, 0.2 if out_role else 0.8)
        if out_role:
            x_static = x_static + kappa * output_capacity[product]
        x0 = np.exp(x_static) * exporter_mask
        w_mask = rng.random(C) < 0.85
        if w_mask.sum() < 2:
            w_mask[np.argsort(rng.random(C))[:2]] = True
        if in_role:
            w_mask = np.ones(C, dtype=bool)
        w_static = rng.normal(country_scale, 0.2 if in_role else 0.6)
        if in_role:
            w_static = w_static + kappa * input_capacity[product]
        w0 = np.exp(w_static) * w_mask
        keep = rng.random((C, C)) < (0.95 if linked else 0.6)
        affinity[:, :, pi] = np.exp(rng.normal(0.0, 0.8, (C, C))) * keep

        eps_x = rng.normal(0.0, 1.0, (C, Y))
        eps_w = rng.normal(0.0, 1.0, (C, Y))
        if out_role:
            log_x = tau * (sig * output_factor[product] + idio * eps_x)
        else:
            log_x = tau * eps_x
        if in_role:
            log_w = tau * (sig * input_factor[product] + idio * eps_w)
        else:
            log_w = tau * eps_w
        exports[:, pi, :] = x0[:, None] * year_factor[None, :] * np.exp(log_x)
        demand[:, pi, :] = w0[:, None] * np.exp(log_w)

    def bilateral_cube(export_cube: np.ndarray, year_indices) -> np.ndarray:
        """Split exporters' totals across importers by demand weight times
        bilateral affinity, excluding self-flows. Returns T[a, c, p, y']."""
        X = export_cube[:, :, year_indices]  # (A, P, Y')
        W = demand[:, :, year_indices]  # (C, P, Y')
        numer = W[None, :, :, :] * affinity[:, :, :, None]  # (A, C, P, Y')
        idx = np.arange(C)
        numer[idx, idx, :, :] = 0.0
        denom = numer.sum(axis=1)  # (A, P, Y')
        fallback = denom <= 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            shares = numer / denom[:, None, :, :]
        if fallback.any():
            uniform = np.full(C, 1.0 / (C - 1))
            a_idx, p_idx, y_idx = np.nonzero(fallback)
            for a, p, yy in zip(a_idx, p_idx, y_idx):
                shares[a, :, p, yy] = uniform
                shares[a, a, p, yy] = 0.0
        return X[:, None, :, :] * shares

    def flows_frame(year_indices, export_cube) -> pd.DataFrame:
        T = bilateral_cube(export_cube, year_indices)
        a_idx, c_idx, p_idx, y_idx = np.nonzero(T)
        year_list = [years[yi] for yi in year_indices]
        return pd.DataFrame(
            {
                "year": np.array(year_list)[y_idx],
                "exporter": np.array(countries)[a_idx],
                "importer": np.array(countries)[c_idx],
                "hs6": np.array(products)[p_idx],
                "value": T[a_idx, c_idx, p_idx, y_idx],
            }
        )

    # Baseline and gap years feed the covariate computation.
    pre_outcome_years = [yi for yi in range(Y) if yi not in outcome_idx]

    pre_frame = flows_frame(pre_outcome_years, exports)
    pv_mu = rng.uniform(15.0, 90.0, C)
    pv = np.clip(rng.normal(pv_mu[:, None], 5.0, (C, Y)), 0.5, 99.5)

    truth: dict = {
        "seeds": seeds,
        "true_edges": [list(e) for e in true_edges],
        "tiers": true_tiers,
        "decoy_links": [list(e) for e in decoys],
        "baseline_window": list(config.baseline_window),
        "outcome_window": list(config.outcome_window),
        "coefficients": config.coefficients,
        "delta_scale": config.delta_scale,
        "noise_scale": config.noise_scale,
        "n_planted_cells": 0,
        "rca_fit_max_abs_gap": 0.0,
    }

    # Plant the outcome: target RCA per (country, product) realized in the
    # outcome window via the biproportional fit.
    base_last = exports[:, :, max(baseline_idx)]
    rca_base_mean = np.nanmean(
        np.stack([_rca_of(exports[:, :, yi]) for yi in baseline_idx]), axis=0
    )
    target = np.where(np.isnan(rca_base_mean), 0.0, rca_base_mean)

    if true_edges:
        panel_pre = TradePanel.from_rows(pre_frame.copy())
        stability = StabilityPanel(
            pd.DataFrame(
                {
                    "country": np.repeat(countries, Y),
                    "year": np.tile(years, C),
                    "pv": pv.ravel(),
                }
            )
        )
        network = ProductionNetwork(
            nodes=tuple(sorted(set(true_tiers))),
            edges=tuple(ValidatedEdge(i, j, 1.0, 0.0) for i, j in sorted(true_edges)),
            tiers=dict(true_tiers),
            seeds=tuple(sorted(seeds)),
        )
        indicator_panel = compute_indicator_panel(
            panel_pre, stability, network, years=[years[i] for i in baseline_idx]
        )
        rca_values = rca_table(panel_pre, years=[years[i] for i in baseline_idx])
        covariates = baseline_covariates(
            rca_values, indicator_panel.records, network, config.baseline_window
        )
        if len(covariates) >= 3:
            X = covariates[list(COVARIATES)].to_numpy(dtype=float)
            sds = X.std(axis=0)
            sds[sds == 0.0] = 1.0
            X_std = (X - X.mean(axis=0)) / sds
            beta = np.array([config.coefficients.get(c, 0.0) for c in COVARIATES])
            signal = X_std @ beta
            spread = signal.std()
            if spread > 0.0:
                signal = signal / spread
            delta = config.delta_scale * signal + rng.normal(
                0.0, config.noise_scale, len(signal)
            )
            c_pos = {c: i for i, c in enumerate(countries)}
            p_pos = {p: i for i, p in enumerate(products)}
            for (country, product, d) in zip(
                covariates["country"], covariates["hs6"], delta
            ):
                ci, pi = c_pos[country], p_pos[product]
                target[ci, pi] = max(rca_base_mean[ci, pi] + d, 0.02)
            truth["n_planted_cells"] = int(len(delta))

    # Per-outcome-year targets wiggle with the output factor but average to
    # the planted target exactly, keeping export co-movement alive.
    outcome_targets = [target.copy() for _ in outcome_idx]
    for product, F in output_factor.items():
        pi = products.index(product)
        sub = F[:, outcome_idx]
        centered = sub - sub.mean(axis=1, keepdims=True)
        peak = np.abs(centered).max(axis=1, keepdims=True)
        peak[peak == 0.0] = 1.0
        jitter = 0.3 * target[:, [pi]] * centered / peak
        for k in range(len(outcome_idx)):
            outcome_targets[k][:, pi] = target[:, pi] + jitter[:, k]

    max_err = 0.0
    outcome_exports = exports.copy()
    for k, yi in enumerate(outcome_idx):
        fitted, err = _fit_exports_to_rca(outcome_targets[k], base_last)
        max_err = max(max_err, err)
        outcome_exports[:, :, yi] = fitted * year_factor[yi]
    truth["rca_fit_max_abs_gap"] = max_err
    logger.info("outcome RCA realizability gap %.3e", max_err)

    out_frame = flows_frame(outcome_idx, outcome_exports)
    trade = pd.concat([pre_frame, out_frame], ignore_index=True)
    trade = trade.sort_values(
        ["year", "hs6", "exporter", "importer"], kind="mergesort"
    ).reset_index(drop=True)
    trade = trade.rename(columns={"value": "value_kusd"})

    links_rows = []
    for i, j in sorted(true_edges):
        links_rows.append((i, j, int(rng.integers(8, 11))))
    for i, j in sorted(decoys):
        links_rows.append((i, j, int(rng.integers(6, 11))))
    for i, j in sorted(sub_links):
        links_rows.append((i, j, int(rng.integers(1, 6))))
    links = pd.DataFrame(links_rows, columns=["input_hs6", "output_hs6", "votes"])
    links = links.sort_values(["input_hs6", "output_hs6"], kind="mergesort")

    pv_frame = pd.DataFrame(
        {
            "country": np.repeat(countries, Y),
            "year": np.tile(years, C),
            "pv_percentile": pv.ravel(),
        }
    )

    paths = {
        "trade": out_dir / "trade.csv",
        "pv": out_dir / "pv.csv",
        "links": out_dir / "links.csv",
        "truth": out_dir / "truth.json",
    }
    trade.to_csv(paths["trade"], index=False, float_format="%.10g")
    pv_frame.to_csv(paths["pv"], index=False, float_format="%.10g")
    links.to_csv(paths["links"], index=False)
    truth["config"] = asdict(config)
    with open(paths["truth"], "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"paths": {k: str(v) for k, v in paths.items()}, "truth": truth}
