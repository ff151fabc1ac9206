"""Country-year dependency profiles, embedding, and density clustering.

A profile stacks, for each network tier, trade-weighted averages of the
three dependency indicators over all products and over the country's input
products, plus tier-level composite and influence averages: 8 metrics per
tier, tiers 0..T_max, in a fixed documented column order. Profiles are
z-scored per feature, missing strata imputed at the post-normalization mean
(zero) with a mask, embedded in 2-D, and clustered with a density method
where -1 marks outliers.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.cluster import DBSCAN
from sklearn.manifold import SpectralEmbedding
from sklearn.neighbors import NearestNeighbors

from reenet.errors import ConfigError, DataError
from reenet.indicators import IndicatorPanel
from reenet.ingest import TradePanel
from reenet.netbuild import ProductionNetwork

logger = logging.getLogger(__name__)

TIER_METRICS = (
    "exposure_all",
    "hhi_all",
    "str_all",
    "exposure_inputs",
    "hhi_inputs",
    "str_inputs",
    "pca",
    "influence",
)


def feature_names(t_max: int) -> list[str]:
    return [f"t{tier}_{metric}" for tier in range(t_max + 1) for metric in TIER_METRICS]


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    defined = ~np.isnan(values) & (weights > 0.0)
    total = weights[defined].sum()
    if total <= 0.0:
        return np.nan
    return float((values[defined] * weights[defined]).sum() / total)


def build_profile(
    country: str,
    year: int,
    indicator_panel: IndicatorPanel,
    network: ProductionNetwork,
    input_set: set[str],
    composites: pd.DataFrame,
    panel: TradePanel,
) -> dict:
    """One country-year profile row. Weights are the country's total import
    plus export value of each product that year; strata with zero defined
    weight stay missing."""
    t_max = network.t_max
    df = indicator_panel.records
    rows = df[(df["country"] == country) & (df["year"] == year)]
    comp = composites[(composites["country"] == country) & (composites["year"] == year)]
    comp_by_product = dict(zip(comp["hs6"], comp["composite"]))

    record: dict = {"country": country, "year": year}
    by_tier = dict(tuple(rows.groupby("tier")))
    for tier in range(t_max + 1):
        sub = by_tier.get(tier)
        if sub is None or len(sub) == 0:
            for metric in TIER_METRICS:
                record[f"t{tier}_{metric}"] = np.nan
            continue
        weights = np.array(
            [panel.trade_total(country, p, year) for p in sub["hs6"]], dtype=float
        )
        in_input = sub["hs6"].isin(input_set).to_numpy()
        composite_vals = np.array(
            [comp_by_product.get(p, np.nan) for p in sub["hs6"]], dtype=float
        )
        for metric, column in (
            ("exposure_all", "exposure"),
            ("hhi_all", "hhi"),
            ("str_all", "str"),
        ):
            record[f"t{tier}_{metric}"] = _weighted_mean(
                sub[column].to_numpy(dtype=float), weights
            )
        for metric, column in (
            ("exposure_inputs", "exposure"),
            ("hhi_inputs", "hhi"),
            ("str_inputs", "str"),
        ):
            record[f"t{tier}_{metric}"] = _weighted_mean(
                sub[column].to_numpy(dtype=float)[in_input], weights[in_input]
            )
        record[f"t{tier}_pca"] = _weighted_mean(composite_vals, weights)
        record[f"t{tier}_influence"] = _weighted_mean(
            sub["influence"].to_numpy(dtype=float), weights
        )
    assert len(record) - 2 == 8 * (t_max + 1)
    return record


def build_profiles(
    indicator_panel: IndicatorPanel,
    network: ProductionNetwork,
    input_sets: dict[str, set[str]],
    composites: pd.DataFrame,
    panel: TradePanel,
) -> pd.DataFrame:
    """Profiles for every (country, year) with at least one indicator
    record. Adds ``export_weight``, the country-year export value over
    networked products, for downstream export-weighted reporting."""
    df = indicator_panel.records
    pairs = df[["country", "year"]].drop_duplicates().sort_values(["country", "year"])
    rows = []
    for country, year in pairs.itertuples(index=False):
        record = build_profile(
            country,
            int(year),
            indicator_panel,
            network,
            input_sets.get(country, set()),
            composites,
            panel,
        )
        record["export_weight"] = sum(
            panel.export_total(country, p, int(year)) for p in network.tiered_products()
        )
        rows.append(record)
    columns = ["country", "year"] + feature_names(network.t_max) + ["export_weight"]
    return pd.DataFrame(rows, columns=columns)


@dataclass
class NormalizedFeatures:
    index: pd.DataFrame  # country, year
    matrix: np.ndarray
    imputed: np.ndarray  # bool mask, True where a cell was missing
    kept: list[str]
    dropped: list[str]


def normalize_features(profiles: pd.DataFrame) -> NormalizedFeatures:
    """Per-feature z-score across country-years; missing cells imputed with
    the post-normalization mean (zero) and masked. Constant or all-missing
    features are dropped with a warning."""
    if len(profiles) < 2:
        raise DataError(f"need >= 2 profiles to normalize, got {len(profiles)}")
    feature_cols = [c for c in profiles.columns if re.match(r"^t\d+_", c)]
    kept, dropped, columns, masks = [], [], [], []
    for col in feature_cols:
        values = profiles[col].to_numpy(dtype=float)
        observed = ~np.isnan(values)
        if not observed.any():
            dropped.append(col)
            continue
        mean = values[observed].mean()
        sd = values[observed].std()
        if sd == 0.0:
            dropped.append(col)
            continue
        z = (values - mean) / sd
        z[~observed] = 0.0
        columns.append(z)
        masks.append(~observed)
        kept.append(col)
    if dropped:
        logger.warning("dropped %d constant or empty features: %s", len(dropped), dropped)
    if not kept:
        raise DataError("no usable features after normalization")
    return NormalizedFeatures(
        index=profiles[["country", "year"]].reset_index(drop=True),
        matrix=np.column_stack(columns),
        imputed=np.column_stack(masks),
        kept=kept,
        dropped=dropped,
    )


def _fix_signs(coords: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive; removes
    the sign ambiguity of eigenvector-based embeddings."""
    coords = coords.copy()
    for k in range(coords.shape[1]):
        pivot = np.argmax(np.abs(coords[:, k]))
        if coords[pivot, k] < 0.0:
            coords[:, k] = -coords[:, k]
    return coords


def embed_2d(matrix: np.ndarray, method: str = "pca2", rng_seed: int = 0) -> np.ndarray:
    """Two-dimensional embedding, deterministic given the seed.

    ``pca2`` projects onto the first two principal components (baseline);
    ``spectral`` (alias ``neighbor``) is the nonlinear neighbor-graph
    reduction standing in for UMAP; ``umap`` uses umap-learn when installed.
    """
    matrix = np.asarray(matrix, dtype=float)
    if method == "pca2":
        if len(matrix) < 2:
            raise DataError("pca2 embedding needs >= 2 rows")
        centered = matrix - matrix.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        k = min(2, vt.shape[0])
        coords = centered @ vt[:k].T
        if k < 2:
            coords = np.column_stack([coords, np.zeros(len(coords))])
        return _fix_signs(coords)
    if method in ("spectral", "neighbor"):
        if len(matrix) < 10:
            raise DataError("neighbor embedding needs >= 10 rows")
        n_neighbors = min(10, len(matrix) - 1)
        embedder = SpectralEmbedding(
            n_components=2, n_neighbors=n_neighbors, random_state=rng_seed
        )
        coords = embedder.fit_transform(matrix)
        return _fix_signs(coords)
    if method == "umap":
        try:
            import umap
        except ImportError:
            raise ConfigError("umap embedding requested but umap-learn is not installed")
        if len(matrix) < 10:
            raise DataError("neighbor embedding needs >= 10 rows")
        return np.asarray(
            umap.UMAP(n_components=2, random_state=rng_seed).fit_transform(matrix),
            dtype=float,
        )
    raise ConfigError(f"unknown embedding method: {method!r}")


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters by decreasing size (ties by first appearance);
    outliers stay -1. Makes labelings comparable across reruns."""
    labels = np.asarray(labels)
    order = {}
    sizes = {}
    for pos, label in enumerate(labels):
        if label == -1:
            continue
        sizes[label] = sizes.get(label, 0) + 1
        order.setdefault(label, pos)
    ranked = sorted(sizes, key=lambda l: (-sizes[l], order[l]))
    mapping = {old: new for new, old in enumerate(ranked)}
    mapping[-1] = -1
    return np.array([mapping[l] for l in labels], dtype=int)


def cluster_density(
    coordinates: np.ndarray, eps: float | None = None, min_samples: int = 5
) -> np.ndarray:
    """Density-based cluster labels with -1 for outliers.

    ``eps=None`` picks a radius from the k-nearest-neighbor distance profile
    (1.5x its 75th percentile), which separates well-spaced groups without a
    hand-tuned scale. All-identical inputs collapse to one cluster.
    """
    coordinates = np.asarray(coordinates, dtype=float)
    if not np.isfinite(coordinates).all():
        raise DataError("cluster coordinates must be finite")
    if len(coordinates) == 0:
        return np.array([], dtype=int)
    if np.allclose(coordinates, coordinates[0]):
        return np.zeros(len(coordinates), dtype=int)
    if eps is None:
        k = min(min_samples, len(coordinates) - 1)
        nn = NearestNeighbors(n_neighbors=k + 1).fit(coordinates)
        distances, _ = nn.kneighbors(coordinates)
        kth = distances[:, -1]
        eps = 1.5 * float(np.percentile(kth, 75))
        if eps <= 0.0:
            eps = float(np.max(distances)) or 1e-12
    labels = DBSCAN(eps=eps, min_samples=min_samples).fit_predict(coordinates)
    return canonical_labels(labels)


def modal_assignment(assignments: pd.DataFrame) -> pd.DataFrame:
    """Per-country modal cluster label over years; ties resolve to the label
    held in the most recent year. Input columns: country, year, label."""
    rows = []
    for country, group in assignments.groupby("country", sort=True):
        counts = group["label"].value_counts()
        best = counts.max()
        tied = set(counts[counts == best].index)
        by_year = group.sort_values("year", ascending=False)
        modal = next(int(l) for l in by_year["label"] if l in tied)
        rows.append({"country": country, "modal_label": modal})
    return pd.DataFrame(rows, columns=["country", "modal_label"])
