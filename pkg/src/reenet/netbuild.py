"""Validate candidate input-output links and assemble the tiered product DAG.

A candidate link (i -> j) is scored by the Pearson correlation between
countries' total imports of i and total exports of j, pooled over country-
years. Significance comes from a permutation null: hold i fixed, redraw the
output product uniformly from the pool, and compare the observed correlation
against the empirical null via a Z-score and an upper-tail permutation
p-value with add-one smoothing.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
import pandas as pd

from reenet import _kernels
from reenet.errors import (
    DegenerateCorrelationError,
    DegenerateNullError,
    PoolTooSmallError,
    ProductAbsentError,
    ReenetError,
)
from reenet.ingest import MarginalMatrix, TradePanel

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = ("280530", "284610", "284690")


@dataclass(frozen=True)
class CorrelationObservation:
    country: str
    year: int
    in_value: float
    out_value: float


@dataclass(frozen=True)
class LinkTestResult:
    input_product: str
    output_product: str
    rho: float
    z_score: float
    p_value: float
    n_obs: int
    n_perm: int


@dataclass(frozen=True)
class ValidatedEdge:
    input_product: str
    output_product: str
    rho: float
    weight_kusd: float


@dataclass
class LinkTestConfig:
    rng_seed: int
    z_threshold: float = 2.0
    n_perm: int = 1000
    min_pool: int = 20
    mode: str = "pooled"  # or "per-year"
    transform: str = "levels"  # or "log1p"
    max_redraw_factor: int = 10


def _series_pair(panel: TradePanel, input_product: str, output_product: str):
    marg = panel.marginals()
    for product in (input_product, output_product):
        if product not in marg.products:
            raise ProductAbsentError(f"product absent: {product}")
    x = marg.imports[marg.product_row(input_product)]
    y = marg.exports[marg.product_row(output_product)]
    return marg, x, y


def _check_present(marg: MarginalMatrix, product: str) -> None:
    row = marg.product_row(product)
    if not (marg.imports[row].any() or marg.exports[row].any()):
        raise ProductAbsentError(f"product absent: {product}")


def correlation_series(
    panel: TradePanel, input_product: str, output_product: str
) -> list[CorrelationObservation]:
    """Country-year observations pairing imports of the input product with
    exports of the output product; cells zero on both sides are excluded."""
    marg, x, y = _series_pair(panel, input_product, output_product)
    _check_present(marg, input_product)
    _check_present(marg, output_product)
    labels = marg.cell_labels()
    keep = (x != 0.0) | (y != 0.0)
    return [
        CorrelationObservation(labels[i][0], labels[i][1], float(x[i]), float(y[i]))
        for i in np.flatnonzero(keep)
    ]


def pearson_rho(observations: list[CorrelationObservation]) -> float:
    """Plain Pearson correlation of in_value vs out_value."""
    if len(observations) < 3:
        raise DegenerateCorrelationError(
            f"undefined correlation: {len(observations)} observations (need >= 3)"
        )
    x = np.array([o.in_value for o in observations])
    y = np.array([o.out_value for o in observations])
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx <= 0.0 or vy <= 0.0:
        raise DegenerateCorrelationError("undefined correlation: zero variance")
    return float((dx @ dy) / np.sqrt(vx * vy))


def _transform(values: np.ndarray, transform: str) -> np.ndarray:
    if transform == "levels":
        return values
    if transform == "log1p":
        # log1p(0) == 0, so the nonzero-cell mask is unchanged
        return np.log1p(values)
    raise ValueError(f"unknown transform: {transform!r}")


def _stat_batch(x: np.ndarray, rows: np.ndarray, n_years: int, mode: str) -> np.ndarray:
    if mode == "pooled":
        return _kernels.masked_pearson_batch(x, np.ascontiguousarray(rows))
    if mode == "per-year":
        # robustness mode: correlation across countries within each year,
        # averaged over years where it is defined
        out = np.empty(len(rows))
        x2 = x.reshape(-1, n_years)
        for k, row in enumerate(rows):
            y2 = row.reshape(-1, n_years)
            vals = [
                _kernels.masked_pearson(
                    np.ascontiguousarray(x2[:, t]), np.ascontiguousarray(y2[:, t])
                )
                for t in range(n_years)
            ]
            vals = [v for v in vals if not np.isnan(v)]
            out[k] = np.mean(vals) if vals else np.nan
        return out
    raise ValueError(f"unknown correlation mode: {mode!r}")


def permutation_test(
    panel: TradePanel,
    input_product: str,
    candidate_output: str,
    output_pool: list[str],
    n_perm: int,
    rng_seed,
    min_pool: int = 20,
    mode: str = "pooled",
    transform: str = "levels",
    max_redraw_factor: int = 10,
) -> LinkTestResult:
    """Permutation Z-test of the candidate link against random output draws.

    The null distribution holds the input fixed and redraws the output
    product uniformly from ``output_pool``; draws with undefined correlation
    are redrawn up to a capped number of attempts. p-value is the upper-tail
    fraction with add-one smoothing, (r + 1) / (n_perm + 1).
    """
    if input_product in output_pool:
        raise ValueError("output pool must exclude the input product")
    if n_perm < 100:
        raise ValueError(f"n_perm must be >= 100, got {n_perm}")
    if len(output_pool) < min_pool:
        raise PoolTooSmallError(
            f"output pool has {len(output_pool)} products (< {min_pool})"
        )

    marg, x, y = _series_pair(panel, input_product, candidate_output)
    _check_present(marg, input_product)
    _check_present(marg, candidate_output)
    n_years = len(marg.years)
    x = _transform(x, transform)
    y = _transform(y, transform)

    n_obs = int(((x != 0.0) | (y != 0.0)).sum())
    rho_obs = float(_stat_batch(x, y[None, :], n_years, mode)[0])
    if np.isnan(rho_obs):
        raise DegenerateCorrelationError(
            f"undefined correlation for ({input_product}, {candidate_output})"
        )

    pool_rows = np.ascontiguousarray(
        _transform(marg.exports[[marg.product_row(p) for p in output_pool]], transform)
    )
    rng = np.random.default_rng(rng_seed)
    cache: dict[int, float] = {}
    null_parts: list[np.ndarray] = []
    needed = n_perm
    attempts = 0
    cap = max(n_perm * max_redraw_factor, n_perm + 100)
    while needed > 0:
        if attempts >= cap:
            raise DegenerateNullError(
                f"could not form null: {attempts} draws yielded "
                f"{n_perm - needed} defined correlations"
            )
        idx = rng.integers(0, len(output_pool), size=needed)
        attempts += needed
        fresh = [i for i in np.unique(idx) if i not in cache]
        if fresh:
            vals = _stat_batch(x, pool_rows[fresh], n_years, mode)
            cache.update(zip(fresh, (float(v) for v in vals)))
        drawn = np.array([cache[i] for i in idx])
        drawn = drawn[~np.isnan(drawn)]
        null_parts.append(drawn)
        needed -= len(drawn)
    null = np.concatenate(null_parts)[:n_perm]

    sd = float(null.std())
    if sd == 0.0:
        raise DegenerateNullError("degenerate null: zero spread")
    z = (rho_obs - float(null.mean())) / sd
    r = int((null >= rho_obs).sum())
    p = (r + 1) / (n_perm + 1)
    return LinkTestResult(
        input_product, candidate_output, rho_obs, float(z), float(p), n_obs, n_perm
    )


def validate_links(candidates, panel: TradePanel, config: LinkTestConfig):
    """Test every candidate link; never aborts the batch.

    Returns (edges, results table). Retained edges need z >= threshold and
    a positive observed correlation. Per-link failures become drop records.
    Each link derives its own seed from (rng_seed, input, output), so results
    do not depend on scheduling order.
    """
    marg = panel.marginals()
    rows = []
    edges: list[ValidatedEdge] = []
    for link in candidates.links:
        pool = [p for p in marg.products if p != link.input_product]
        record = {
            "input_hs6": link.input_product,
            "output_hs6": link.output_product,
            "rho": np.nan,
            "z": np.nan,
            "p": np.nan,
            "n_obs": np.nan,
            "retained": 0,
            "drop_reason": "",
        }
        try:
            result = permutation_test(
                panel,
                link.input_product,
                link.output_product,
                pool,
                config.n_perm,
                [config.rng_seed, int(link.input_product), int(link.output_product)],
                min_pool=config.min_pool,
                mode=config.mode,
                transform=config.transform,
                max_redraw_factor=config.max_redraw_factor,
            )
        except (DegenerateCorrelationError,) as exc:
            record["drop_reason"] = "degenerate"
            logger.info("dropped %s->%s: %s", link.input_product, link.output_product, exc)
        except DegenerateNullError:
            record["drop_reason"] = "degenerate null"
        except PoolTooSmallError:
            record["drop_reason"] = "pool too small"
        except ProductAbsentError:
            record["drop_reason"] = "product absent"
        else:
            record.update(
                rho=result.rho, z=result.z_score, p=result.p_value, n_obs=result.n_obs
            )
            if result.z_score >= config.z_threshold and result.rho > 0.0:
                record["retained"] = 1
                weight = float(marg.imports[marg.product_row(link.input_product)].sum())
                edges.append(
                    ValidatedEdge(link.input_product, link.output_product, result.rho, weight)
                )
            elif result.rho <= 0.0:
                record["drop_reason"] = "rho not positive"
            else:
                record["drop_reason"] = "z below threshold"
        rows.append(record)
    table = pd.DataFrame(
        rows,
        columns=["input_hs6", "output_hs6", "rho", "z", "p", "n_obs", "retained", "drop_reason"],
    )
    return edges, table


def assign_tiers(edges: list[tuple[str, str]], seeds: list[str]) -> dict[str, int]:
    """Multi-source BFS shortest path length from any seed; unreachable
    nodes are absent from the result."""
    adjacency: dict[str, list[str]] = {}
    for u, v in edges:
        adjacency.setdefault(u, []).append(v)
    for u in adjacency:
        adjacency[u].sort()
    tiers = {s: 0 for s in sorted(seeds)}
    queue = deque(sorted(seeds))
    while queue:
        node = queue.popleft()
        for nxt in adjacency.get(node, ()):
            if nxt not in tiers:
                tiers[nxt] = tiers[node] + 1
                queue.append(nxt)
    return tiers


@dataclass(frozen=True)
class ProductionNetwork:
    """Validated directed acyclic product graph with tier labels."""

    nodes: tuple[str, ...]
    edges: tuple[ValidatedEdge, ...]
    tiers: dict[str, int]
    seeds: tuple[str, ...]
    dropped_edges: tuple[dict, ...] = field(default_factory=tuple)

    def __post_init__(self):
        graph = nx.DiGraph()
        graph.add_nodes_from(self.nodes)
        graph.add_edges_from((e.input_product, e.output_product) for e in self.edges)
        if not nx.is_directed_acyclic_graph(graph):
            raise ReenetError("production network contains a cycle")
        for seed in self.seeds:
            if self.tiers.get(seed) != 0:
                raise ReenetError(f"seed {seed} does not carry tier 0")

    @property
    def t_max(self) -> int:
        return max(self.tiers.values()) if self.tiers else 0

    def tier(self, product: str) -> int | None:
        return self.tiers.get(product)

    def tiered_products(self) -> tuple[str, ...]:
        return tuple(sorted(self.tiers))

    def products_at_tier(self, tier: int) -> tuple[str, ...]:
        return tuple(sorted(p for p, t in self.tiers.items() if t == tier))

    def predecessors(self, product: str) -> tuple[str, ...]:
        return tuple(
            sorted(e.input_product for e in self.edges if e.output_product == product)
        )

    def to_json_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "nodes": [
                {"hs6": n, "tier": self.tiers.get(n)} for n in self.nodes
            ],
            "edges": [
                {
                    "input_hs6": e.input_product,
                    "output_hs6": e.output_product,
                    "rho": e.rho,
                    "weight_kusd": e.weight_kusd,
                }
                for e in self.edges
            ],
            "dropped_edges": list(self.dropped_edges),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ProductionNetwork":
        edges = tuple(
            ValidatedEdge(e["input_hs6"], e["output_hs6"], e["rho"], e["weight_kusd"])
            for e in payload["edges"]
        )
        tiers = {n["hs6"]: n["tier"] for n in payload["nodes"] if n["tier"] is not None}
        return cls(
            nodes=tuple(n["hs6"] for n in payload["nodes"]),
            edges=edges,
            tiers=tiers,
            seeds=tuple(payload["seeds"]),
            dropped_edges=tuple(payload.get("dropped_edges", ())),
        )


def build_network(edges: list[ValidatedEdge], seeds: list[str] | None = None) -> ProductionNetwork:
    """Build the tiered DAG; any cycle is broken by dropping its weakest
    |rho| edge (recorded), then tiers assigned by multi-source BFS."""
    seeds = sorted(seeds if seeds is not None else DEFAULT_SEEDS)
    if not seeds:
        raise ReenetError("seed set must be non-empty")
    edges = sorted(edges, key=lambda e: (e.input_product, e.output_product))
    graph = nx.DiGraph()
    graph.add_nodes_from(seeds)
    for e in edges:
        graph.add_edge(e.input_product, e.output_product, rho=e.rho)

    dropped: list[dict] = []
    while True:
        try:
            cycle = nx.find_cycle(graph, orientation="original")
        except nx.NetworkXNoCycle:
            break
        u, v, _ = min(cycle, key=lambda item: abs(graph.edges[item[0], item[1]]["rho"]))
        dropped.append(
            {"input_hs6": u, "output_hs6": v, "rho": graph.edges[u, v]["rho"], "reason": "cycle"}
        )
        graph.remove_edge(u, v)

    kept = tuple(
        e
        for e in edges
        if graph.has_edge(e.input_product, e.output_product)
    )
    if dropped:
        logger.warning("dropped %d edges to enforce acyclicity", len(dropped))
    tiers = assign_tiers([(e.input_product, e.output_product) for e in kept], seeds)
    nodes = tuple(sorted(set(graph.nodes)))
    return ProductionNetwork(nodes, kept, tiers, tuple(seeds), tuple(dropped))
