"""Pipeline orchestration: file-staged subcommands over one config.

Each stage reads its predecessors' emitted artifacts from the output
directory and writes its own atomically, so stages are independently
re-runnable and auditable. Exit codes: 0 ok, 2 config error, 3 data error,
4 numerical error; failures print machine-readable JSON to stderr.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from reenet import __version__, _kernels
from reenet.config import PipelineConfig
from reenet.econometrics import (
    build_design,
    build_observations,
    ols_fit,
    sign_stability,
    window_sweep,
)
from reenet.errors import ConfigError, DataError, NumericalError, ReenetError
from reenet.indicators import IndicatorPanel, compute_indicator_panel
from reenet.ingest import (
    IngestConfig,
    aggregate_region,
    load_candidate_links,
    load_pv_csv,
    load_trade_csv,
)
from reenet.io_utils import (
    atomic_write_text,
    manifest_hash,
    read_csv_artifact,
    read_json_artifact,
    require_inputs,
    write_csv_artifact,
    write_json_artifact,
)
from reenet.netbuild import (
    LinkTestConfig,
    ProductionNetwork,
    ValidatedEdge,
    build_network,
    validate_links,
)
from reenet.profiles import build_profiles, cluster_density, embed_2d, modal_assignment, normalize_features
from reenet.scores import (
    comparative_strengths,
    composite_scores,
    fit_pca,
    input_products,
    rca_table,
)
from reenet.synthgen import SynthConfig, generate

logger = logging.getLogger(__name__)

STAGE_INPUTS = {
    "ingest": [],
    "validate-links": ["trade_clean.csv", "links_candidates.csv"],
    "build-net": ["trade_clean.csv", "links_validated.csv"],
    "indicators": ["trade_clean.csv", "pv_clean.csv", "network.json"],
    "scores": ["trade_clean.csv", "indicators.csv", "network.json"],
    "profiles": ["trade_clean.csv", "indicators.csv", "scores.csv", "strengths.csv", "network.json"],
    "cluster": ["profiles.csv"],
    "regress": ["scores.csv", "indicators.csv", "network.json", "clusters.csv"],
    "sweep": ["scores.csv", "indicators.csv", "network.json", "clusters.csv"],
}

PIPELINE_ORDER = [
    "ingest",
    "validate-links",
    "build-net",
    "indicators",
    "scores",
    "profiles",
    "cluster",
    "regress",
    "sweep",
]


def _stage_manifest(cfg: PipelineConfig, stage: str, input_paths: list) -> str:
    return manifest_hash({"stage": stage, **cfg.to_dict()}, input_paths)


def _update_run_manifest(out_dir: Path, stage: str, manifest: str) -> None:
    path = out_dir / "run_manifest.json"
    payload = {"package_version": __version__, "kernel_backend": _kernels.BACKEND, "stages": {}}
    if path.exists():
        existing = json.loads(path.read_text())
        payload["stages"] = existing.get("stages", {})
    payload["stages"][stage] = manifest
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_panel(out_dir: Path, cfg: PipelineConfig):
    require_inputs(out_dir, ["trade_clean.csv"])
    return load_trade_csv(
        out_dir / "trade_clean.csv",
        IngestConfig(cfg.year_min, cfg.year_max, cfg.max_reject_frac),
    )


def _load_network(out_dir: Path) -> ProductionNetwork:
    payload = read_json_artifact(out_dir / "network.json")
    return ProductionNetwork.from_json_dict(payload)


def stage_ingest(cfg: PipelineConfig) -> None:
    for name, value in (("trade_path", cfg.trade_path), ("pv_path", cfg.pv_path), ("links_path", cfg.links_path)):
        if not value:
            raise ConfigError(f"{name} is required for the ingest stage")
        if not Path(value).exists():
            raise DataError(f"missing input: {value}")
    out_dir = Path(cfg.out_dir)
    manifest = _stage_manifest(cfg, "ingest", [cfg.trade_path, cfg.pv_path, cfg.links_path])

    panel = load_trade_csv(cfg.trade_path, IngestConfig(cfg.year_min, cfg.year_max, cfg.max_reject_frac))
    for region_code, members in cfg.regions.items():
        present = set(members) & set(panel.countries)
        absent = sorted(set(members) - present)
        if absent:
            logger.warning("region %s: %d members absent from panel: %s", region_code, len(absent), absent)
        if not present:
            logger.warning("region %s skipped: no members present", region_code)
            continue
        panel = aggregate_region(panel, present, region_code)
    pv = load_pv_csv(cfg.pv_path)
    links = load_candidate_links(cfg.links_path, cfg.vote_threshold, cfg.max_votes)

    trade_out = panel.flows.rename(columns={"value": "value_kusd"})[
        ["year", "exporter", "importer", "hs6", "value_kusd"]
    ]
    write_csv_artifact(trade_out, out_dir / "trade_clean.csv", manifest)
    pv_out = pv.entries.rename(columns={"pv": "pv_percentile"})[["country", "year", "pv_percentile"]]
    write_csv_artifact(pv_out, out_dir / "pv_clean.csv", manifest)
    write_csv_artifact(links.to_frame(), out_dir / "links_candidates.csv", manifest)
    write_json_artifact(
        {
            "trade": {
                "rows": panel.report.n_rows,
                "rejected": panel.report.n_rejected,
                "duplicates_merged": panel.report.n_duplicates_merged,
                "reject_sample": panel.report.reject_reasons,
            },
            "pv": {"rows": pv.report.n_rows, "rejected": pv.report.n_rejected},
            "links": {
                "rows": links.report.n_rows,
                "rejected": links.report.n_rejected,
                "retained": len(links),
            },
            "regions_applied": sorted(cfg.regions),
        },
        out_dir / "ingest_report.json",
        manifest,
    )
    _update_run_manifest(out_dir, "ingest", manifest)


def stage_validate_links(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    require_inputs(out_dir, STAGE_INPUTS["validate-links"])
    manifest = _stage_manifest(
        cfg, "validate-links", [out_dir / f for f in STAGE_INPUTS["validate-links"]]
    )
    panel = _load_panel(out_dir, cfg)
    links = load_candidate_links(out_dir / "links_candidates.csv", cfg.vote_threshold, cfg.max_votes)
    test_config = LinkTestConfig(
        rng_seed=cfg.rng_seed,
        z_threshold=cfg.z_threshold,
        n_perm=cfg.n_perm,
        min_pool=cfg.min_pool,
        mode=cfg.corr_mode,
        transform=cfg.corr_transform,
    )
    _, table = validate_links(links, panel, test_config)
    write_csv_artifact(table, out_dir / "links_validated.csv", manifest)
    _update_run_manifest(out_dir, "validate-links", manifest)


def stage_build_net(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    require_inputs(out_dir, STAGE_INPUTS["build-net"])
    manifest = _stage_manifest(cfg, "build-net", [out_dir / f for f in STAGE_INPUTS["build-net"]])
    panel = _load_panel(out_dir, cfg)
    table = read_csv_artifact(out_dir / "links_validated.csv", dtypes={"input_hs6": str, "output_hs6": str})
    marg = panel.marginals()
    edges = [
        ValidatedEdge(
            row.input_hs6,
            row.output_hs6,
            float(row.rho),
            float(marg.imports[marg.product_row(row.input_hs6)].sum())
            if row.input_hs6 in marg.products
            else 0.0,
        )
        for row in table.itertuples(index=False)
        if row.retained == 1
    ]
    network = build_network(edges, cfg.seeds)
    write_json_artifact(network.to_json_dict(), out_dir / "network.json", manifest)
    _update_run_manifest(out_dir, "build-net", manifest)


def stage_indicators(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    require_inputs(out_dir, STAGE_INPUTS["indicators"])
    manifest = _stage_manifest(cfg, "indicators", [out_dir / f for f in STAGE_INPUTS["indicators"]])
    panel = _load_panel(out_dir, cfg)
    pv = load_pv_csv(out_dir / "pv_clean.csv")
    network = _load_network(out_dir)
    indicator_panel = compute_indicator_panel(
        panel,
        pv,
        network,
        clamp_delta=cfg.clamp_delta,
        include_self_influence=cfg.include_self_influence,
        jobs=cfg.jobs,
    )
    write_csv_artifact(indicator_panel.records, out_dir / "indicators.csv", manifest)
    _update_run_manifest(out_dir, "indicators", manifest)


def stage_scores(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    require_inputs(out_dir, STAGE_INPUTS["scores"])
    manifest = _stage_manifest(cfg, "scores", [out_dir / f for f in STAGE_INPUTS["scores"]])
    panel = _load_panel(out_dir, cfg)
    indicator_panel = IndicatorPanel(
        read_csv_artifact(out_dir / "indicators.csv", dtypes={"hs6": str})
    )
    network = _load_network(out_dir)

    model = fit_pca(indicator_panel, cfg.min_pca_records)
    composites = composite_scores(model, indicator_panel)
    rca_values = rca_table(panel)
    scores = rca_values.merge(composites, on=["country", "hs6", "year"], how="outer")
    scores = scores.sort_values(["year", "hs6", "country"], kind="mergesort").reset_index(drop=True)
    write_csv_artifact(scores, out_dir / "scores.csv", manifest)

    strength_rows = []
    for country in panel.countries:
        strengths = comparative_strengths(
            panel, country, rule=cfg.strength_rule, rca_values=rca_values
        )
        inputs = input_products(network, strengths)
        for product in sorted(strengths | inputs):
            strength_rows.append(
                {
                    "country": country,
                    "hs6": product,
                    "is_strength": int(product in strengths),
                    "is_input_product": int(product in inputs),
                }
            )
    strengths_df = pd.DataFrame(
        strength_rows, columns=["country", "hs6", "is_strength", "is_input_product"]
    )
    write_csv_artifact(strengths_df, out_dir / "strengths.csv", manifest)
    write_json_artifact(model.to_json_dict(), out_dir / "pca_model.json", manifest)
    _update_run_manifest(out_dir, "scores", manifest)


def stage_profiles(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    require_inputs(out_dir, STAGE_INPUTS["profiles"])
    manifest = _stage_manifest(cfg, "profiles", [out_dir / f for f in STAGE_INPUTS["profiles"]])
    panel = _load_panel(out_dir, cfg)
    indicator_panel = IndicatorPanel(
        read_csv_artifact(out_dir / "indicators.csv", dtypes={"hs6": str})
    )
    network = _load_network(out_dir)
    scores = read_csv_artifact(out_dir / "scores.csv", dtypes={"hs6": str})
    strengths = read_csv_artifact(out_dir / "strengths.csv", dtypes={"hs6": str})
    input_sets: dict[str, set] = {}
    for row in strengths[strengths["is_input_product"] == 1].itertuples(index=False):
        input_sets.setdefault(row.country, set()).add(row.hs6)
    composites = scores[["country", "hs6", "year", "composite"]]
    profiles = build_profiles(indicator_panel, network, input_sets, composites, panel)
    write_csv_artifact(profiles, out_dir / "profiles.csv", manifest)
    _update_run_manifest(out_dir, "profiles", manifest)


def stage_cluster(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    require_inputs(out_dir, STAGE_INPUTS["cluster"])
    manifest = _stage_manifest(cfg, "cluster", [out_dir / f for f in STAGE_INPUTS["cluster"]])
    profiles = read_csv_artifact(out_dir / "profiles.csv")
    normalized = normalize_features(profiles)
    coords = embed_2d(normalized.matrix, cfg.embed_method, cfg.rng_seed)
    labels = cluster_density(coords, cfg.cluster_eps, cfg.cluster_min_samples)
    embedding = normalized.index.copy()
    embedding["x"] = coords[:, 0]
    embedding["y"] = coords[:, 1]
    embedding["label"] = labels
    write_csv_artifact(embedding, out_dir / "embedding.csv", manifest)
    clusters = modal_assignment(embedding)
    write_csv_artifact(clusters, out_dir / "clusters.csv", manifest)
    _update_run_manifest(out_dir, "cluster", manifest)


def _regression_inputs(cfg: PipelineConfig, out_dir: Path):
    scores = read_csv_artifact(out_dir / "scores.csv", dtypes={"hs6": str})
    rca_values = scores[["country", "hs6", "year", "rca"]].dropna(subset=["rca"])
    indicators = read_csv_artifact(out_dir / "indicators.csv", dtypes={"hs6": str})
    network = _load_network(out_dir)
    clusters = read_csv_artifact(out_dir / "clusters.csv")
    input_weights = None
    if cfg.input_aggregation == "trade-weighted":
        panel = _load_panel(out_dir, cfg)
        base_years = list(range(cfg.baseline_window[0], cfg.baseline_window[1] + 1))
        flows = panel.flows[panel.flows["year"].isin(base_years)]
        imp = flows.groupby(["importer", "hs6"])["value"].sum()
        exp = flows.groupby(["exporter", "hs6"])["value"].sum()
        weights = imp.add(exp, fill_value=0.0).rename("weight").reset_index()
        weights.columns = ["country", "hs6", "weight"]
        input_weights = weights
    return rca_values, indicators, network, clusters, input_weights


def stage_regress(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    require_inputs(out_dir, STAGE_INPUTS["regress"])
    manifest = _stage_manifest(cfg, "regress", [out_dir / f for f in STAGE_INPUTS["regress"]])
    rca_values, indicators, network, clusters, input_weights = _regression_inputs(cfg, out_dir)
    observations, report = build_observations(
        rca_values,
        indicators,
        network,
        clusters,
        cfg.baseline_window,
        cfg.outcome_window,
        cfg.input_aggregation,
        input_weights,
    )
    X, y = build_design(observations, cfg.ref_cluster, cfg.ref_tier)
    result = ols_fit(X, y, cfg.se_type)
    write_csv_artifact(result.to_frame(), out_dir / "regression.csv", manifest)
    write_json_artifact(
        {
            "n_obs": result.n_obs,
            "r_squared": result.r_squared,
            "se_type": result.se_type,
            "drop_report": report,
            "baseline_window": list(cfg.baseline_window),
            "outcome_window": list(cfg.outcome_window),
        },
        out_dir / "regression_report.json",
        manifest,
    )
    _update_run_manifest(out_dir, "regress", manifest)


def _sweep_windows(years: list[int], length: int, step: int) -> list[tuple[int, int]]:
    lo, hi = min(years), max(years)
    return [(y, y + length - 1) for y in range(lo, hi - length + 2, step)]


def stage_sweep(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    require_inputs(out_dir, STAGE_INPUTS["sweep"])
    manifest = _stage_manifest(cfg, "sweep", [out_dir / f for f in STAGE_INPUTS["sweep"]])
    rca_values, indicators, network, clusters, _ = _regression_inputs(cfg, out_dir)
    years = sorted(rca_values["year"].unique())
    windows = _sweep_windows(years, cfg.sweep_window_length, cfg.sweep_step)
    table = window_sweep(
        rca_values,
        indicators,
        network,
        clusters,
        windows,
        windows,
        min_gap=cfg.sweep_min_gap,
        se_type=cfg.se_type,
        ref_cluster=cfg.ref_cluster,
        ref_tier=cfg.ref_tier,
    )
    write_csv_artifact(table, out_dir / "sweep.csv", manifest)
    write_csv_artifact(sign_stability(table), out_dir / "sweep_summary.csv", manifest)
    _update_run_manifest(out_dir, "sweep", manifest)


def stage_synth(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.out_dir)
    try:
        synth_config = SynthConfig(**{"rng_seed": cfg.rng_seed, **cfg.synth})
    except TypeError as exc:
        raise ConfigError(f"invalid synth config: {exc}")
    manifest = manifest_hash({"stage": "synth", **cfg.to_dict()}, [])
    result = generate(synth_config, out_dir)
    for name in ("trade.csv", "pv.csv", "links.csv"):
        path = out_dir / name
        atomic_write_text(path, f"# manifest: {manifest}\n" + path.read_text())
    truth = read_json_artifact(out_dir / "truth.json")
    write_json_artifact(truth, out_dir / "truth.json", manifest)
    _update_run_manifest(out_dir, "synth", manifest)
    logger.info("synthetic data written to %s (%d true links)", out_dir, len(result["truth"]["true_edges"]))


STAGE_RUNNERS = {
    "ingest": stage_ingest,
    "validate-links": stage_validate_links,
    "build-net": stage_build_net,
    "indicators": stage_indicators,
    "scores": stage_scores,
    "profiles": stage_profiles,
    "cluster": stage_cluster,
    "regress": stage_regress,
    "sweep": stage_sweep,
    "synth": stage_synth,
}


def run_stage(name: str, cfg: PipelineConfig) -> None:
    STAGE_RUNNERS[name](cfg)


def _fail(stage: str, exc: Exception) -> None:
    code = getattr(exc, "exit_code", None)
    if code is None:
        for klass in (ConfigError, DataError, NumericalError):
            if isinstance(exc, klass):
                code = klass.exit_code
                break
    if code is None:
        code = 4 if isinstance(exc, (np.linalg.LinAlgError, FloatingPointError)) else 1
    sys.stderr.write(
        json.dumps({"stage": stage, "error": type(exc).__name__, "message": str(exc)}) + "\n"
    )
    sys.exit(code)


def _build_config(config_path, out, jobs, seed) -> PipelineConfig:
    try:
        if config_path:
            cfg = PipelineConfig.from_yaml(config_path)
        else:
            if seed is None:
                raise ConfigError("either --config or --seed must provide rng_seed")
            cfg = PipelineConfig(rng_seed=seed)
        if out:
            cfg.out_dir = out
        if jobs:
            cfg.jobs = jobs
        if seed is not None:
            cfg.rng_seed = seed
        return cfg
    except ReenetError as exc:
        _fail("config", exc)


def _stage_command(name: str):
    @click.command(name=name, help=f"Run the {name} stage.")
    @click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file.")
    @click.option("--out", type=click.Path(), default=None, help="Output directory override.")
    @click.option("--jobs", type=int, default=None, help="Worker cap for parallel sections.")
    @click.option("--seed", type=int, default=None, help="rng_seed override.")
    def command(config_path, out, jobs, seed):
        cfg = _build_config(config_path, out, jobs, seed)
        try:
            run_stage(name, cfg)
        except Exception as exc:  # noqa: BLE001 - mapped to exit codes
            _fail(name, exc)

    return command


@click.group()
@click.version_option(__version__)
def main():
    """Trade dependency network pipeline."""


for _name in list(STAGE_RUNNERS):
    main.add_command(_stage_command(_name))


@main.command(name="pipeline", help="Run all stages in order.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--jobs", type=int, default=None)
@click.option("--seed", type=int, default=None)
def pipeline_command(config_path, out, jobs, seed):
    cfg = _build_config(config_path, out, jobs, seed)
    for stage in PIPELINE_ORDER:
        try:
            run_stage(stage, cfg)
        except Exception as exc:  # noqa: BLE001 - mapped to exit codes
            _fail(stage, exc)


if __name__ == "__main__":
    main()
