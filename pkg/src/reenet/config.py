"""Run configuration: a flat key-value file (YAML) with hard validation.

``rng_seed`` is mandatory; all stage randomness derives from it through
named sub-seeds, never from the wall clock.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from reenet.errors import ConfigError
from reenet.netbuild import DEFAULT_SEEDS


@dataclass
class PipelineConfig:
    rng_seed: int
    # input paths
    trade_path: str | None = None
    pv_path: str | None = None
    links_path: str | None = None
    out_dir: str = "out"
    jobs: int = 1
    # ingest
    year_min: int = 2007
    year_max: int = 2023
    max_reject_frac: float = 0.05
    vote_threshold: int = 6
    max_votes: int = 10
    regions: dict = field(default_factory=dict)
    # link validation / network
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    z_threshold: float = 2.0
    n_perm: int = 1000
    min_pool: int = 20
    corr_mode: str = "pooled"
    corr_transform: str = "levels"
    # indicators
    clamp_delta: float = 1e-6
    include_self_influence: bool = False
    # scores
    strength_rule: str = "mean"
    min_pca_records: int = 10
    # profiles / clustering
    embed_method: str = "spectral"
    cluster_eps: float | None = None
    cluster_min_samples: int = 5
    # regression
    baseline_window: tuple = (2008, 2011)
    outcome_window: tuple = (2020, 2023)
    se_type: str = "robust"
    ref_cluster: int = 1
    ref_tier: int = 0
    input_aggregation: str = "mean"
    # sweep
    sweep_window_length: int = 4
    sweep_step: int = 2
    sweep_min_gap: int = 4
    # synth stage overrides (SynthConfig fields)
    synth: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rng_seed is None:
            raise ConfigError("rng_seed is mandatory (no wall-clock seeding)")
        self.rng_seed = int(self.rng_seed)
        self.baseline_window = tuple(int(y) for y in self.baseline_window)
        self.outcome_window = tuple(int(y) for y in self.outcome_window)
        if len(self.baseline_window) != 2 or len(self.outcome_window) != 2:
            raise ConfigError("windows must be [start_year, end_year] pairs")
        if self.corr_mode not in ("pooled", "per-year"):
            raise ConfigError(f"corr_mode must be pooled or per-year, got {self.corr_mode!r}")
        if self.corr_transform not in ("levels", "log1p"):
            raise ConfigError(f"corr_transform must be levels or log1p, got {self.corr_transform!r}")
        if self.strength_rule not in ("mean", "majority"):
            raise ConfigError(f"strength_rule must be mean or majority, got {self.strength_rule!r}")
        if self.se_type not in ("robust", "classical"):
            raise ConfigError(f"se_type must be robust or classical, got {self.se_type!r}")
        if self.input_aggregation not in ("mean", "trade-weighted"):
            raise ConfigError(
                f"input_aggregation must be mean or trade-weighted, got {self.input_aggregation!r}"
            )
        if self.n_perm < 100:
            raise ConfigError(f"n_perm must be >= 100, got {self.n_perm}")
        self.seeds = [str(s) for s in self.seeds]
        self.regions = {str(k): [str(m) for m in v] for k, v in (self.regions or {}).items()}

    @classmethod
    def from_dict(cls, payload: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "rng_seed" not in payload:
            raise ConfigError("rng_seed is mandatory (no wall-clock seeding)")
        return cls(**payload)

    @classmethod
    def from_yaml(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                payload = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"unparseable config {path}: {exc}")
        if not isinstance(payload, dict):
            raise ConfigError(f"config {path} must be a key-value mapping")
        return cls.from_dict(payload)

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["baseline_window"] = list(self.baseline_window)
        payload["outcome_window"] = list(self.outcome_window)
        return payload
