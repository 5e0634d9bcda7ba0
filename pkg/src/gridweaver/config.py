"""Pipeline configuration: one YAML document with a section per module."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from gridweaver.errors import ConfigError
from gridweaver.lp.simplex import PRICING_RULES


@dataclass
class PathsConfig:
    substations: str = ""
    lines: str = ""
    plants: list[str] = field(default_factory=list)  # priority order
    weather: str = ""
    rasters: dict[str, str] = field(default_factory=dict)  # layer kind -> csv
    country_shapes: str = ""
    output_dir: str = "output"


@dataclass
class IngestConfig:
    dialect: str = "worldbank"
    threshold_kv: float = 110.0
    keep_missing_voltage: bool = False


@dataclass
class BuildConfig:
    snap_tol_km: float = 2.0
    include_planned: bool = False
    param_table: dict[float, list[float]] | None = None  # kV -> [r/km, x/km, MVA per circuit]


@dataclass
class PlantsConfig:
    name_threshold: float = 0.85
    dist_km: float = 10.0
    hydro_capacity_factor: float = 0.45


@dataclass
class ClusterConfig:
    k: int = 2
    seed: int | None = None  # falls back to the top-level seed
    per_country: bool = True
    n_init: int = 10


@dataclass
class ProfilesConfig:
    annual_twh: dict[str, float] = field(default_factory=dict)
    weekday_factor: list[float] = field(default_factory=lambda: [1.0] * 24)
    weekend_factor: list[float] = field(default_factory=lambda: [1.0] * 24)
    seasonal_amplitude: float = 0.0
    peak_day: int = 0
    start_weekday: int = 0
    hub_height_m: float = 100.0
    cut_in: float = 3.0
    rated: float = 12.0
    cut_out: float = 25.0
    solar_temp_coeff: float = -0.004


@dataclass
class EligibilityConfig:
    excluded_landcover_codes: list[int] = field(default_factory=list)
    protected_excluded: bool = True
    max_population_density: float = math.inf
    max_water_depth_m: float = 50.0
    buffer_km: float = 0.0
    density_mw_per_km2: dict[str, float] = field(default_factory=lambda: {"wind": 3.0, "solar": 1.7})


@dataclass
class OptimizeConfig:
    snapshot_start: int = 0
    snapshot_count: int | None = None
    snapshot_stride: int = 1
    co2_cap: float = math.inf
    slack_penalty: float = 10_000.0
    pricing: str = "devex"
    tol: float = 1e-9
    costs: dict[str, dict[str, Any]] = field(default_factory=dict)  # overrides per technology


@dataclass
class ReportConfig:
    width_px: int = 800
    height_px: int = 600


SECTIONS = {
    "paths": PathsConfig,
    "ingest": IngestConfig,
    "build": BuildConfig,
    "plants": PlantsConfig,
    "cluster": ClusterConfig,
    "profiles": ProfilesConfig,
    "eligibility": EligibilityConfig,
    "optimize": OptimizeConfig,
    "report": ReportConfig,
}


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    build: BuildConfig = field(default_factory=BuildConfig)
    plants: PlantsConfig = field(default_factory=PlantsConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    profiles: ProfilesConfig = field(default_factory=ProfilesConfig)
    eligibility: EligibilityConfig = field(default_factory=EligibilityConfig)
    optimize: OptimizeConfig = field(default_factory=OptimizeConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    seed: int = 0
    base_dir: Path = field(default=Path("."), compare=False)

    @property
    def cluster_seed(self) -> int:
        return self.seed if self.cluster.seed is None else self.cluster.seed

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else (self.base_dir / path)

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.paths.output_dir)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        """sha256 over the canonical JSON form of every field."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=_json_default, allow_nan=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def validate(self, check_paths: bool = True):
        if self.ingest.threshold_kv <= 0:
            raise ConfigError("ingest.threshold_kv must be positive")
        if self.build.snap_tol_km < 0:
            raise ConfigError("build.snap_tol_km must be non-negative")
        if self.cluster.k < 1:
            raise ConfigError("cluster.k must be at least 1")
        if self.optimize.pricing not in PRICING_RULES:
            raise ConfigError(f"optimize.pricing must be one of {PRICING_RULES}")
        if not check_paths:
            return
        missing = []
        p = self.paths
        for label, value in [("substations", p.substations), ("lines", p.lines), ("weather", p.weather),
                             ("country_shapes", p.country_shapes)]:
            if not value or not self.resolve(value).exists():
                missing.append(f"paths.{label}={value!r}")
        for i, value in enumerate(p.plants):
            if not self.resolve(value).exists():
                missing.append(f"paths.plants[{i}]={value!r}")
        for kind, value in p.rasters.items():
            if not self.resolve(value).exists():
                missing.append(f"paths.rasters.{kind}={value!r}")
        if missing:
            raise ConfigError("input paths do not exist: " + ", ".join(missing))


def _json_default(o):
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _build_section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def config_from_dict(raw: dict, base_dir: Path | str = ".") -> PipelineConfig:
    raw = dict(raw or {})
    unknown = sorted(set(raw) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    kwargs = {name: _build_section(cls, raw.get(name), name) for name, cls in SECTIONS.items()}
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    cfg = PipelineConfig(**kwargs, seed=seed, base_dir=Path(base_dir))
    # YAML has no infinity literal that everyone remembers; accept strings like "inf"
    for section, key in (("optimize", "co2_cap"), ("eligibility", "max_population_density")):
        sec = getattr(cfg, section)
        val = getattr(sec, key)
        if val is None:
            setattr(sec, key, math.inf)
        elif isinstance(val, str):
            try:
                setattr(sec, key, float(val))
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: not a number: {val!r}") from exc
    cfg.validate(check_paths=False)
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config document must be a mapping")
    return config_from_dict(raw or {}, base_dir=path.resolve().parent)


def dump_config(cfg: PipelineConfig) -> str:
    d = cfg.to_dict()
    for section, key in (("optimize", "co2_cap"), ("eligibility", "max_population_density")):
        if math.isinf(d[section][key]):
            d[section][key] = "inf"
    return yaml.safe_dump(d, sort_keys=True)
