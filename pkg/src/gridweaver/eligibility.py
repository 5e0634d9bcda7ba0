"""Installable wind/solar capacity per region from raster exclusion rules."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import shapely
from scipy.spatial import cKDTree

from gridweaver.errors import GridweaverError, ParseError
from gridweaver.geo import LocalProjection
from gridweaver.regions import RegionCell

logger = logging.getLogger(__name__)

LANDCOVER = "landcover"
PROTECTED = "protected"
POPULATION = "population_density"
ELEVATION = "elevation_bathymetry"
LAYER_KINDS = (LANDCOVER, PROTECTED, POPULATION, ELEVATION)

DEFAULT_DENSITY_MW_PER_KM2 = {"wind": 3.0, "solar": 1.7}
_KEY_DIGITS = 6


@dataclass
class ExclusionRuleSet:
    excluded_landcover_codes: frozenset[int] = frozenset()
    protected_excluded: bool = False
    max_population_density: float = math.inf
    max_water_depth_m: float = 50.0
    buffer_km: float = 0.0

    def __post_init__(self):
        self.excluded_landcover_codes = frozenset(int(c) for c in self.excluded_landcover_codes)
        if self.max_population_density < 0 or self.buffer_km < 0:
            raise GridweaverError("exclusion thresholds must be non-negative")
        if not self.max_water_depth_m > 0:
            raise GridweaverError("max_water_depth_m must be positive")

    def layers_needed(self, offshore: bool) -> list[str]:
        kinds = []
        if self.excluded_landcover_codes:
            kinds.append(LANDCOVER)
        if self.protected_excluded:
            kinds.append(PROTECTED)
        if math.isfinite(self.max_population_density):
            kinds.append(POPULATION)
        if offshore:
            kinds.append(ELEVATION)
        return kinds


@dataclass
class RasterLayer:
    kind: str
    lon: np.ndarray
    lat: np.ndarray
    values: np.ndarray
    dx: float
    dy: float
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise GridweaverError(f"unknown raster kind {self.kind!r}")
        self.lon = np.asarray(self.lon, dtype=float)
        self.lat = np.asarray(self.lat, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if not (self.lon.shape == self.lat.shape == self.values.shape):
            raise GridweaverError("raster arrays differ in length")
        ux, uy = np.unique(self.lon), np.unique(self.lat)
        if len(ux) * len(uy) != len(self.lon):
            raise GridweaverError(f"{self.kind} raster is not a complete rectangular grid")
        for axis, step in ((ux, self.dx), (uy, self.dy)):
            if len(axis) > 1 and not np.allclose(np.diff(axis), step, rtol=1e-6, atol=1e-9):
                raise GridweaverError(f"{self.kind} raster spacing does not match its header")

    def lookup(self) -> dict:
        if self._index is None:
            self._index = {
                (round(x, _KEY_DIGITS), round(y, _KEY_DIGITS)): v
                for x, y, v in zip(self.lon.tolist(), self.lat.tolist(), self.values.tolist())
            }
        return self._index


def read_raster(path, kind: str | None = None) -> RasterLayer:
    """CSV ``lon,lat,value`` plus a JSON sidecar ``<path>.json`` with dx, dy, kind."""
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        raise ParseError(f"raster header {sidecar} not found")
    header = json.loads(sidecar.read_text())
    lon, lat, val = [], [], []
    with open(path, newline="") as fh:
        for lineno, r in enumerate(csv.DictReader(fh), start=2):
            try:
                lon.append(float(r["lon"]))
                lat.append(float(r["lat"]))
                val.append(float(r["value"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad raster record in {path}", line=lineno) from exc
    return RasterLayer(kind or header["kind"], np.array(lon), np.array(lat), np.array(val),
                       float(header["dx"]), float(header["dy"]))


def write_raster(path, layer: RasterLayer):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lon", "lat", "value"])
        for x, y, v in zip(layer.lon, layer.lat, layer.values):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps({"kind": layer.kind, "dx": layer.dx, "dy": layer.dy}, sort_keys=True) + "\n"
    )


def _excluded_mask(ref: RasterLayer, layers: Mapping[str, RasterLayer], rules: ExclusionRuleSet, offshore: bool):
    """Per reference-grid cell: (excluded by a rule, coverage missing)."""
    n = len(ref.lon)
    excluded = np.zeros(n, dtype=bool)
    missing = np.zeros(n, dtype=bool)
    keys = [(round(x, _KEY_DIGITS), round(y, _KEY_DIGITS)) for x, y in zip(ref.lon.tolist(), ref.lat.tolist())]

    def values(kind):
        layer = layers.get(kind)
        if layer is None:
            missing[:] = True
            return np.full(n, np.nan)
        idx = layer.lookup()
        v = np.array([idx.get(k, np.nan) for k in keys])
        missing[np.isnan(v)] = True
        return v

    with np.errstate(invalid="ignore"):
        if rules.excluded_landcover_codes:
            lc = values(LANDCOVER)
            codes = np.array(sorted(rules.excluded_landcover_codes), dtype=float)
            excluded |= np.isin(lc, codes)
        if rules.protected_excluded:
            excluded |= values(PROTECTED) > 0
        if math.isfinite(rules.max_population_density):
            excluded |= values(POPULATION) > rules.max_population_density
        if offshore:
            depth = -values(ELEVATION)
            excluded |= depth > rules.max_water_depth_m
    excluded &= ~missing

    if rules.buffer_km > 0 and excluded.any():
        proj = LocalProjection(ref.lon.mean(), ref.lat.mean())
        xy = np.column_stack(proj.forward(ref.lon, ref.lat))
        tree = cKDTree(xy)
        near = tree.query_ball_point(xy[excluded], r=rules.buffer_km)
        grown = excluded.copy()
        for lst in near:
            grown[lst] = True
        excluded = grown
    return excluded, missing


@dataclass
class Eligibility:
    bus_id: str
    eligible_fraction: float
    eligible_area_km2: float
    cells_total: int
    cells_missing: int


def eligible_fraction(
    region: RegionCell,
    layers: Mapping[str, RasterLayer],
    rules: ExclusionRuleSet,
    offshore: bool = False,
    reference: str | None = None,
) -> Eligibility:
    """Share of raster cells inside ``region`` that pass every active rule.

    The reference grid (default: the land-cover layer, else the first layer)
    decides which cells lie inside the region. Cells lacking a value in a
    layer an active rule needs are ineligible and counted as missing.
    """
    if not layers:
        raise GridweaverError("no raster layers supplied")
    ref_kind = reference or (LANDCOVER if LANDCOVER in layers else next(iter(layers)))
    ref = layers[ref_kind]
    inside = shapely.contains_xy(region.polygon, ref.lon, ref.lat) if not region.polygon.is_empty else np.zeros(len(ref.lon), bool)
    total = int(inside.sum())
    if total == 0:
        raise GridweaverError(
            f"region {region.bus_id} contains no raster cell centres; supply finer rasters"
        )
    excluded, missing = _excluded_mask(ref, layers, rules, offshore)
    ok = inside & ~excluded & ~missing
    frac = float(ok.sum()) / total
    return Eligibility(region.bus_id, frac, frac * region.area_km2, total, int((inside & missing).sum()))


def potential_mw(eligible_area_km2: float, density_mw_per_km2: float) -> float:
    if eligible_area_km2 < 0 or density_mw_per_km2 < 0:
        raise GridweaverError("area and density must be non-negative")
    return eligible_area_km2 * density_mw_per_km2


def write_potentials(path, rows):
    """rows: iterable of (bus_id, tech, Eligibility, potential_mw)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus_id", "tech", "eligible_fraction", "eligible_area_km2", "potential_mw"])
        for bus, tech, el, pot in rows:
            w.writerow([bus, tech, repr(el.eligible_fraction), repr(el.eligible_area_km2), repr(float(pot))])


def read_potentials(path) -> dict[tuple[str, str], float]:
    with open(path, newline="") as fh:
        return {(r["bus_id"], r["tech"]): float(r["potential_mw"]) for r in csv.DictReader(fh)}
