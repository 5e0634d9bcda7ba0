"""Parse substation and transmission-line GeoJSON into typed records."""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

from gridweaver.errors import ConfigError, ParseError

logger = logging.getLogger(__name__)

EXISTING = "existing"
PLANNED = "planned"
_PLANNED_WORDS = {"planned", "proposed", "construction", "under construction", "projected", "future"}


@dataclass(frozen=True)
class Dialect:
    """Attribute keys used by one family of source datasets.

    Each field lists the property names tried in order.
    """

    name: str
    id_keys: tuple[str, ...] = ("id",)
    voltage_keys: tuple[str, ...] = ("voltage",)
    circuits_keys: tuple[str, ...] = ("circuits",)
    status_keys: tuple[str, ...] = ("status",)
    country_keys: tuple[str, ...] = ("country",)


DIALECTS = {
    "worldbank": Dialect(
        "worldbank",
        id_keys=("id", "OBJECTID", "objectid"),
        voltage_keys=("voltage", "voltage_kV", "voltage_kv"),
        country_keys=("country", "iso2"),
    ),
    "osm": Dialect(
        "osm",
        id_keys=("id", "@id", "osm_id"),
        voltage_keys=("voltage",),
        status_keys=("status", "lifecycle"),
        country_keys=("country", "addr:country"),
    ),
}


def get_dialect(dialect) -> Dialect:
    if isinstance(dialect, Dialect):
        return dialect
    key = str(dialect).lower().replace("-style", "").replace("_", "")
    if key not in DIALECTS:
        raise ConfigError(f"unknown dialect {dialect!r}; expected one of {sorted(DIALECTS)}")
    return DIALECTS[key]


@dataclass(frozen=True)
class RawSubstation:
    id: str
    lon: float
    lat: float
    voltage_kv: float | None = None
    country: str | None = None
    source: str = "worldbank"


@dataclass(frozen=True)
class RawLine:
    id: str
    path: tuple[tuple[float, float], ...]
    voltage_kv: float | None = None
    circuits: int = 1
    status: str = EXISTING

    def __post_init__(self):
        if len(self.path) < 2:
            raise ValueError("line path needs at least two vertices")
        if self.circuits < 1:
            raise ValueError("circuits must be >= 1")


class Rejection(NamedTuple):
    feature_index: int
    reason: str


class ParseResult(NamedTuple):
    records: list
    rejected: list[Rejection]


def normalize_voltage(value) -> float | None:
    """Voltage tag to kV.

    Multi-valued tags (``"220;132"``) resolve to the maximum. Numbers >= 1000
    are volts, smaller ones are already kV, so the rule is idempotent.
    """
    if value is None:
        return None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        candidates = [float(value)]
    else:
        candidates = []
        for tok in re.split(r"[;,/|]", str(value)):
            tok = tok.strip().lower().replace("kv", "").strip()
            try:
                candidates.append(float(tok))
            except ValueError:
                continue
    kv = [v / 1000.0 if v >= 1000.0 else v for v in candidates if math.isfinite(v) and v > 0]
    return max(kv) if kv else None


def _first(props, keys):
    for k in keys:
        if k in props and props[k] not in (None, ""):
            return props[k]
    return None


def _load(source) -> dict:
    if isinstance(source, dict):
        return source
    if isinstance(source, Path):
        source = source.read_text()
    elif isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    return doc


def _features(doc) -> list:
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("document is not a GeoJSON FeatureCollection")
    feats = doc.get("features")
    if not isinstance(feats, list):
        raise ParseError("FeatureCollection has no 'features' array")
    for i, f in enumerate(feats):
        if not isinstance(f, dict) or f.get("type") != "Feature":
            raise ParseError("malformed feature", feature_index=i)
    return feats


def _valid_lonlat(lon, lat) -> bool:
    return -180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0


def _coord(pt, index):
    try:
        lon, lat = float(pt[0]), float(pt[1])
    except (TypeError, ValueError, IndexError) as exc:
        raise ParseError("malformed coordinate", feature_index=index) from exc
    return lon, lat


def parse_substations(source, dialect="worldbank") -> ParseResult:
    d = get_dialect(dialect)
    records, rejected = [], []
    for i, feat in enumerate(_features(_load(source))):
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            rejected.append(Rejection(i, "no point geometry"))
            continue
        lon, lat = _coord(geom.get("coordinates"), i)
        if not _valid_lonlat(lon, lat):
            rejected.append(Rejection(i, "coordinates out of range"))
            continue
        fid = _first(props, d.id_keys)
        if fid is None:
            fid = feat.get("id", f"s{i}")
        country = _first(props, d.country_keys)
        records.append(
            RawSubstation(
                id=str(fid),
                lon=lon,
                lat=lat,
                voltage_kv=normalize_voltage(_first(props, d.voltage_keys)),
                country=str(country).upper() if country is not None else None,
                source=d.name,
            )
        )
    return ParseResult(records, rejected)


def _status(value) -> str:
    if value is None:
        return EXISTING
    v = str(value).strip().lower().replace("_", " ")
    return PLANNED if any(w in v for w in _PLANNED_WORDS) else EXISTING


def _circuits(value) -> int:
    if value is None:
        return 1
    try:
        c = int(float(str(value).split(";")[0]))
    except ValueError:
        return 1
    return max(c, 1)


def parse_lines(source, dialect="worldbank") -> ParseResult:
    d = get_dialect(dialect)
    records, rejected = [], []
    for i, feat in enumerate(_features(_load(source))):
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        if geom.get("type") != "LineString":
            rejected.append(Rejection(i, "no linestring geometry"))
            continue
        coords = geom.get("coordinates")
        if not isinstance(coords, list):
            raise ParseError("malformed linestring coordinates", feature_index=i)
        path = []
        for pt in coords:
            c = _coord(pt, i)
            if not path or path[-1] != c:
                path.append(c)
        if not all(_valid_lonlat(*c) for c in path):
            rejected.append(Rejection(i, "coordinates out of range"))
            continue
        if len(path) < 2:
            rejected.append(Rejection(i, "degenerate geometry"))
            continue
        fid = _first(props, d.id_keys)
        if fid is None:
            fid = feat.get("id", f"l{i}")
        records.append(
            RawLine(
                id=str(fid),
                path=tuple(path),
                voltage_kv=normalize_voltage(_first(props, d.voltage_keys)),
                circuits=_circuits(_first(props, d.circuits_keys)),
                status=_status(_first(props, d.status_keys)),
            )
        )
    return ParseResult(records, rejected)


@dataclass
class FilterReport:
    kept: list
    rejected: list
    missing_voltage: list

    def counts(self) -> dict:
        return {"kept": len(self.kept), "rejected": len(self.rejected), "missing_voltage": len(self.missing_voltage)}


def filter_transmission(assets: Sequence, threshold_kv: float = 110.0, keep_missing: bool = False) -> FilterReport:
    """Keep assets at or above ``threshold_kv`` (inclusive)."""
    if not threshold_kv > 0:
        raise ConfigError("threshold_kv must be positive")
    kept, rejected, missing = [], [], []
    for a in assets:
        if a.voltage_kv is None:
            missing.append(a)
            if keep_missing:
                kept.append(a)
        elif a.voltage_kv >= threshold_kv:
            kept.append(a)
        else:
            rejected.append(a)
    return FilterReport(kept, rejected, missing)


def write_rejections(path, rejections: Sequence[Rejection]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_index", "reason"])
        for r in rejections:
            w.writerow([r.feature_index, r.reason])


def substations_to_geojson(subs: Sequence[RawSubstation]) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [s.lon, s.lat]},
                "properties": {"id": s.id, "voltage": s.voltage_kv, "country": s.country},
            }
            for s in subs
        ],
    }


def lines_to_geojson(lines: Sequence[RawLine]) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": [list(p) for p in ln.path]},
                "properties": {"id": ln.id, "voltage": ln.voltage_kv, "circuits": ln.circuits, "status": ln.status},
            }
            for ln in lines
        ],
    }
