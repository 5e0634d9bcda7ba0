"""Existing power plants: parsing, cross-database matching, regional totals."""
from __future__ import annotations

import csv
import io
import logging
import re
import string
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from gridweaver.errors import GridweaverError, SchemaError
from gridweaver.geo import haversine_km
from gridweaver.regions import RegionCell, locate_points, nearest_cell

logger = logging.getLogger(__name__)

FUELS = ("coal", "gas", "oil", "hydro", "wind", "solar", "nuclear", "biomass", "geothermal")
REQUIRED_COLUMNS = ("name", "country", "fuel", "capacity_mw", "lat", "lon")

FUEL_SYNONYMS = {
    "coal": "coal", "hard coal": "coal", "lignite": "coal", "petcoke": "coal",
    "gas": "gas", "natural gas": "gas", "ccgt": "gas", "ocgt": "gas", "lng": "gas",
    "oil": "oil", "diesel": "oil", "hfo": "oil", "heavy fuel oil": "oil", "petroleum": "oil", "fuel oil": "oil",
    "hydro": "hydro", "hydroelectric": "hydro", "run-of-river": "hydro", "run of river": "hydro",
    "reservoir": "hydro", "ror": "hydro",
    "wind": "wind", "onwind": "wind", "offwind": "wind", "wind onshore": "wind", "wind offshore": "wind",
    "solar": "solar", "pv": "solar", "solar pv": "solar", "photovoltaic": "solar",
    "nuclear": "nuclear",
    "biomass": "biomass", "bioenergy": "biomass", "waste": "biomass", "biogas": "biomass",
    "geothermal": "geothermal",
}


def normalize_fuel(raw: str) -> str | None:
    return FUEL_SYNONYMS.get(" ".join(str(raw).strip().lower().split()))


@dataclass(frozen=True)
class PowerPlant:
    name: str
    country: str
    fuel: str
    capacity_mw: float
    lon: float
    lat: float
    year: int | None = None
    source: str = ""
    id: str = ""

    def __post_init__(self):
        if not self.capacity_mw > 0:
            raise ValueError("capacity must be positive")
        if self.fuel not in FUELS:
            raise ValueError(f"unknown fuel {self.fuel!r}")


class RowRejection(NamedTuple):
    row: int
    reason: str


def parse_plants(source, source_name: str = "") -> tuple[list[PowerPlant], list[RowRejection]]:
    """Read a plant table (CSV text, path, or file object).

    Required columns: name,country,fuel,capacity_mw,lat,lon. Optional: id,
    year, source. ``row`` numbers in rejections count data rows from 1.
    """
    if isinstance(source, Path):
        text = source.read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = source
    reader = csv.DictReader(io.StringIO(text))
    header = [h.strip() for h in (reader.fieldnames or [])]
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise SchemaError(f"plant table is missing required column {col!r}")
    reader.fieldnames = header

    plants, rejected = [], []
    for i, row in enumerate(reader, start=1):
        def reject(reason):
            rejected.append(RowRejection(i, reason))

        try:
            cap = float(row["capacity_mw"])
        except (TypeError, ValueError):
            reject("invalid capacity")
            continue
        if not cap > 0:
            reject("non-positive capacity")
            continue
        try:
            lat, lon = float(row["lat"]), float(row["lon"])
        except (TypeError, ValueError):
            reject("missing coordinates")
            continue
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            reject("coordinates out of range")
            continue
        fuel = normalize_fuel(row["fuel"] or "")
        if fuel is None:
            reject(f"unknown fuel {row['fuel']!r}")
            continue
        year = None
        if row.get("year"):
            try:
                year = int(float(row["year"]))
            except ValueError:
                year = None
        src = (row.get("source") or source_name).strip()
        pid = (row.get("id") or "").strip() or f"{source_name or 'plant'}-{i}"
        plants.append(PowerPlant(
            name=row["name"].strip(), country=row["country"].strip().upper(), fuel=fuel,
            capacity_mw=cap, lon=lon, lat=lat, year=year, source=src, id=pid,
        ))
    return plants, rejected


# -- string similarity ------------------------------------------------------------

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def normalize_name(name: str) -> str:
    return " ".join(_PUNCT.sub(" ", name.lower()).split())


def jaro(s1: str, s2: str) -> float:
    if s1 == s2:
        return 1.0
    n1, n2 = len(s1), len(s2)
    if n1 == 0 or n2 == 0:
        return 0.0
    window = max(max(n1, n2) // 2 - 1, 0)
    used = [False] * n2
    m1 = []
    for i, ch in enumerate(s1):
        lo, hi = max(0, i - window), min(n2, i + window + 1)
        for j in range(lo, hi):
            if not used[j] and s2[j] == ch:
                used[j] = True
                m1.append(ch)
                break
    m = len(m1)
    if m == 0:
        return 0.0
    m2 = [s2[j] for j in range(n2) if used[j]]
    transpositions = sum(a != b for a, b in zip(m1, m2)) / 2.0
    return (m / n1 + m / n2 + (m - transpositions) / m) / 3.0


def jaro_winkler(s1: str, s2: str, prefix_scale: float = 0.1, max_prefix: int = 4) -> float:
    j = jaro(s1, s2)
    prefix = 0
    for a, b in zip(s1[:max_prefix], s2[:max_prefix]):
        if a != b:
            break
        prefix += 1
    return j + prefix * prefix_scale * (1.0 - j)


def name_similarity(a: str, b: str) -> float:
    # argument order fixed so the score is symmetric even where greedy Jaro matching is not
    s1, s2 = sorted((normalize_name(a), normalize_name(b)))
    return jaro_winkler(s1, s2)


# -- matching -----------------------------------------------------------------------


class MatchRecord(NamedTuple):
    a_id: str
    b_id: str
    similarity: float
    distance_km: float
    action: str


def _merge(pa: PowerPlant, pb: PowerPlant) -> tuple[PowerPlant, str]:
    big = max(pa.capacity_mw, pb.capacity_mw)
    if abs(pa.capacity_mw - pb.capacity_mw) <= 0.2 * big:
        cap, action = (pa.capacity_mw + pb.capacity_mw) / 2.0, "merged-mean"
    else:
        cap, action = pa.capacity_mw, "merged-priority"
    merged = replace(
        pa,
        capacity_mw=cap,
        year=pa.year if pa.year is not None else pb.year,
        source="+".join(s for s in (pa.source, pb.source) if s),
    )
    return merged, action


def match_plants(
    a: Sequence[PowerPlant],
    b: Sequence[PowerPlant],
    name_threshold: float = 0.85,
    dist_km: float = 10.0,
) -> tuple[list[PowerPlant], list[MatchRecord]]:
    """Deduplicate two plant lists; ``a`` is the priority source.

    Candidate pairs share country and fuel, lie within ``dist_km`` and reach
    ``name_threshold`` Jaro-Winkler similarity. Pairs are accepted greedily,
    most similar first (then nearest), each record used at most once.
    """
    if not 0.0 <= name_threshold <= 1.0 or dist_km < 0:
        raise GridweaverError("invalid match thresholds")
    by_key: dict[tuple[str, str], list[int]] = defaultdict(list)
    for j, p in enumerate(b):
        by_key[(p.country, p.fuel)].append(j)
    candidates = []
    for i, pa in enumerate(a):
        idx = by_key.get((pa.country, pa.fuel), [])
        if not idx:
            continue
        lon = np.array([b[j].lon for j in idx])
        lat = np.array([b[j].lat for j in idx])
        dists = haversine_km(pa.lon, pa.lat, lon, lat)
        for j, d in zip(idx, dists):
            if d > dist_km:
                continue
            sim = name_similarity(pa.name, b[j].name)
            if sim >= name_threshold:
                ids = tuple(sorted((pa.id, b[j].id)))
                candidates.append((-sim, float(d), ids, i, j))
    candidates.sort(key=lambda t: t[:3])

    used_a, used_b = set(), set()
    merged_at: dict[int, PowerPlant] = {}
    report = []
    for neg_sim, d, _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        merged, action = _merge(a[i], b[j])
        merged_at[i] = merged
        report.append(MatchRecord(a[i].id, b[j].id, -neg_sim, d, action))

    out = [merged_at.get(i, p) for i, p in enumerate(a)]
    out.extend(p for j, p in enumerate(b) if j not in used_b)
    report.sort(key=lambda r: (r.a_id, r.b_id))
    return out, report


# -- regional assignment ------------------------------------------------------------


def assign_to_regions(plants: Sequence[PowerPlant], cells: Sequence[RegionCell]) -> dict[tuple[str, str], float]:
    """Sum plant capacity per (bus_id, fuel) of the containing cell.

    Boundary ties go to the smallest bus_id; plants outside every cell go to
    the nearest cell with a warning.
    """
    if not cells:
        raise GridweaverError("no region cells to assign plants to")
    hits = locate_points([p.lon for p in plants], [p.lat for p in plants], cells)
    out: dict[tuple[str, str], float] = defaultdict(float)
    for p, h in zip(plants, hits):
        if h:
            bus = min(cells[k].bus_id for k in h)
        else:
            bus = cells[nearest_cell(p.lon, p.lat, cells)].bus_id
            logger.warning("plant %s (%s) lies outside all cells; assigned to nearest cell %s", p.id, p.name, bus)
        out[(bus, p.fuel)] += p.capacity_mw
    return dict(sorted(out.items()))


def hydro_inflow(runoff, annual_energy_mwh: float) -> np.ndarray:
    """Distribute an energy budget over hours in proportion to runoff."""
    r = np.asarray(runoff, dtype=float)
    if np.any(r < 0) or not np.all(np.isfinite(r)):
        raise GridweaverError("runoff must be finite and non-negative")
    total = r.sum()
    if total <= 0:
        raise GridweaverError("runoff series is all zero")
    return annual_energy_mwh * r / total


# -- persistence ------------------------------------------------------------------

PLANT_COLUMNS = ["id", "name", "country", "fuel", "capacity_mw", "lat", "lon", "year", "source"]


def write_plants(path, plants: Sequence[PowerPlant]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLANT_COLUMNS)
        for p in plants:
            w.writerow([p.id, p.name, p.country, p.fuel, repr(p.capacity_mw), repr(p.lat), repr(p.lon),
                        "" if p.year is None else p.year, p.source])


def write_match_report(path, report: Sequence[MatchRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a_id", "b_id", "similarity", "distance_km", "action"])
        for r in report:
            w.writerow([r.a_id, r.b_id, repr(r.similarity), repr(r.distance_km), r.action])


def write_capacity_table(path, capacity: dict[tuple[str, str], float]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus_id", "fuel", "capacity_mw"])
        for (bus, fuel), mw in sorted(capacity.items()):
            w.writerow([bus, fuel, repr(float(mw))])


def read_capacity_table(path) -> dict[tuple[str, str], float]:
    with open(path, newline="") as fh:
        return {(r["bus_id"], r["fuel"]): float(r["capacity_mw"]) for r in csv.DictReader(fh)}
