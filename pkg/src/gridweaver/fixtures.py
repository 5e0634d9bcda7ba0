"""Deterministic synthetic two-country dataset for tests, demos and benchmarks.

Country AA is a 4 x 4 degree square, BB an irregular pentagon to its east.
The generator writes every input the pipeline consumes: substation and line
GeoJSON (with 66 kV distribution assets, a planned line, a line without a
voltage tag and an unsnapped endpoint), two overlapping plant tables, a
long-format weather table, raster layers with sidecars, country shapes and a
YAML config.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import distance_matrix
from shapely.geometry import Point, Polygon, mapping

from gridweaver.eligibility import RasterLayer, write_raster

COUNTRY_SHAPES = {
    "AA": Polygon([(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]),
    "BB": Polygon([(4.0, 0.0), (8.0, 0.0), (8.0, 3.5), (6.0, 4.2), (4.0, 4.0)]),
}
ANNUAL_TWH = {"AA": 30.0, "BB": 18.0}
CITIES = [(1.2, 2.6, "AA"), (3.0, 0.9, "AA"), (5.5, 1.5, "BB"), (7.0, 3.0, "BB")]
_SYLLABLES = ["ako", "som", "bo", "ke", "ta", "nu", "ri", "ma", "lo", "da", "vi", "sa", "pe", "ku", "zo", "ne"]


@dataclass
class FixtureInfo:
    directory: Path
    config_path: Path
    n_buses: int  # buses expected in the built network
    hours: int
    kept_substations: int
    kept_lines: int
    voltages: dict[str, list[float | None]]  # raw voltage per substation/line feature


def _name(rng) -> str:
    n = int(rng.integers(2, 4))
    return "".join(rng.choice(_SYLLABLES, size=n)).capitalize()


def _sample_in(poly: Polygon, n: int, rng, min_sep: float) -> list[tuple[float, float]]:
    x0, y0, x1, y1 = poly.bounds
    pts: list[tuple[float, float]] = []
    inner = poly.buffer(-0.1)
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > 200_000:
            raise RuntimeError("could not place substations; lower n or min_sep")
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
        if not inner.contains(Point(x, y)):
            continue
        if all((x - a) ** 2 + (y - b) ** 2 >= min_sep**2 for a, b in pts):
            pts.append((round(x, 5), round(y, 5)))
    return pts


def _feature(geom_type, coords, props):
    return {"type": "Feature", "geometry": {"type": geom_type, "coordinates": coords}, "properties": props}


def _line_path(a, b, rng, km_offset=0.3):
    """Endpoints jittered by up to ``km_offset`` km plus a bent midpoint."""
    def jitter(p):
        ang = rng.uniform(0, 2 * math.pi)
        d = km_offset / 111.0
        return [round(p[0] + d * math.cos(ang), 6), round(p[1] + d * math.sin(ang), 6)]

    mid = [round((a[0] + b[0]) / 2 + rng.normal(0, 0.02), 6), round((a[1] + b[1]) / 2 + rng.normal(0, 0.02), 6)]
    return [jitter(a), mid, jitter(b)]


def make_fixture(directory, n_buses: int = 20, hours: int = 168, seed: int = 7, k: int = 4,
                 stride: int = 1) -> FixtureInfo:
    """Write a complete synthetic input set to ``directory``.

    ``n_buses`` is the bus count of the built network: ``n_buses - 1``
    transmission substations plus one virtual bus from an unsnapped endpoint.
    """
    if n_buses < 5:
        raise ValueError("n_buses must be at least 5")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_sub = n_buses - 1
    n_aa = (n_sub + 1) // 2
    counts = {"AA": n_aa, "BB": n_sub - n_aa}
    min_sep = 0.9 * math.sqrt(12.0 / max(n_sub, 1)) / 2

    subs = []  # (id, lon, lat, kv, country)
    for country in ("AA", "BB"):
        pts = _sample_in(COUNTRY_SHAPES[country], counts[country], rng, min_sep)
        for i, (x, y) in enumerate(pts):
            kv = float(rng.choice([110.0, 220.0, 330.0], p=[0.4, 0.4, 0.2]))
            subs.append((f"{country}-S{i:03d}", x, y, kv, country))
    xy = np.array([[s[1], s[2]] for s in subs])

    sub_feats, sub_volts = [], []
    for sid, x, y, kv, country in subs:
        v = str(int(kv * 1000)) if rng.random() < 0.5 else f"{int(kv)};66"
        sub_feats.append(_feature("Point", [x, y], {"id": sid, "voltage": v, "country": country}))
        sub_volts.append(kv)
    # distribution-level substations, a substation without voltage, a duplicate location
    extra66 = []
    for i in range(max(2, n_sub // 10)):
        country = "AA" if i % 2 == 0 else "BB"
        (x, y), = _sample_in(COUNTRY_SHAPES[country], 1, rng, 0.0)
        extra66.append((f"{country}-D{i:03d}", x, y))
        sub_feats.append(_feature("Point", [x, y], {"id": f"{country}-D{i:03d}", "voltage": "66000", "country": country}))
        sub_volts.append(66.0)
    (xm, ym), = _sample_in(COUNTRY_SHAPES["AA"], 1, rng, 0.0)
    sub_feats.append(_feature("Point", [xm, ym], {"id": "AA-NOV", "country": "AA"}))
    sub_volts.append(None)
    s0 = subs[0]
    sub_feats.append(_feature("Point", [s0[1], s0[2]], {"id": "AA-DUP", "voltage": "110", "country": "AA"}))
    sub_volts.append(110.0)
    sub_feats.append(_feature("LineString", [[0.5, 0.5], [0.6, 0.6]], {"id": "bad-geom"}))
    sub_volts.append(None)

    # transmission lines: per-country spanning tree, a few extra meshes, two interconnectors
    line_feats, line_volts = [], []
    edges = []
    for country in ("AA", "BB"):
        idx = [i for i, s in enumerate(subs) if s[4] == country]
        dm = distance_matrix(xy[idx], xy[idx])
        mst = minimum_spanning_tree(dm).tocoo()
        for a, b in sorted(zip(mst.row.tolist(), mst.col.tolist())):
            edges.append((idx[a], idx[b]))
        for a in range(0, len(idx), 4):
            order = np.argsort(dm[a])
            b = int(order[2]) if len(order) > 2 else int(order[-1])
            if a != b and (idx[a], idx[b]) not in edges and (idx[b], idx[a]) not in edges:
                edges.append((idx[a], idx[b]))
    aa = [i for i, s in enumerate(subs) if s[4] == "AA"]
    bb = [i for i, s in enumerate(subs) if s[4] == "BB"]
    cross = distance_matrix(xy[aa], xy[bb])
    for flat in np.argsort(cross, axis=None)[:2]:
        i, j = np.unravel_index(flat, cross.shape)
        edges.append((aa[int(i)], bb[int(j)]))
    for n, (a, b) in enumerate(edges):
        kv = min(subs[a][3], subs[b][3])
        circuits = 2 if rng.random() < 0.2 else 1
        path = _line_path(subs[a][1:3], subs[b][1:3], rng)
        if n == 0:
            path.insert(1, list(path[0]))  # repeated vertex, removed on parse
        line_feats.append(_feature("LineString", path, {
            "id": f"L{n:04d}", "voltage": str(int(kv * 1000)), "circuits": circuits, "status": "existing",
        }))
        line_volts.append(kv)
    kept_lines = len(edges)
    # unsnapped endpoint 5 km east of the first BB substation -> virtual bus
    sb = subs[bb[0]]
    far = (sb[1] + 5.0 / (111.195 * math.cos(math.radians(sb[2]))), sb[2])
    line_feats.append(_feature("LineString", [[sb[1], sb[2]], [round(far[0], 6), round(far[1], 6)]],
                               {"id": "L-SPUR", "voltage": "110", "status": "existing"}))
    line_volts.append(110.0)
    kept_lines += 1
    for i, (did, x, y) in enumerate(extra66):
        j = int(np.argmin(np.hypot(xy[:, 0] - x, xy[:, 1] - y)))
        line_feats.append(_feature("LineString", [[x, y], [subs[j][1], subs[j][2]]],
                                   {"id": f"D{i:03d}", "voltage": "66000"}))
        line_volts.append(66.0)
    line_feats.append(_feature("LineString", [[subs[aa[0]][1], subs[aa[0]][2]], [subs[bb[-1]][1], subs[bb[-1]][2]]],
                               {"id": "L-PLAN", "voltage": "330000", "status": "planned"}))
    line_volts.append(330.0)
    kept_lines += 1  # planned lines pass the voltage filter
    line_feats.append(_feature("LineString", [[subs[aa[1]][1], subs[aa[1]][2]], [subs[aa[2]][1], subs[aa[2]][2]]],
                               {"id": "L-NOV"}))
    line_volts.append(None)
    line_feats.append(_feature("Point", [1.0, 1.0], {"id": "L-BAD"}))
    line_volts.append(None)
    (d / "substations.geojson").write_text(json.dumps({"type": "FeatureCollection", "features": sub_feats}, indent=1) + "\n")
    (d / "lines.geojson").write_text(json.dumps({"type": "FeatureCollection", "features": line_feats}, indent=1) + "\n")

    (d / "countries.geojson").write_text(json.dumps({
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "geometry": mapping(p), "properties": {"country": c}}
            for c, p in COUNTRY_SHAPES.items()
        ],
    }, indent=1, default=list) + "\n")

    _write_plants(d, subs, rng)
    _write_weather(d, hours, rng)
    _write_rasters(d, rng)

    cfg = {
        "seed": seed,
        "paths": {
            "substations": "substations.geojson", "lines": "lines.geojson",
            "plants": ["plants_primary.csv", "plants_secondary.csv"],
            "weather": "weather.csv",
            "rasters": {"landcover": "landcover.csv", "protected": "protected.csv",
                        "population_density": "population.csv"},
            "country_shapes": "countries.geojson", "output_dir": "output",
        },
        "ingest": {"dialect": "worldbank", "threshold_kv": 110.0},
        "build": {"snap_tol_km": 2.0, "include_planned": False},
        "plants": {"name_threshold": 0.85, "dist_km": 10.0, "hydro_capacity_factor": 0.45},
        "cluster": {"k": k, "per_country": True, "n_init": 10},
        "profiles": {
            "annual_twh": dict(ANNUAL_TWH),
            "weekday_factor": [0.8] * 6 + [1.0] * 3 + [1.1] * 8 + [1.25] * 4 + [0.95] * 3,
            "weekend_factor": [0.75] * 6 + [0.9] * 3 + [1.0] * 8 + [1.15] * 4 + [0.85] * 3,
            "seasonal_amplitude": 0.1, "peak_day": 15,
        },
        "eligibility": {
            "excluded_landcover_codes": [3, 4], "protected_excluded": True,
            "max_population_density": 400.0, "buffer_km": 0.0,
        },
        "optimize": {"snapshot_stride": stride, "co2_cap": "inf"},
    }
    config_path = d / "config.yaml"
    config_path.write_text(yaml.safe_dump(cfg, sort_keys=True))
    return FixtureInfo(d, config_path, n_buses, hours, n_sub, kept_lines,
                       {"substations": sub_volts, "lines": line_volts})


def _write_plants(d: Path, subs, rng):
    primary, secondary = [], []
    fleet = {
        "AA": [("coal", 2, 500.0), ("gas", 3, 300.0), ("hydro", 2, 350.0), ("oil", 1, 150.0), ("solar", 1, 60.0)],
        "BB": [("gas", 2, 250.0), ("hydro", 2, 500.0), ("oil", 2, 120.0), ("wind", 1, 80.0)],
    }
    n = 0
    for country, items in fleet.items():
        hosts = [s for s in subs if s[4] == country]
        for fuel, count, size in items:
            for _ in range(count):
                host = hosts[int(rng.integers(len(hosts)))]
                name = _name(rng)
                cap = round(size * rng.uniform(0.7, 1.3), 1)
                lon = round(host[1] + rng.normal(0, 0.02), 5)
                lat = round(host[2] + rng.normal(0, 0.02), 5)
                year = int(rng.integers(1965, 2020))
                primary.append([f"P{n:03d}", name, country, fuel.title(), cap, lat, lon, year, "primary"])
                r = rng.random()
                if r < 0.6:  # duplicate in the secondary database
                    cap2 = round(cap * (rng.uniform(0.9, 1.1) if r < 0.45 else 1.5), 1)
                    alias = name + (" Power Station" if r < 0.3 else "")
                    secondary.append([f"Q{n:03d}", alias, country, "natural gas" if fuel == "gas" else fuel,
                                      cap2, round(lat + 0.005, 5), round(lon - 0.005, 5), "", "secondary"])
                n += 1
    for country in ("AA", "BB"):
        host = [s for s in subs if s[4] == country][-1]
        secondary.append([f"Q{n:03d}", _name(rng) + " Solar Park", country, "PV", 40.0,
                          round(host[2] + 0.03, 5), round(host[1] - 0.03, 5), 2018, "secondary"])
        n += 1
    secondary.append([f"Q{n:03d}", "Broken capacity", "AA", "gas", -5, 1.0, 1.0, "", "secondary"])
    secondary.append([f"Q{n + 1:03d}", "No location", "BB", "gas", 50, "", "", "", "secondary"])
    secondary.append([f"Q{n + 2:03d}", "Mystery", "BB", "unobtainium", 50, 1.0, 5.0, "", "secondary"])
    header = ["id", "name", "country", "fuel", "capacity_mw", "lat", "lon", "year", "source"]
    for fname, rows in (("plants_primary.csv", primary), ("plants_secondary.csv", secondary)):
        with open(d / fname, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)


def _write_weather(d: Path, hours: int, rng):
    lons = np.arange(0.25, 8.0, 0.5)
    lats = np.arange(0.25, 4.5, 0.5)
    t = np.arange(hours)
    hod = t % 24
    sun = np.clip(np.sin(np.pi * (hod - 6) / 12.0), 0.0, None)
    synoptic = 1.0 + 0.35 * np.sin(2 * np.pi * t / 97.0 + 0.7)
    with open(d / "weather.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "lon", "lat", "hour", "wind_ms", "ghi_wm2", "temp_c", "runoff"])
        for lon in lons:
            for lat in lats:
                cid = f"w{lon:.2f}_{lat:.2f}"
                base_wind = 4.0 + 0.5 * lon + rng.uniform(-0.5, 0.5)
                wind = np.clip(base_wind * synoptic * (1 + 0.15 * np.cos(2 * np.pi * (hod - 3) / 24)) + rng.normal(0, 0.6, hours), 0, None)
                clear = np.clip(0.85 - 0.04 * lat + rng.normal(0, 0.08, hours), 0.2, 1.0)
                ghi = 1050.0 * sun * clear
                temp = 24.0 + 7.0 * sun - 0.8 * lat + rng.normal(0, 0.5, hours)
                runoff = 1.0 + 0.5 * np.sin(2 * np.pi * (t + 24 * lat) / hours) + 0.2 * lat
                for h in range(hours):
                    w.writerow([cid, f"{lon:.2f}", f"{lat:.2f}", h, f"{wind[h]:.3f}", f"{ghi[h]:.2f}",
                                f"{temp[h]:.2f}", f"{runoff[h]:.4f}"])


def _write_rasters(d: Path, rng):
    dx = 0.1
    gx, gy = np.meshgrid(np.round(np.arange(0.05, 8.0, dx), 6), np.round(np.arange(0.05, 4.3, dx), 6))
    lon, lat = gx.ravel(), gy.ravel()
    pop = np.full(lon.shape, 20.0)
    for cx, cy, _ in CITIES:
        pop += 1500.0 * np.exp(-((lon - cx) ** 2 + (lat - cy) ** 2) / (2 * 0.15**2))
    lc = rng.choice([1, 2, 5], size=lon.shape, p=[0.3, 0.4, 0.3]).astype(float)
    lc[pop > 300] = 3  # urban
    lc[(lon - 2.2) ** 2 / 0.3 + (lat - 1.5) ** 2 / 0.1 < 1] = 4  # a lake
    prot = (((lon - 6.5) ** 2 + (lat - 0.8) ** 2) < 0.3**2) | (((lon - 0.8) ** 2 + (lat - 3.4) ** 2) < 0.25**2)
    write_raster(d / "landcover.csv", RasterLayer("landcover", lon, lat, lc, dx, dx))
    write_raster(d / "protected.csv", RasterLayer("protected", lon, lat, prot.astype(float), dx, dx))
    write_raster(d / "population.csv", RasterLayer("population_density", lon, lat, np.round(pop, 3), dx, dx))
