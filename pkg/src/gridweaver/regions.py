"""Voronoi service areas per bus and k-means reduction of network resolution."""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import shapely
from shapely.geometry import MultiPoint, Point, box, mapping, shape
from shapely.geometry.base import BaseGeometry
from shapely.ops import unary_union

from gridweaver.errors import ClusteringError, GeometryError
from gridweaver.geo import LocalProjection
from gridweaver.topology import Branch, Bus, Network

logger = logging.getLogger(__name__)

DUPLICATE_JITTER_DEG = 1e-9
EXTENSIVE_KINDS = {"demand_mw", "inflow_mw"}


@dataclass
class RegionCell:
    bus_id: str
    polygon: BaseGeometry
    area_km2: float
    country: str = ""


@dataclass
class ClusterMap:
    assignment: dict[str, int]
    k: int
    seed: int
    inertia: float
    history: list[float] = field(default_factory=list)

    def members(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = defaultdict(list)
        for bus, c in sorted(self.assignment.items()):
            out[c].append(bus)
        return dict(out)


# -- Voronoi ------------------------------------------------------------------


def build_voronoi(country_polygon: BaseGeometry, seeds: Sequence[tuple[str, float, float]], country: str = "") -> list[RegionCell]:
    """Voronoi cells of ``seeds`` (bus_id, lon, lat) clipped to ``country_polygon``.

    The diagram is planar, computed in an equirectangular projection about the
    polygon centroid; cell areas are in km^2 of that projection.
    """
    if not seeds:
        raise GeometryError("Voronoi partition needs at least one seed")
    if country_polygon.is_empty or country_polygon.area <= 0:
        raise GeometryError("country polygon is empty")
    proj = LocalProjection.about(country_polygon)
    poly = proj.project(country_polygon)

    ids = [s[0] for s in seeds]
    if len(set(ids)) != len(ids):
        raise GeometryError("seed bus ids must be unique")
    lonlat = []
    seen: dict[tuple[float, float], int] = {}
    for bus_id, lon, lat in seeds:
        key = (float(lon), float(lat))
        n = seen.get(key, 0)
        if n:
            logger.warning("duplicate seed location for bus %s perturbed by %g deg", bus_id, n * DUPLICATE_JITTER_DEG)
        seen[key] = n + 1
        lonlat.append((key[0] + n * DUPLICATE_JITTER_DEG, key[1] + n * DUPLICATE_JITTER_DEG))
    xs, ys = proj.forward([p[0] for p in lonlat], [p[1] for p in lonlat])
    pts = [Point(x, y) for x, y in zip(xs, ys)]

    if len(pts) == 1:
        regions = [poly]
    else:
        minx, miny, maxx, maxy = MultiPoint(pts).union(poly.envelope).bounds
        pad = 10.0 * max(maxx - minx, maxy - miny, 1.0)
        frame = box(minx - pad, miny - pad, maxx + pad, maxy + pad)
        diagram = shapely.voronoi_polygons(MultiPoint(pts), extend_to=frame)
        polys = list(diagram.geoms)
        tree = shapely.STRtree(polys)
        regions = []
        for p in pts:
            hits = tree.query(p, predicate="intersects")
            if len(hits) == 0:
                raise GeometryError("Voronoi construction lost a seed")
            # a seed lies strictly inside its own cell
            best = min(hits, key=lambda h: polys[h].centroid.distance(p) if polys[h].contains(p) else math.inf)
            regions.append(polys[best])

    cells = []
    for bus_id, region in zip(ids, regions):
        clipped = shapely.make_valid(region.intersection(poly))
        clipped = _polygonal(clipped)
        cells.append(RegionCell(bus_id, proj.unproject(clipped), float(clipped.area), country))
    return cells


def _polygonal(geom: BaseGeometry) -> BaseGeometry:
    if geom.geom_type in ("Polygon", "MultiPolygon") or geom.is_empty:
        return geom
    parts = [g for g in getattr(geom, "geoms", []) if g.geom_type in ("Polygon", "MultiPolygon")]
    return unary_union(parts) if parts else shapely.Polygon()


def locate_points(lons, lats, cells: Sequence[RegionCell]) -> list[list[int]]:
    """For each point, indices of the cells that cover it (boundary inclusive)."""
    polys = [c.polygon for c in cells]
    tree = shapely.STRtree(polys)
    pts = shapely.points(np.asarray(lons, float), np.asarray(lats, float))
    out: list[list[int]] = [[] for _ in range(len(pts))]
    if len(pts) == 0 or not polys:
        return out
    inp, hit = tree.query(pts, predicate="intersects")
    for i, j in zip(inp, hit):
        out[int(i)].append(int(j))
    return out


def nearest_cell(lon, lat, cells: Sequence[RegionCell]) -> int:
    p = Point(lon, lat)
    dists = [c.polygon.distance(p) if not c.polygon.is_empty else math.inf for c in cells]
    return int(np.argmin(dists))


# -- k-means ------------------------------------------------------------------


def _kmeanspp(X, w, k, rng):
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    p = w / w.sum() if w.sum() > 0 else np.full(n, 1.0 / n)
    first = int(rng.choice(n, p=p))
    centers[0] = X[first]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        mass = w * d2
        if mass.sum() > 0:
            idx = int(rng.choice(n, p=mass / mass.sum()))
        else:
            far = np.flatnonzero(d2 > 0)
            idx = int(rng.choice(far)) if far.size else int(rng.integers(n))
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(X, w, centers, max_iter, tol):
    history = []
    prev = None
    for _ in range(max_iter):
        D = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = D.argmin(axis=1)
        dmin = D[np.arange(len(X)), labels]
        inertia = float((w * dmin).sum())
        history.append(inertia)
        if prev is not None and (inertia == 0.0 or abs(prev - inertia) < tol * prev):
            break
        prev = inertia
        new = centers.copy()
        for c in range(len(centers)):
            mask = labels == c
            if not mask.any():
                # reseed an empty cluster at the point contributing most
                j = int(np.argmax(w * dmin))
                new[c] = X[j]
                dmin[j] = 0.0
                continue
            wc = w[mask]
            new[c] = (wc[:, None] * X[mask]).sum(axis=0) / wc.sum() if wc.sum() > 0 else X[mask].mean(axis=0)
        centers = new
    D = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = D.argmin(axis=1)
    inertia = float((w * D[np.arange(len(X)), labels]).sum())
    if not history or inertia != history[-1]:
        history.append(inertia)
    return labels, centers, inertia, history


def weighted_kmeans(X, weights, k, rng, n_init=10, max_iter=300, tol=1e-9):
    """Weighted Lloyd iterations from k-means++ starts; best of ``n_init`` runs.

    Returns ``(labels, centers, inertia, history)``; ``history`` holds the
    inertia after each assignment step of the winning run.
    """
    X = np.asarray(X, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = len(X)
    if not 1 <= k <= n:
        raise ClusteringError(f"k={k} must lie in [1, {n}]")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ClusteringError("weights must be finite and non-negative")
    if w.sum() == 0:
        logger.warning("all clustering weights are zero; using unit weights")
        w = np.ones(n)
    if k == n:
        return np.arange(n), X.copy(), 0.0, [0.0]
    best = None
    for _ in range(n_init):
        centers = _kmeanspp(X, w, k, rng)
        run = _lloyd(X, w, centers, max_iter, tol)
        if best is None or run[2] < best[2]:
            best = run
    return best


def _dense_labels(ids: Sequence[str], labels) -> list[int]:
    """Relabel clusters by their smallest member id."""
    first: dict[int, str] = {}
    for bid, lab in sorted(zip(ids, labels)):
        first.setdefault(int(lab), bid)
    order = {lab: i for i, (lab, _) in enumerate(sorted(first.items(), key=lambda t: t[1]))}
    return [order[int(lab)] for lab in labels]


def _bus_xy(buses: Sequence[Bus]):
    lon = np.array([b.lon for b in buses])
    lat = np.array([b.lat for b in buses])
    proj = LocalProjection(lon.mean(), lat.mean())
    x, y = proj.forward(lon, lat)
    return np.column_stack([x, y])


def kmeans_cluster(buses: Sequence[Bus], weights: Mapping[str, float] | None, k: int, seed: int, n_init: int = 10) -> ClusterMap:
    """Cluster one group of buses (no country constraint)."""
    buses = sorted(buses, key=lambda b: b.id)
    if not 1 <= k <= len(buses):
        raise ClusteringError(f"k={k} must lie in [1, {len(buses)}]")
    w = np.array([1.0 if weights is None else float(weights.get(b.id, 0.0)) for b in buses])
    rng = np.random.default_rng(seed)
    labels, _, inertia, history = weighted_kmeans(_bus_xy(buses), w, k, rng, n_init=n_init)
    ids = [b.id for b in buses]
    return ClusterMap(dict(zip(ids, _dense_labels(ids, labels))), k, seed, inertia, history)


def apportion_k(counts: Mapping[str, int], k: int) -> dict[str, int]:
    """Split ``k`` over groups proportionally to size, at least one each."""
    groups = sorted(counts)
    total = sum(counts.values())
    if k < len(groups):
        raise ClusteringError(f"k={k} is below the number of countries ({len(groups)})")
    if k > total:
        raise ClusteringError(f"k={k} exceeds the number of buses ({total})")
    alloc = {g: 1 for g in groups}
    for _ in range(k - len(groups)):
        open_groups = [g for g in groups if alloc[g] < counts[g]]
        g = max(open_groups, key=lambda g: (counts[g] * k / total - alloc[g], -groups.index(g)))
        alloc[g] += 1
    return alloc


def cluster_buses(
    buses: Sequence[Bus],
    weights: Mapping[str, float] | None,
    k: int,
    seed: int,
    per_country: bool = True,
    n_init: int = 10,
) -> ClusterMap:
    """Cluster buses, never mixing countries when ``per_country``."""
    if not per_country:
        return kmeans_cluster(buses, weights, k, seed, n_init)
    by_country: dict[str, list[Bus]] = defaultdict(list)
    for b in buses:
        by_country[b.country].append(b)
    alloc = apportion_k({c: len(v) for c, v in by_country.items()}, k)
    assignment: dict[str, int] = {}
    inertia = 0.0
    offset = 0
    history: list[float] = []
    for idx, country in enumerate(sorted(by_country)):
        sub = sorted(by_country[country], key=lambda b: b.id)
        kc = alloc[country]
        w = np.array([1.0 if weights is None else float(weights.get(b.id, 0.0)) for b in sub])
        rng = np.random.default_rng([seed, idx])
        labels, _, sub_inertia, _ = weighted_kmeans(_bus_xy(sub), w, kc, rng, n_init=n_init)
        ids = [b.id for b in sub]
        for bid, lab in zip(ids, _dense_labels(ids, labels)):
            assignment[bid] = offset + lab
        offset += kc
        inertia += sub_inertia
    history.append(inertia)
    return ClusterMap(assignment, k, seed, inertia, history)


# -- aggregation ----------------------------------------------------------------


@dataclass
class Aggregation:
    network: Network
    busmap: dict[str, str]
    cells: list[RegionCell]
    plants: dict[tuple[str, str], float]
    series: dict[str, dict[str, np.ndarray]]


def cluster_bus_id(cluster: int) -> str:
    return f"c{cluster}"


def aggregate_network(
    network: Network,
    clustermap: ClusterMap,
    cells: Sequence[RegionCell] = (),
    plants_by_bus: Mapping[tuple[str, str], float] | None = None,
    series_by_bus: Mapping[str, Mapping[str, np.ndarray]] | None = None,
    weights: Mapping[str, float] | None = None,
) -> Aggregation:
    """Collapse each cluster to one bus.

    Parallel inter-cluster branches combine as parallel impedances. Branch
    impedances are first referred to the merged branch voltage (the maximum
    of the group), which leaves them unchanged when voltages agree.
    Demand and inflow series are summed; other series (capacity factors) are
    averaged over member buses.
    """
    missing = [b for b in network.buses if b not in clustermap.assignment]
    if missing:
        raise ClusteringError(f"cluster map misses buses: {missing[:5]}")
    busmap = {b: cluster_bus_id(c) for b, c in clustermap.assignment.items() if b in network.buses}
    members: dict[str, list[Bus]] = defaultdict(list)
    for bid in sorted(network.buses):
        members[busmap[bid]].append(network.buses[bid])

    buses = {}
    for cid in sorted(members, key=lambda s: int(s[1:])):
        group = members[cid]
        w = np.array([1.0 if weights is None else float(weights.get(b.id, 0.0)) for b in group])
        if w.sum() <= 0:
            w = np.ones(len(group))
        lon = float(np.dot(w, [b.lon for b in group]) / w.sum())
        lat = float(np.dot(w, [b.lat for b in group]) / w.sum())
        countries = sorted({b.country for b in group})
        if len(countries) > 1:
            logger.warning("cluster %s spans countries %s", cid, countries)
        buses[cid] = Bus(cid, lon, lat, max(b.voltage_kv for b in group), countries[0], "substation")

    groups: dict[tuple[str, str], list[Branch]] = defaultdict(list)
    for lid in sorted(network.branches):
        br = network.branches[lid]
        a, b = busmap[br.from_bus], busmap[br.to_bus]
        if a == b:
            continue
        groups[tuple(sorted((a, b), key=lambda s: int(s[1:])))].append(br)
    branches = {}
    for (a, b), brs in sorted(groups.items(), key=lambda t: (int(t[0][0][1:]), int(t[0][1][1:]))):
        kv = max(br.voltage_kv for br in brs)
        ratio = [(kv / br.voltage_kv) ** 2 for br in brs]
        x_eq = 1.0 / sum(1.0 / (br.x_ohm * q) for br, q in zip(brs, ratio))
        if any(br.r_ohm == 0 for br in brs):
            r_eq = 0.0
        else:
            r_eq = 1.0 / sum(1.0 / (br.r_ohm * q) for br, q in zip(brs, ratio))
        lid = f"{a}-{b}"
        branches[lid] = Branch(
            id=lid, from_bus=a, to_bus=b,
            length_km=float(np.mean([br.length_km for br in brs])),
            voltage_kv=kv, r_ohm=r_eq, x_ohm=x_eq,
            s_nom_mva=float(sum(br.s_nom_mva for br in brs)),
            circuits=sum(br.circuits for br in brs),
            status="existing" if any(br.status == "existing" for br in brs) else "planned",
        )
    meta = dict(network.metadata)
    meta.update({"clusters": str(len(buses)), "cluster_seed": str(clustermap.seed)})
    agg_net = Network(buses, branches, meta)

    merged_cells = []
    cells_by_cluster: dict[str, list[RegionCell]] = defaultdict(list)
    for c in cells:
        if c.bus_id in busmap:
            cells_by_cluster[busmap[c.bus_id]].append(c)
    for cid in buses:
        group = cells_by_cluster.get(cid, [])
        if not group:
            continue
        poly = unary_union([c.polygon for c in group if not c.polygon.is_empty])
        merged_cells.append(RegionCell(cid, poly, float(sum(c.area_km2 for c in group)), buses[cid].country))

    plants: dict[tuple[str, str], float] = defaultdict(float)
    for (bus, fuel), mw in sorted((plants_by_bus or {}).items()):
        plants[(busmap[bus], fuel)] += mw

    series: dict[str, dict[str, np.ndarray]] = {}
    for kind, table in (series_by_bus or {}).items():
        acc: dict[str, list[np.ndarray]] = defaultdict(list)
        for bus in sorted(table):
            acc[busmap[bus]].append(np.asarray(table[bus], dtype=float))
        if kind in EXTENSIVE_KINDS:
            series[kind] = {cid: np.sum(v, axis=0) for cid, v in acc.items()}
        else:
            series[kind] = {cid: np.mean(v, axis=0) for cid, v in acc.items()}
    return Aggregation(agg_net, busmap, merged_cells, dict(plants), series)


# -- persistence ----------------------------------------------------------------


def cells_to_geojson(cells: Sequence[RegionCell], clustermap: ClusterMap | None = None) -> dict:
    feats = []
    for c in sorted(cells, key=lambda c: c.bus_id):
        props = {"bus_id": c.bus_id, "area_km2": c.area_km2, "country": c.country}
        if clustermap is not None:
            props["cluster_id"] = clustermap.assignment.get(c.bus_id)
        feats.append({"type": "Feature", "geometry": mapping(c.polygon), "properties": props})
    return {"type": "FeatureCollection", "features": feats}


def _listify(obj):
    if isinstance(obj, (list, tuple)):
        return [_listify(o) for o in obj]
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    return obj


def write_cells(path, cells, clustermap=None):
    Path(path).write_text(json.dumps(_listify(cells_to_geojson(cells, clustermap)), sort_keys=True) + "\n")


def read_cells(path) -> list[RegionCell]:
    doc = json.loads(Path(path).read_text())
    out = []
    for f in doc["features"]:
        p = f["properties"]
        out.append(RegionCell(p["bus_id"], shape(f["geometry"]), float(p["area_km2"]), p.get("country", "")))
    return out


def write_clustermap(path, cm: ClusterMap):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus_id", "cluster_id"])
        for bus in sorted(cm.assignment):
            w.writerow([bus, cm.assignment[bus]])


def read_clustermap(path, seed=0, inertia=math.nan) -> ClusterMap:
    with open(path, newline="") as fh:
        assignment = {row["bus_id"]: int(row["cluster_id"]) for row in csv.DictReader(fh)}
    k = len(set(assignment.values()))
    return ClusterMap(assignment, k, seed, inertia)
