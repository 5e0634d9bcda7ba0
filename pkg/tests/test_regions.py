import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon, box

from gridweaver.errors import ClusteringError, GeometryError
from gridweaver.geo import LocalProjection
from gridweaver.regions import (
    ClusterMap,
    aggregate_network,
    apportion_k,
    build_voronoi,
    cluster_buses,
    kmeans_cluster,
    read_cells,
    write_cells,
)
from gridweaver.topology import Branch, Bus, Network


def voronoi_checks(poly, seeds, n_samples, rng):
    """Area sum, overlap and nearest-seed errors of a clipped Voronoi partition."""
    cells = build_voronoi(poly, seeds)
    proj = LocalProjection.about(poly)
    total = proj.project(poly).area
    area_err = abs(sum(c.area_km2 for c in cells) - total) / total
    projected = [proj.project(c.polygon) for c in cells]
    overlap = max((a.intersection(b).area for a, b in itertools.combinations(projected, 2)), default=0.0) / total
    sx, sy = proj.forward([s[1] for s in seeds], [s[2] for s in seeds])
    minx, miny, maxx, maxy = poly.bounds
    wrong = 0
    taken = 0
    while taken < n_samples:
        lon, lat = rng.uniform(minx, maxx), rng.uniform(miny, maxy)
        if not poly.contains(Point(lon, lat)):
            continue
        taken += 1
        x, y = proj.forward(lon, lat)
        d = (sx - x) ** 2 + (sy - y) ** 2
        nearest = int(np.argmin(d))
        if not projected[nearest].covers(Point(x, y)):
            wrong += 1
    return area_err, overlap, wrong


def test_single_seed_cell_is_polygon():
    poly = box(0, 0, 2, 1)
    cells = build_voronoi(poly, [("a", 0.5, 0.5)])
    assert len(cells) == 1
    assert cells[0].polygon.symmetric_difference(poly).area < 1e-12


def test_unit_square_two_seeds_split_at_half():
    cells = build_voronoi(box(0, 0, 1, 1), [("a", 0.25, 0.5), ("b", 0.75, 0.5)])
    a, b = cells
    assert a.area_km2 == pytest.approx(b.area_km2, rel=1e-9)
    assert a.polygon.bounds[2] == pytest.approx(0.5, abs=1e-12)
    assert b.polygon.bounds[0] == pytest.approx(0.5, abs=1e-12)


def test_collinear_seeds_middle_cell_is_band():
    cells = build_voronoi(box(0, 0, 3, 1), [("a", 0.5, 0.5), ("b", 1.5, 0.5), ("c", 2.5, 0.5)])
    mid = cells[1].polygon
    assert mid.bounds[0] == pytest.approx(1.0, abs=1e-12)
    assert mid.bounds[2] == pytest.approx(2.0, abs=1e-12)
    assert mid.area == pytest.approx(1.0, rel=1e-12)


def test_zero_seeds_rejected():
    with pytest.raises(GeometryError):
        build_voronoi(box(0, 0, 1, 1), [])


def test_duplicate_seeds_perturbed(caplog):
    cells = build_voronoi(box(0, 0, 1, 1), [("a", 0.5, 0.5), ("b", 0.5, 0.5)])
    assert len(cells) == 2
    assert "perturbed" in caplog.text


def test_voronoi_partition_random_pentagon():
    rng = np.random.default_rng(3)
    poly = Polygon([(10, 5), (14, 5), (15, 8), (12, 10), (9, 8)])
    seeds = []
    while len(seeds) < 30:
        lon, lat = rng.uniform(9, 15), rng.uniform(5, 10)
        if poly.contains(Point(lon, lat)):
            seeds.append((f"s{len(seeds):02d}", lon, lat))
    area_err, overlap, wrong = voronoi_checks(poly, seeds, 300, rng)
    assert area_err <= 1e-6
    assert overlap <= 1e-9
    assert wrong == 0


def test_cells_geojson_round_trip(tmp_path):
    cells = build_voronoi(box(0, 0, 1, 1), [("a", 0.25, 0.5), ("b", 0.75, 0.5)], "AA")
    write_cells(tmp_path / "c.geojson", cells)
    back = read_cells(tmp_path / "c.geojson")
    assert [c.bus_id for c in back] == ["a", "b"]
    assert back[0].polygon.equals(cells[0].polygon)
    assert back[0].area_km2 == cells[0].area_km2


def _buses(points, country="AA"):
    return [Bus(f"b{i}", x, y, 220.0, country) for i, (x, y) in enumerate(points)]


def test_kmeans_k1():
    cm = kmeans_cluster(_buses([(0, 0), (1, 0), (0, 1)]), None, 1, seed=0)
    assert set(cm.assignment.values()) == {0}


def test_kmeans_k_equals_n():
    cm = kmeans_cluster(_buses([(0, 0), (1, 0), (0, 1)]), None, 3, seed=0)
    assert sorted(cm.assignment.values()) == [0, 1, 2]
    assert cm.inertia == 0.0


def test_kmeans_square_corners_matches_enumeration():
    pts = [(0, 0), (1, 0), (0, 1), (1, 1)]
    buses = _buses(pts)
    proj_xy = np.column_stack(LocalProjection(0.5, 0.5).forward(*np.array(pts, float).T))
    best = np.inf
    for mask in range(1, 2 ** 4 - 1):
        lab = np.array([(mask >> i) & 1 for i in range(4)])
        val = sum(((proj_xy[lab == g] - proj_xy[lab == g].mean(axis=0)) ** 2).sum() for g in (0, 1))
        best = min(best, val)
    for seed in range(5):
        cm = kmeans_cluster(buses, None, 2, seed=seed)
        assert cm.inertia == pytest.approx(best, rel=1e-12)


def test_kmeans_k_too_large():
    with pytest.raises(ClusteringError):
        kmeans_cluster(_buses([(0, 0)]), None, 2, seed=0)


def test_kmeans_zero_weights_fall_back(caplog):
    cm = kmeans_cluster(_buses([(0, 0), (1, 0), (5, 5)]), {"b0": 0, "b1": 0, "b2": 0}, 2, seed=1)
    assert len(set(cm.assignment.values())) == 2
    assert "unit weights" in caplog.text


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_kmeans_reproducible_and_monotone(seed, k):
    rng = np.random.default_rng(seed)
    buses = _buses(rng.uniform(0, 5, size=(12, 2)))
    w = {b.id: float(v) for b, v in zip(buses, rng.uniform(0.1, 2, 12))}
    a = kmeans_cluster(buses, w, k, seed)
    b = kmeans_cluster(buses, w, k, seed)
    assert a.assignment == b.assignment and a.inertia == b.inertia
    assert all(x >= y for x, y in zip(a.history, a.history[1:]))
    assert sorted(set(a.assignment.values())) == list(range(k))


def test_apportion_proportional_with_floor():
    assert apportion_k({"AA": 90, "BB": 10}, 2) == {"AA": 1, "BB": 1}
    assert apportion_k({"AA": 90, "BB": 10}, 10) == {"AA": 9, "BB": 1}
    with pytest.raises(ClusteringError):
        apportion_k({"AA": 3, "BB": 3}, 1)


def test_clusters_never_cross_countries():
    rng = np.random.default_rng(0)
    buses = _buses(rng.uniform(0, 1, (8, 2)), "AA") + [
        Bus(f"c{i}", x, y, 220.0, "BB") for i, (x, y) in enumerate(rng.uniform(0.5, 1.5, (6, 2)))
    ]
    cm = cluster_buses(buses, None, 4, seed=2)
    country = {b.id: b.country for b in buses}
    for members in cm.members().values():
        assert len({country[m] for m in members}) == 1


def _two_cluster_net(xs):
    buses = {"A": Bus("A", 0, 0, 220, "AA"), "B": Bus("B", 1, 0, 220, "AA")}
    branches = {f"l{i}": Branch(f"l{i}", "A", "B", 10.0, 220.0, r_ohm=x / 3, x_ohm=x, s_nom_mva=100.0)
                for i, x in enumerate(xs)}
    return Network(buses, branches), ClusterMap({"A": 0, "B": 1}, 2, 0, 0.0)


def test_parallel_equal_reactances():
    net, cm = _two_cluster_net([0.3, 0.3])
    br = next(iter(aggregate_network(net, cm).network.branches.values()))
    assert br.x_ohm == pytest.approx(0.15)
    assert br.s_nom_mva == pytest.approx(200.0)


def test_parallel_unequal_reactances():
    net, cm = _two_cluster_net([0.2, 0.3])
    br = next(iter(aggregate_network(net, cm).network.branches.values()))
    assert br.x_ohm == pytest.approx(0.12)


def test_aggregation_conserves_totals():
    rng = np.random.default_rng(5)
    n = 12
    buses = {f"b{i:02d}": Bus(f"b{i:02d}", float(x), float(y), 220.0, "AA" if i < 7 else "BB")
             for i, (x, y) in enumerate(rng.uniform(0, 4, (n, 2)))}
    ids = sorted(buses)
    branches = {}
    for k in range(20):
        a, b = rng.choice(n, 2, replace=False)
        branches[f"l{k:02d}"] = Branch(f"l{k:02d}", ids[a], ids[b], 50.0, 220.0, r_ohm=3.0,
                                       x_ohm=float(rng.uniform(5, 30)), s_nom_mva=float(rng.uniform(100, 500)))
    net = Network(buses, branches)
    cm = cluster_buses(list(buses.values()), None, 4, seed=1)
    plants = {(b, f): float(rng.uniform(1, 100)) for b in ids for f in ("gas", "hydro") if rng.random() < 0.7}
    demand = {b: rng.uniform(0, 50, 24) for b in ids}
    agg = aggregate_network(net, cm, plants_by_bus=plants, series_by_bus={"demand_mw": demand})

    total = sum(demand.values())
    assert np.allclose(sum(agg.series["demand_mw"].values()), total, rtol=1e-9, atol=0)
    for fuel in ("gas", "hydro"):
        before = sum(v for (b, f), v in plants.items() if f == fuel)
        after = sum(v for (b, f), v in agg.plants.items() if f == fuel)
        assert after == pytest.approx(before, rel=1e-9)
    for br in agg.network.branches.values():
        members = {b for b, c in agg.busmap.items() if c in (br.from_bus, br.to_bus)}
        cut = sum(x.s_nom_mva for x in branches.values()
                  if {agg.busmap[x.from_bus], agg.busmap[x.to_bus]} == {br.from_bus, br.to_bus}
                  and x.from_bus in members)
        assert br.s_nom_mva == pytest.approx(cut, rel=1e-9)
    assert len(agg.network.buses) == 4
