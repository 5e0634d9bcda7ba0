"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
Set ``GRIDWEAVER_WB_DIR`` to a directory holding the World Bank Africa grid
GeoJSON (``substations.geojson`` and ``lines.geojson``) to enable criterion 11.
"""
import hashlib
import itertools
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from shapely.geometry import Point, Polygon

from gridweaver import ingest, plants, profiles, regions, topology
from gridweaver.config import load_config
from gridweaver.expansion import solve, verify_solution
from gridweaver.fixtures import make_fixture
from gridweaver.geo import LocalProjection
from gridweaver.lp import LinearProgram, certify, read_mps, solve_lp
from gridweaver.pipeline import Pipeline
from gridweaver.profiles import TurbineCurve, solar_cf_values, wind_power_curve
from conftest import merit_order_problem, ring_transfer_problem
from oracles import random_bounded_lp, vertex_enumeration

# (criterion, "PASS" | "FAIL" | "SKIP", detail); printed by the terminal summary hook in conftest
RESULTS: list[tuple[int, str, str]] = []


def verdict(n: int, ok: bool, detail: str):
    status = "PASS" if ok else "FAIL"
    RESULTS.append((n, status, detail))
    assert ok, f"criterion {n} {status}: {detail}"


# 1 -------------------------------------------------------------------------------


def test_criterion_01_transmission_filter(tmp_path):
    info = make_fixture(tmp_path, n_buses=20, hours=24, k=2)
    cfg = load_config(info.config_path)
    subs = ingest.parse_substations(cfg.resolve(cfg.paths.substations)).records
    lines = ingest.parse_lines(cfg.resolve(cfg.paths.lines)).records
    assets = subs + lines
    present = {a.voltage_kv for a in assets if a.voltage_kv is not None}
    t0 = time.perf_counter()
    rep = ingest.filter_transmission(assets, 110)
    elapsed = time.perf_counter() - t0
    expected = [a for a in assets if a.voltage_kv is not None and a.voltage_kv >= 110]
    ok = {66.0, 110.0, 220.0, 330.0} <= present and rep.kept == expected and elapsed < 1.0
    verdict(1, ok, f"kept {len(rep.kept)} of {len(assets)} (voltages {sorted(present)}), "
                   f"exact match={rep.kept == expected}, {elapsed:.3f}s < 1s")


# 2 -------------------------------------------------------------------------------


def test_criterion_02_one_node_per_country(tmp_path):
    info = make_fixture(tmp_path, n_buses=30, hours=48, k=2)
    pipe = Pipeline(load_config(info.config_path))
    pipe.run_stage("ingest")
    pipe.run_stage("build")
    t0 = time.perf_counter()
    net = topology.read_network(pipe.stage_dir("build") / "network")
    shapes = pipe._country_shapes()
    cells = []
    for country in sorted({b.country for b in net.buses.values()}):
        seeds = [(b.id, b.lon, b.lat) for b in sorted(net.buses.values(), key=lambda b: b.id) if b.country == country]
        cells += regions.build_voronoi(shapes[country], seeds, country)
    weights = pipe._population_weights(cells)
    country_of = {c.bus_id: c.country for c in cells}
    demand = profiles.synth_demand({"AA": 30.0, "BB": 18.0}, weights, country_of, hours=48).as_dict()
    plant_list, _ = plants.parse_plants(pipe.stage_dir("ingest") / "plants.csv")
    by_bus = plants.assign_to_regions(plant_list, cells)
    cm = regions.cluster_buses(list(net.buses.values()), weights, 2, seed=0, per_country=True)
    agg = regions.aggregate_network(net, cm, cells, by_bus, {"demand_mw": demand}, weights)
    elapsed = time.perf_counter() - t0

    def rel(a, b):
        return float(np.max(np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(np.abs(b), 1e-300)))

    d_err = rel(sum(agg.series["demand_mw"].values()), sum(demand.values()))
    fuels = sorted({f for _, f in by_bus})
    c_err = max(rel(sum(v for (_, f), v in agg.plants.items() if f == fuel),
                    sum(v for (_, f), v in by_bus.items() if f == fuel)) for fuel in fuels)
    cut = sum(br.s_nom_mva for br in net.branches.values()
              if agg.busmap[br.from_bus] != agg.busmap[br.to_bus])
    agg_cut = sum(br.s_nom_mva for br in agg.network.branches.values())
    s_err = rel(agg_cut, cut)
    countries = sorted(b.country for b in agg.network.buses.values())
    ok = (len(agg.network.buses) == 2 and countries == ["AA", "BB"] and max(d_err, c_err, s_err) <= 1e-9
          and elapsed < 5.0)
    verdict(2, ok, f"{len(net.buses)} buses -> {len(agg.network.buses)} ({countries}); rel errors demand "
                   f"{d_err:.1e}, capacity {c_err:.1e}, cut s_nom {s_err:.1e} <= 1e-9; {elapsed:.2f}s < 5s")


# 3 -------------------------------------------------------------------------------


def test_criterion_03_voronoi_partition():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    poly = Polygon([(2, 1), (9, 0), (11, 5), (7, 9), (3, 8), (0, 4)])
    seeds = []
    while len(seeds) < 50:
        lon, lat = rng.uniform(0, 11), rng.uniform(0, 9)
        if poly.contains(Point(lon, lat)):
            seeds.append((f"s{len(seeds):02d}", lon, lat))
    cells = regions.build_voronoi(poly, seeds)
    proj = LocalProjection.about(poly)
    total = proj.project(poly).area
    area_err = abs(sum(c.area_km2 for c in cells) - total) / total
    projected = [proj.project(c.polygon) for c in cells]
    overlap = max(a.intersection(b).area for a, b in itertools.combinations(projected, 2)) / total
    sx, sy = proj.forward([s[1] for s in seeds], [s[2] for s in seeds])
    wrong = sampled = 0
    while sampled < 1000:
        lon, lat = rng.uniform(0, 11), rng.uniform(0, 9)
        if not poly.contains(Point(lon, lat)):
            continue
        sampled += 1
        x, y = proj.forward(lon, lat)
        nearest = int(np.argmin((sx - x) ** 2 + (sy - y) ** 2))
        wrong += not projected[nearest].covers(Point(x, y))
    elapsed = time.perf_counter() - t0
    ok = area_err <= 1e-6 and overlap <= 1e-9 and wrong == 0 and elapsed < 10.0
    verdict(3, ok, f"area rel err {area_err:.1e} <= 1e-6, max overlap {overlap:.1e} <= 1e-9, "
                   f"{wrong}/1000 points off their nearest seed's cell; {elapsed:.2f}s < 10s")


# 4 -------------------------------------------------------------------------------


def test_criterion_04_dc_flow_ring():
    t0 = time.perf_counter()
    sol = solve(ring_transfer_problem())
    elapsed = time.perf_counter() - t0
    f = {l: float(v[0]) for l, v in sol.flows.items()}
    # l23 and l31 are oriented b2->b3->b1, against the indirect path b1->b3->b2
    err = max(abs(f["l12"] - 2 / 3), abs(f["l23"] + 1 / 3), abs(f["l31"] + 1 / 3))
    ok = sol.status == "optimal" and err <= 1e-9 and elapsed < 1.0
    verdict(4, ok, f"flows l12={f['l12']:.12f} l23={f['l23']:.12f} l31={f['l31']:.12f}, "
                   f"max err {err:.1e} <= 1e-9; {elapsed:.3f}s < 1s")


# 5 -------------------------------------------------------------------------------


def test_criterion_05_lp_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_obj = worst_res = worst_gap = 0.0
    bad_status = 0
    for _ in range(200):
        c, A, rl, rh, lo, hi = random_bounded_lp(rng)
        want, _ = vertex_enumeration(c, A, rl, rh, lo, hi)
        lp = LinearProgram(c=c, A=sp.csc_matrix(A), row_lo=rl, row_hi=rh, col_lo=lo, col_hi=hi)
        res = solve_lp(lp)
        if not res.optimal or want is None:
            bad_status += 1
            continue
        worst_obj = max(worst_obj, abs(res.objective - want) / max(1.0, abs(want)))
        cert = certify(lp, res.x, res.row_duals)
        worst_res = max(worst_res, cert.max_primal_residual, cert.max_bound_violation)
        worst_gap = max(worst_gap, cert.duality_gap)
    for prob in (merit_order_problem(), ring_transfer_problem()):
        rep = verify_solution(prob, solve(prob))
        worst_res = max(worst_res, rep.max_primal_residual, rep.max_bound_violation)
        worst_gap = max(worst_gap, rep.duality_gap)
    elapsed = time.perf_counter() - t0
    ok = bad_status == 0 and worst_obj <= 1e-7 and worst_res <= 1e-6 and worst_gap <= 1e-6 and elapsed < 60
    verdict(5, ok, f"200 LPs: {bad_status} non-optimal, max obj rel err {worst_obj:.1e} <= 1e-7, "
                   f"max residual {worst_res:.1e} <= 1e-6, max gap {worst_gap:.1e} <= 1e-6; {elapsed:.1f}s < 60s")


# 6 -------------------------------------------------------------------------------


def test_criterion_06_merit_order():
    t0 = time.perf_counter()
    sol = solve(merit_order_problem())
    elapsed = time.perf_counter() - t0
    g1, g2 = float(sol.dispatch[("n1", "cheap")][0]), float(sol.dispatch[("n1", "dear")][0])
    ok = sol.objective == 1400.0 and g1 == 50.0 and g2 == 30.0 and elapsed < 1.0
    verdict(6, ok, f"objective {sol.objective!r}, dispatch ({g1!r}, {g2!r}); {elapsed:.3f}s < 1s")


# 7 -------------------------------------------------------------------------------


def test_criterion_07_emission_cap_sweep(tmp_path):
    info = make_fixture(tmp_path, n_buses=20, hours=48, k=4)
    pipe = Pipeline(load_config(info.config_path))
    for stage in ("ingest", "build", "cluster", "profiles", "eligibility"):
        pipe.run_stage(stage)
    t0 = time.perf_counter()
    pipe.cfg.optimize.co2_cap = math.inf
    base = solve(pipe._build_problem())
    caps = [math.inf] + [f * base.emissions for f in (0.75, 0.5, 0.25)] + [0.0]
    objs, last = [base.objective], None
    for cap in caps[1:]:
        pipe.cfg.optimize.co2_cap = cap
        prob = pipe._build_problem()
        last = solve(prob)
        assert last.status == "optimal"
        objs.append(last.objective)
    elapsed = time.perf_counter() - t0
    monotone = all(b >= a for a, b in zip(objs, objs[1:]))
    fossil = max(float(np.max(np.abs(g))) for (_, tech), g in last.dispatch.items()
                 if prob.techs[tech].emission_factor > 0)
    ok = base.emissions > 0 and monotone and fossil <= 1e-8 and elapsed < 30.0
    verdict(7, ok, f"objectives {[round(o, 1) for o in objs]} non-decreasing={monotone}; "
                   f"max fossil dispatch at cap 0 {fossil:.1e} <= 1e-8; {elapsed:.1f}s < 30s")


# 8 -------------------------------------------------------------------------------


def test_criterion_08_wind_solar():
    t0 = time.perf_counter()
    curve = TurbineCurve(3.0, 12.0, 25.0)
    cf3, cf12, cf8 = (float(v) for v in wind_power_curve([3.0, 12.0, 8.0], curve))
    sol = float(solar_cf_values(1000.0, 25.0))
    elapsed = time.perf_counter() - t0
    ok = cf3 == 0.0 and cf12 == 1.0 and abs(cf8 - 0.28513) <= 1e-5 and sol == 1.0 and elapsed < 1.0
    verdict(8, ok, f"cf(3)={cf3}, cf(12)={cf12}, cf(8)={cf8:.7f} (0.28513 +- 1e-5), solar cf(1000, 25)={sol}; "
                   f"{elapsed:.3f}s < 1s")


# 9 -------------------------------------------------------------------------------


def test_criterion_09_mps_round_trip():
    from gridweaver.expansion import export_mps
    from conftest import two_bus_system

    t0 = time.perf_counter()
    worst = 0.0
    identical = True
    for make in (merit_order_problem, two_bus_system):
        prob = make()
        text = export_mps(prob)
        identical &= text == export_mps(make())
        direct = solve(prob).objective
        back = solve_lp(read_mps(text)).objective
        worst = max(worst, abs(back - direct) / max(1.0, abs(direct)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and identical and elapsed < 5.0
    verdict(9, ok, f"re-imported objective rel err {worst:.1e} <= 1e-9, byte-identical exports={identical}; "
                   f"{elapsed:.2f}s < 5s")


# 10 ------------------------------------------------------------------------------


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.jsonl":  # the manifest carries wall-clock timestamps
            h.update(p.relative_to(root).as_posix().encode() + b"\0" + p.read_bytes())
    return h.hexdigest()


def test_criterion_10_reproducibility_and_scale(tmp_path):
    digests, times = [], []
    for run in ("a", "b"):
        info = make_fixture(tmp_path / run, n_buses=100, hours=168, k=4)
        pipe = Pipeline(load_config(info.config_path))
        t0 = time.perf_counter()
        results = pipe.run_all()
        times.append(time.perf_counter() - t0)
        assert [r.status for r in results] == ["ran"] * 7
        digests.append(_tree_digest(pipe.out))
    ok = digests[0] == digests[1] and max(times) < 60.0
    verdict(10, ok, f"100 buses x 168 snapshots: runs took {times[0]:.1f}s and {times[1]:.1f}s (< 60s), "
                    f"output trees identical={digests[0] == digests[1]}")


# 11 ------------------------------------------------------------------------------


def test_criterion_11_world_bank_counts():
    root = os.environ.get("GRIDWEAVER_WB_DIR")
    if not root or not Path(root).is_dir():
        RESULTS.append((11, "SKIP", "dataset not supplied; set GRIDWEAVER_WB_DIR"))
        pytest.skip("World Bank Africa grid dataset not supplied")
    subs = ingest.parse_substations(Path(root) / "substations.geojson").records
    lines = ingest.parse_lines(Path(root) / "lines.geojson").records
    km = sum(topology.polyline_length(ln.path) for ln in lines)
    # logged for comparison with 2721 substations, 1818 lines and 4204 km; never asserted
    verdict(11, True, f"{len(subs)} substations (reference 2721), {len(lines)} lines (reference 1818), "
                      f"{km:.0f} km of line (reference 4204), non-gating")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
