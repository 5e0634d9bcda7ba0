import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import box

from gridweaver.errors import GridweaverError, SchemaError
from gridweaver.plants import (
    PowerPlant,
    assign_to_regions,
    hydro_inflow,
    jaro_winkler,
    match_plants,
    name_similarity,
    parse_plants,
)
from gridweaver.regions import RegionCell

HEADER = "name,country,fuel,capacity_mw,lat,lon\n"


def test_parse_akosombo():
    plants, rej = parse_plants(HEADER + "Akosombo,GH,Hydro,1020,6.30,0.06\n")
    assert rej == []
    p = plants[0]
    assert (p.fuel, p.capacity_mw, p.lat, p.lon, p.country) == ("hydro", 1020.0, 6.30, 0.06, "GH")


def test_parse_rejects_negative_capacity():
    plants, rej = parse_plants(HEADER + "X,GH,Gas,-5,6,0\n")
    assert plants == [] and rej[0].reason == "non-positive capacity"


def test_parse_rejects_missing_coordinates_and_unknown_fuel():
    _, rej = parse_plants(HEADER + "X,GH,Gas,5,,0\nY,GH,Fusion,5,1,1\n")
    assert [r.reason for r in rej] == ["missing coordinates", "unknown fuel 'Fusion'"]


def test_parse_fuel_synonym():
    plants, _ = parse_plants(HEADER + "X,GH,Natural Gas,5,6,0\n")
    assert plants[0].fuel == "gas"


def test_parse_missing_column_named():
    with pytest.raises(SchemaError, match="capacity_mw"):
        parse_plants("name,country,fuel,lat,lon\n")


@pytest.mark.parametrize("a,b,expected", [
    ("martha", "marhta", 0.961111),
    ("dwayne", "duane", 0.84),
    ("dixon", "dicksonx", 0.813333),
])
def test_jaro_winkler_reference_pairs(a, b, expected):
    assert jaro_winkler(a, b) == pytest.approx(expected, abs=1e-6)


def test_akosombo_similarity_by_hand():
    # 8 matches, no transpositions: jaro = (8/11 + 1 + 1)/3, prefix 4 adds 0.4 of the gap
    jaro = (8 / 11 + 2) / 3
    assert name_similarity("Akosombo GS", "Akosombo") == pytest.approx(jaro + 0.4 * (1 - jaro), abs=1e-12)


def _plant(name, cap, lon=0.06, lat=6.30, fuel="hydro", pid=None, country="GH"):
    return PowerPlant(name, country, fuel, cap, lon, lat, id=pid or name, source="s")


def test_identical_records_merge():
    a, b = [_plant("Akosombo", 1020, pid="a1")], [_plant("Akosombo", 1020, pid="b1")]
    merged, report = match_plants(a, b)
    assert len(merged) == 1 and report[0].similarity == 1.0


def test_akosombo_merge_mean():
    a = [_plant("Akosombo GS", 1020, pid="a1")]
    b = [_plant("Akosombo", 1038, lon=0.06 + 0.009, pid="b1")]  # about 1 km east
    sim = name_similarity("Akosombo GS", "Akosombo")
    merged, report = match_plants(a, b, name_threshold=sim, dist_km=10)
    assert len(merged) == 1
    assert merged[0].capacity_mw == pytest.approx(1029.0)
    assert report[0].distance_km == pytest.approx(1.0, abs=0.01)
    # one notch above the similarity, the pair no longer matches
    merged, _ = match_plants(a, b, name_threshold=min(1.0, sim + 1e-9))
    assert len(merged) == 2


def test_fuel_gate():
    merged, report = match_plants([_plant("Alpha", 10, fuel="gas")], [_plant("Alpha", 10, fuel="coal")])
    assert len(merged) == 2 and report == []


def test_large_capacity_gap_keeps_priority_value():
    merged, report = match_plants([_plant("Alpha", 100, pid="a")], [_plant("Alpha", 300, pid="b")])
    assert merged[0].capacity_mw == 100
    assert report[0].action == "merged-priority"


names = st.sampled_from(["Akosombo", "Akosombo GS", "Kpong", "Kpong Dam", "Bui", "Volta", "Tema", "Tema II"])


@settings(max_examples=60)
@given(st.lists(st.tuples(names, st.floats(0, 0.05)), max_size=6), st.lists(st.tuples(names, st.floats(0, 0.05)), max_size=6))
def test_matching_symmetric_and_size_rule(ra, rb):
    a = [_plant(n, 50, lon=x, pid=f"a{i}") for i, (n, x) in enumerate(ra)]
    b = [_plant(n, 50, lon=x, pid=f"b{i}") for i, (n, x) in enumerate(rb)]
    merged, report = match_plants(a, b)
    assert len(merged) == len(a) + len(b) - len(report)
    _, swapped = match_plants(b, a)
    assert {(r.a_id, r.b_id) for r in report} == {(r.b_id, r.a_id) for r in swapped}


def _cells():
    return [RegionCell("A", box(0, 0, 1, 1), 1.0), RegionCell("B", box(1, 0, 2, 1), 1.0)]


def test_assign_inside_and_boundary_tie():
    plants = [_plant("p1", 10, lon=0.5, lat=0.5), _plant("p2", 20, lon=1.0, lat=0.5)]
    out = assign_to_regions(plants, _cells())
    assert out == {("A", "hydro"): 30.0}


def test_assign_outside_goes_to_nearest(caplog):
    out = assign_to_regions([_plant("far", 5, lon=2.5, lat=0.5)], _cells())
    assert out == {("B", "hydro"): 5.0}
    assert "outside" in caplog.text


@given(st.lists(st.tuples(st.floats(-0.5, 2.5), st.floats(-0.5, 1.5), st.floats(0.1, 500),
                          st.sampled_from(["gas", "hydro", "wind"])), max_size=30))
def test_assign_conserves_capacity(rows):
    plants = [_plant(f"p{i}", c, lon=x, lat=y, fuel=f) for i, (x, y, c, f) in enumerate(rows)]
    out = assign_to_regions(plants, _cells())
    for fuel in ("gas", "hydro", "wind"):
        want = sum(p.capacity_mw for p in plants if p.fuel == fuel)
        got = sum(v for (_, f), v in out.items() if f == fuel)
        assert got == pytest.approx(want, rel=1e-9)


def test_inflow_flat():
    assert np.allclose(hydro_inflow(np.full(8760, 2.5), 8760.0), 1.0)


def test_inflow_proportional():
    assert np.allclose(hydro_inflow([1, 3], 8.0), [2.0, 6.0])


def test_inflow_all_zero_rejected():
    with pytest.raises(GridweaverError):
        hydro_inflow([0, 0], 1.0)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=50).filter(lambda r: sum(r) > 1e-3), st.floats(1e-3, 1e3))
def test_inflow_scale_invariant_and_conserving(r, scale):
    base = hydro_inflow(r, 1234.5)
    assert np.allclose(hydro_inflow(np.asarray(r) * scale, 1234.5), base, rtol=1e-9, atol=1e-12)
    assert base.sum() == pytest.approx(1234.5, rel=1e-12)
