import math
import sys

import numpy as np
import pytest

from gridweaver.expansion import DISPATCHABLE, SnapshotSpec, Technology, build_problem
from gridweaver.fixtures import make_fixture
from gridweaver.profiles import SeriesTable
from gridweaver.topology import Branch, Bus, Network


def single_bus(bus_id="n1"):
    return Network({bus_id: Bus(bus_id, 0.0, 0.0, 220.0, "AA")}, {})


def merit_order_problem(scale=1.0, demand=80.0):
    """One bus, 50 MW at 10 and 100 MW at 30, fixed fleet, one hour."""
    techs = {
        "cheap": Technology("cheap", DISPATCHABLE, marginal=10.0 * scale),
        "dear": Technology("dear", DISPATCHABLE, marginal=30.0 * scale),
    }
    series = {"demand_mw": SeriesTable("demand_mw", ["n1"], [[demand]])}
    return build_problem(single_bus(), {("n1", "cheap"): 50.0, ("n1", "dear"): 100.0}, series,
                         costs=techs, slack_penalty=1e4 * scale)


def ring_network(x_ohm=10.0, s_nom=1000.0, kv=220.0):
    buses = {f"b{i}": Bus(f"b{i}", float(i), 0.0, kv, "AA") for i in (1, 2, 3)}
    branches = {
        lid: Branch(lid, a, b, 10.0, kv, r_ohm=0.0, x_ohm=x_ohm, s_nom_mva=s_nom)
        for lid, a, b in (("l12", "b1", "b2"), ("l23", "b2", "b3"), ("l31", "b3", "b1"))
    }
    return Network(buses, branches)


def ring_transfer_problem():
    """1 MW from b1 to b2: a free source at b1, demand of 1 MW at b2."""
    techs = {"src": Technology("src", DISPATCHABLE, marginal=1.0)}
    series = {"demand_mw": SeriesTable("demand_mw", ["b1", "b2", "b3"], [[0.0], [1.0], [0.0]])}
    return build_problem(ring_network(), {("b1", "src"): 10.0}, series, costs=techs)


def two_bus_system(hours=24, co2_cap=math.inf):
    """Two buses with coal, gas, expandable wind and battery; used for cap sweeps."""
    t = np.arange(hours)
    buses = {"a": Bus("a", 0.0, 0.0, 220.0, "AA"), "b": Bus("b", 1.0, 0.0, 220.0, "AA")}
    branches = {"ab": Branch("ab", "a", "b", 100.0, 220.0, r_ohm=6.0, x_ohm=30.0, s_nom_mva=150.0)}
    net = Network(buses, branches)
    demand = np.array([100 + 30 * np.sin(2 * np.pi * t / 24), 80 + 20 * np.cos(2 * np.pi * t / 24)])
    wind = np.clip(0.45 + 0.35 * np.sin(2 * np.pi * t / 17.0), 0, 1)
    day = hours / 8760.0  # capital costs scaled to the modelled window
    techs = {
        "coal": Technology("coal", DISPATCHABLE, fixed_om=1.0, marginal=25.0, emission_factor=0.95),
        "gas": Technology("gas", DISPATCHABLE, capex=3e5 * day, marginal=50.0, emission_factor=0.4, extendable=True),
        "wind": Technology("wind", "variable", capex=9e5 * day, marginal=0.0, extendable=True, max_potential_mw=600.0),
        "battery": Technology("battery", "storage", capex=1e5 * day, energy_capex=8e4 * day, extendable=True,
                              lifetime_years=15),
    }
    series = {
        "demand_mw": SeriesTable("demand_mw", ["a", "b"], demand),
        "cf_wind": SeriesTable("cf_wind", ["a", "b"], [wind, np.roll(wind, 5)]),
    }
    caps = {("a", "coal"): 120.0, ("b", "gas"): 40.0}
    return build_problem(net, caps, series, costs=techs, co2_cap=co2_cap, snapshots=SnapshotSpec(stride=1),
                         slack_penalty=2000.0)


@pytest.fixture(scope="session")
def small_fixture(tmp_path_factory):
    return make_fixture(tmp_path_factory.mktemp("fx20"), n_buses=20, hours=48, k=4)


@pytest.fixture(scope="session")
def small_run(small_fixture):
    """Full pipeline on the small fixture, shared by read-only tests."""
    from gridweaver.config import load_config
    from gridweaver.pipeline import Pipeline

    pipe = Pipeline(load_config(small_fixture.config_path))
    results = pipe.run_all()
    return pipe, results


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, detail in sorted(results):
        terminalreporter.write_line(f"criterion {n:>2} {status}: {detail}")
