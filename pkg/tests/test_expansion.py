import math

import numpy as np
import pytest

from gridweaver.errors import ConfigError, ProblemError
from gridweaver.expansion import (
    DISPATCHABLE,
    SnapshotSpec,
    Technology,
    annuity,
    build_problem,
    export_mps,
    solve,
    verify_solution,
)
from gridweaver.lp import read_mps, solve_lp
from gridweaver.profiles import SeriesTable
from conftest import merit_order_problem, ring_transfer_problem, single_bus, two_bus_system

FOSSIL = ("coal", "gas")


def test_annuity_examples():
    assert annuity(0.0, 25) == pytest.approx(0.04)
    assert annuity(0.07, 25) == pytest.approx(0.08581, abs=1e-5)
    assert annuity(0.05, 1) == pytest.approx(1.05)
    with pytest.raises(ConfigError):
        annuity(1.0, 10)


def test_merit_order():
    prob = merit_order_problem()
    sol = solve(prob)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1400.0, rel=1e-9)
    assert sol.dispatch[("n1", "cheap")][0] == pytest.approx(50.0, abs=1e-9)
    assert sol.dispatch[("n1", "dear")][0] == pytest.approx(30.0, abs=1e-9)
    assert sol.prices["n1"][0] == pytest.approx(30.0)
    assert "devex" in sol.metadata["pricing"] or "bland" in sol.metadata["pricing"]


@pytest.mark.parametrize("c", [0.01, 3.0, 1000.0])
def test_cost_scaling(c):
    base, scaled = solve(merit_order_problem()), solve(merit_order_problem(scale=c))
    assert scaled.objective == pytest.approx(c * base.objective, rel=1e-9)
    for k in base.dispatch:
        assert np.allclose(scaled.dispatch[k], base.dispatch[k], atol=1e-9)


def test_zero_demand_objective_is_fixed_om_only():
    techs = {"g": Technology("g", DISPATCHABLE, fixed_om=123.0, marginal=5.0)}
    series = {"demand_mw": SeriesTable("demand_mw", ["n1"], [[0.0, 0.0]])}
    sol = solve(build_problem(single_bus(), {("n1", "g"): 10.0}, series, costs=techs))
    assert sol.objective == pytest.approx(1230.0)
    assert np.all(sol.dispatch[("n1", "g")] == 0)


def test_co2_cap_zero_forces_slack():
    techs = {"coal": Technology("coal", DISPATCHABLE, marginal=20.0, emission_factor=0.9)}
    series = {"demand_mw": SeriesTable("demand_mw", ["n1"], [[40.0, 60.0]])}
    prob = build_problem(single_bus(), {("n1", "coal"): 100.0}, series, costs=techs, co2_cap=0.0, slack_penalty=500.0)
    sol = solve(prob)
    assert np.allclose(sol.dispatch[("n1", "coal")], 0.0, atol=1e-8)
    assert np.allclose(sol.slack["n1"], [40.0, 60.0])
    assert sol.unserved_mwh == pytest.approx(100.0)
    assert sol.co2_price == pytest.approx(480 / 0.9)


def test_ring_flows_closed_form():
    prob = ring_transfer_problem()
    sol = solve(prob)
    f = {l: v[0] for l, v in sol.flows.items()}
    assert f["l12"] == pytest.approx(2 / 3, abs=1e-9)
    assert abs(f["l23"]) == pytest.approx(1 / 3, abs=1e-9)
    assert abs(f["l31"]) == pytest.approx(1 / 3, abs=1e-9)
    assert sol.angles["b1"][0] == 0.0
    assert prob.reference_buses == ["b1"]


def test_verify_detects_injected_defect():
    prob = merit_order_problem()
    sol = solve(prob)
    rep = verify_solution(prob, sol)
    assert rep.ok() and rep.duality_gap <= 1e-6
    sol.dispatch[("n1", "cheap")] = sol.dispatch[("n1", "cheap")] + 1.0
    bad = verify_solution(prob, sol)
    assert bad.residuals["balance"] == pytest.approx(1.0)
    assert not bad.ok()


@pytest.fixture(scope="module")
def system():
    prob = two_bus_system()
    return prob, solve(prob)


def test_system_invariants(system):
    prob, sol = system
    assert sol.status == "optimal"
    rep = verify_solution(prob, sol)
    assert rep.ok(1e-6)
    T = len(prob.hours)
    # energy conservation per snapshot
    inj = np.zeros(T)
    for g in sol.dispatch.values():
        inj += g
    for k in sol.soc:
        inj += sol.discharge[k] - sol.charge[k]
    for u in sol.slack.values():
        inj += u
    assert np.max(np.abs(inj - prob.demand.sum(axis=0))) <= 1e-6
    # flow from angles, limits
    br = 30.0 * 100 / 220.0**2
    f = (sol.angles["a"] - sol.angles["b"]) * 100 / br
    assert np.max(np.abs(f - sol.flows["ab"])) <= 1e-8
    assert np.max(np.abs(sol.flows["ab"])) <= 150.0 + 1e-8
    # capacity factors bind
    t = np.arange(T)
    wind = np.clip(0.45 + 0.35 * np.sin(2 * np.pi * t / 17.0), 0, 1)
    assert np.all(sol.dispatch[("a", "wind")] <= sol.p_nom[("a", "wind")] * wind + 1e-8)
    assert sol.p_nom[("a", "wind")] <= 600.0 + 1e-8
    assert np.all(sol.dispatch[("a", "coal")] <= 120.0 + 1e-8)


def test_storage_cyclic(system):
    prob, sol = system
    tech = prob.techs["battery"]
    for k, soc in sol.soc.items():
        ch, dis = sol.charge[k], sol.discharge[k]
        prev = np.roll(soc, 1)
        assert np.allclose(soc, prev + tech.efficiency_charge * ch - dis / tech.efficiency_discharge, atol=1e-6)
        assert np.all(soc <= sol.e_nom[k] + 1e-8)


def test_co2_sweep_monotone():
    base = solve(two_bus_system())
    e0 = base.emissions
    objs = [base.objective]
    for frac in (0.75, 0.5, 0.25, 0.0):
        sol = solve(two_bus_system(co2_cap=frac * e0))
        assert sol.status == "optimal"
        assert sol.emissions <= frac * e0 + 1e-6
        objs.append(sol.objective)
    assert all(b >= a - 1e-9 * abs(a) for a, b in zip(objs, objs[1:]))
    for k, g in sol.dispatch.items():
        if k[1] in FOSSIL:
            assert np.all(np.abs(g) <= 1e-8)


def test_snapshot_weights():
    techs = {"g": Technology("g", DISPATCHABLE, marginal=2.0)}
    series = {"demand_mw": SeriesTable("demand_mw", ["n1"], [np.arange(1.0, 7.0)])}
    prob = build_problem(single_bus(), {("n1", "g"): 100.0}, series, costs=techs, snapshots=SnapshotSpec(0, 3, 2))
    assert prob.hours == [0, 2, 4]
    assert solve(prob).objective == pytest.approx(2.0 * 2 * (1 + 3 + 5))


def test_misaligned_ids_listed():
    series = {"demand_mw": SeriesTable("demand_mw", ["zz"], [[1.0]])}
    with pytest.raises(ProblemError, match="zz"):
        build_problem(single_bus(), {}, series)


def test_zero_snapshots_rejected():
    series = {"demand_mw": SeriesTable("demand_mw", ["n1"], np.zeros((1, 0)))}
    with pytest.raises(ProblemError):
        build_problem(single_bus(), {}, series)


def test_mps_export_round_trip_and_naming():
    prob = merit_order_problem()
    text = export_mps(prob)
    assert text == export_mps(merit_order_problem())
    assert "g_n1_cheap_0" in text and "bal_n1_0" in text
    res = solve_lp(read_mps(text))
    assert res.objective == pytest.approx(solve(prob).objective, rel=1e-9)


def test_pricing_rules_agree(system):
    prob, sol = system
    for rule in ("dantzig", "bland"):
        other = solve(prob, pricing=rule)
        assert other.objective == pytest.approx(sol.objective, rel=1e-9)
        assert rule in other.metadata["pricing"]
