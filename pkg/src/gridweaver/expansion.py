"""Joint capacity-expansion and dispatch LP with DC power flow and a CO2 cap."""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from gridweaver.errors import ConfigError, ProblemError
from gridweaver.lp import LinearProgram, LPBuilder, certify, solve_lp, write_mps
from gridweaver.profiles import SeriesTable
from gridweaver.topology import Network, connected_components

logger = logging.getLogger(__name__)

DISPATCHABLE = "dispatchable"
VARIABLE = "variable"
HYDRO = "hydro"
STORAGE = "storage"
TECH_KINDS = (DISPATCHABLE, VARIABLE, HYDRO, STORAGE)

DEFAULT_SLACK_PENALTY = 10_000.0
BASE_MVA = 100.0


def annuity(rate: float, lifetime_years: float) -> float:
    """Annualization factor ``r / (1 - (1 + r)^-n)``; ``1/n`` at ``r = 0``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError("discount rate must lie in [0, 1)")
    if lifetime_years < 1:
        raise ConfigError("lifetime must be at least one year")
    if rate == 0.0:
        return 1.0 / lifetime_years
    return rate / (1.0 - (1.0 + rate) ** (-lifetime_years))


@dataclass
class Technology:
    name: str
    kind: str = DISPATCHABLE
    capex: float = 0.0  # currency/MW
    fixed_om: float = 0.0  # currency/MW/yr
    marginal: float = 0.0  # currency/MWh
    emission_factor: float = 0.0  # tCO2/MWh
    lifetime_years: float = 25.0
    discount_rate: float = 0.07
    extendable: bool = False
    max_potential_mw: float = math.inf
    energy_capex: float = 0.0  # storage, currency/MWh
    efficiency_charge: float = 0.96
    efficiency_discharge: float = 0.96
    cf_kind: str | None = None

    def __post_init__(self):
        if self.kind not in TECH_KINDS:
            raise ConfigError(f"technology {self.name}: unknown kind {self.kind!r}")
        for f in ("capex", "fixed_om", "marginal", "emission_factor", "energy_capex", "max_potential_mw"):
            if getattr(self, f) < 0:
                raise ConfigError(f"technology {self.name}: {f} must be non-negative")
        if not 0.0 <= self.discount_rate < 1.0 or self.lifetime_years < 1:
            raise ConfigError(f"technology {self.name}: invalid discount rate or lifetime")
        if not (0 < self.efficiency_charge <= 1 and 0 < self.efficiency_discharge <= 1):
            raise ConfigError(f"technology {self.name}: efficiencies must lie in (0, 1]")
        if self.kind == VARIABLE and self.cf_kind is None:
            self.cf_kind = f"cf_{self.name}"

    @property
    def annualized_capex(self) -> float:
        return annuity(self.discount_rate, self.lifetime_years) * self.capex

    @property
    def annualized_energy_capex(self) -> float:
        return annuity(self.discount_rate, self.lifetime_years) * self.energy_capex


def default_technologies() -> dict[str, Technology]:
    """Indicative 2030-style cost assumptions; plain defaults, override in config."""
    techs = [
        Technology("coal", DISPATCHABLE, capex=1.6e6, fixed_om=4.0e4, marginal=30.0, emission_factor=0.95, lifetime_years=40),
        Technology("gas", DISPATCHABLE, capex=7.0e5, fixed_om=2.0e4, marginal=55.0, emission_factor=0.40, lifetime_years=30, extendable=True),
        Technology("oil", DISPATCHABLE, capex=5.0e5, fixed_om=1.0e4, marginal=120.0, emission_factor=0.75, lifetime_years=30),
        Technology("nuclear", DISPATCHABLE, capex=6.0e6, fixed_om=1.0e5, marginal=10.0, lifetime_years=50),
        Technology("biomass", DISPATCHABLE, capex=2.5e6, fixed_om=1.0e5, marginal=40.0, lifetime_years=30),
        Technology("geothermal", DISPATCHABLE, capex=4.0e6, fixed_om=1.2e5, marginal=5.0, lifetime_years=30),
        Technology("hydro", HYDRO, capex=2.5e6, fixed_om=2.5e4, marginal=1.0, lifetime_years=60),
        Technology("wind", VARIABLE, capex=1.1e6, fixed_om=3.0e4, marginal=0.01, lifetime_years=25, extendable=True),
        Technology("solar", VARIABLE, capex=4.5e5, fixed_om=1.0e4, marginal=0.01, lifetime_years=25, extendable=True),
        Technology("battery", STORAGE, capex=1.5e5, fixed_om=5.0e3, energy_capex=1.2e5, lifetime_years=15, extendable=True),
    ]
    return {t.name: t for t in techs}


@dataclass(frozen=True)
class SnapshotSpec:
    """Hours ``start, start + stride, ...``; each carries weight ``stride``."""

    start: int = 0
    count: int | None = None
    stride: int = 1

    def hours(self, available: int) -> list[int]:
        if self.stride < 1 or self.start < 0:
            raise ConfigError("snapshot stride must be >= 1 and start >= 0")
        stop = available if self.count is None else self.start + self.count * self.stride
        if stop > available:
            raise ProblemError(f"snapshot selection needs {stop} hours, series provide {available}")
        return list(range(self.start, stop, self.stride))


_NAME_SAFE = re.compile(r"\s+")


def _safe(s: str) -> str:
    return _NAME_SAFE.sub("_", str(s))


@dataclass
class ExpansionProblem:
    lp: LinearProgram
    buses: list[str]
    branches: list[str]
    techs: dict[str, Technology]
    hours: list[int]
    weights: np.ndarray
    demand: np.ndarray  # buses x snapshots
    existing: dict[tuple[str, str], float]
    gen: dict[tuple[str, str], np.ndarray]
    pnom: dict[tuple[str, str], int]
    flow: dict[str, np.ndarray]
    theta: dict[str, np.ndarray]
    slack: dict[str, np.ndarray]
    storage: dict[tuple[str, str], dict]
    balance_rows: dict[str, np.ndarray]
    co2_row: int | None
    row_groups: dict[str, np.ndarray]
    reference_buses: list[str]
    co2_cap: float
    slack_penalty: float
    metadata: dict[str, str] = field(default_factory=dict)


def _check_alignment(buses, capacities, series, potentials, techs):
    offenders = []
    bus_set = set(buses)
    for kind, table in series.items():
        extra = sorted(set(table.regions) - bus_set)
        if extra:
            offenders.append(f"{kind}: unknown regions {extra}")
    if "demand_mw" not in series:
        offenders.append("demand_mw: series missing")
    else:
        miss = sorted(bus_set - set(series["demand_mw"].regions))
        if miss:
            offenders.append(f"demand_mw: no series for buses {miss}")
    for label, mapping in (("capacities", capacities), ("potentials", potentials)):
        for bus, tech in mapping:
            if bus not in bus_set:
                offenders.append(f"{label}: unknown bus {bus!r}")
            if tech not in techs:
                offenders.append(f"{label}: unknown technology {tech!r}")
    if offenders:
        raise ProblemError("misaligned inputs: " + "; ".join(offenders))


def build_problem(
    network: Network,
    capacities: Mapping[tuple[str, str], float],
    series: Mapping[str, SeriesTable],
    potentials: Mapping[tuple[str, str], float] | None = None,
    costs: Mapping[str, Technology] | None = None,
    co2_cap: float = math.inf,
    snapshots: SnapshotSpec | None = None,
    slack_penalty: float = DEFAULT_SLACK_PENALTY,
    base_mva: float = BASE_MVA,
) -> ExpansionProblem:
    """Assemble the LP.

    ``capacities`` maps (bus, tech) to existing MW; ``potentials`` caps new
    build per (bus, tech) and overrides the technology-wide ceiling (a zero
    potential disables expansion there). Technologies not listed in
    ``costs`` cannot appear in the inputs.
    """
    techs = dict(sorted((costs or default_technologies()).items()))
    potentials = dict(potentials or {})
    capacities = {k: float(v) for k, v in capacities.items() if v > 0}
    network.validate()
    buses = sorted(network.buses)
    _check_alignment(buses, capacities, series, potentials, techs)

    demand_table = series["demand_mw"]
    hours = (snapshots or SnapshotSpec()).hours(demand_table.hours)
    if not hours:
        raise ProblemError("snapshot selection is empty")
    T = len(hours)
    w = np.full(T, float((snapshots or SnapshotSpec()).stride))
    hidx = np.array(hours)
    demand = np.array([demand_table.row(b)[hidx] for b in buses])

    def ceiling(bus, tech):
        t = techs[tech]
        if (bus, tech) in potentials:
            return float(potentials[(bus, tech)])
        return t.max_potential_mw if t.extendable else 0.0

    cf_cache: dict[tuple[str, str], np.ndarray] = {}

    def cf(bus, tech):
        t = techs[tech]
        if t.kind != VARIABLE:
            return np.ones(T)
        key = (bus, tech)
        if key not in cf_cache:
            table = series.get(t.cf_kind)
            if table is None or bus not in table.regions:
                raise ProblemError(f"misaligned inputs: {t.cf_kind} has no series for bus {bus!r}")
            if table.hours <= hidx.max():
                raise ProblemError(f"{t.cf_kind} covers {table.hours} hours, snapshots need {hidx.max() + 1}")
            cf_cache[key] = table.row(bus)[hidx]
        return cf_cache[key]

    inflow_table = series.get("inflow_mw")
    lpb = LPBuilder("gridweaver_expansion")
    groups: dict[str, list[int]] = {}

    def row(group, name, terms, lo=-np.inf, hi=np.inf):
        i = lpb.add_row(name, terms, lo, hi)
        groups.setdefault(group, []).append(i)
        return i

    gen: dict[tuple[str, str], np.ndarray] = {}
    pnom: dict[tuple[str, str], int] = {}
    storage: dict[tuple[str, str], dict] = {}
    existing: dict[tuple[str, str], float] = {}
    bus_injections: dict[str, list[list[tuple[int, float]]]] = {b: [[] for _ in range(T)] for b in buses}

    for b in buses:
        sb = _safe(b)
        for name, tech in techs.items():
            ex = capacities.get((b, name), 0.0)
            pot = ceiling(b, name)
            if ex <= 0 and pot <= 0:
                continue
            if tech.kind == STORAGE:
                if ex > 0:
                    logger.warning("existing storage at %s ignored; storage is expansion-only", b)
                if pot <= 0:
                    continue
                P = lpb.add_var(f"pnom_{sb}_{name}", 0.0, pot, tech.annualized_capex + tech.fixed_om)
                E = lpb.add_var(f"enom_{sb}_{name}", 0.0, np.inf, tech.annualized_energy_capex)
                ch = np.array([lpb.add_var(f"ch_{sb}_{name}_{h}") for h in hours])
                dis = np.array([lpb.add_var(f"dis_{sb}_{name}_{h}", cost=w[t] * tech.marginal) for t, h in enumerate(hours)])
                soc = np.array([lpb.add_var(f"soc_{sb}_{name}_{h}") for h in hours])
                storage[(b, name)] = {"p": P, "e": E, "charge": ch, "discharge": dis, "soc": soc}
                pnom[(b, name)] = P
                for t in range(T):
                    bus_injections[b][t] += [(dis[t], 1.0), (ch[t], -1.0)]
                continue
            existing[(b, name)] = ex
            lpb.offset += tech.fixed_om * ex
            avail = cf(b, name)
            if pot > 0:
                P = lpb.add_var(f"pnom_{sb}_{name}", 0.0, pot, tech.annualized_capex + tech.fixed_om)
                pnom[(b, name)] = P
                g = np.array([lpb.add_var(f"g_{sb}_{name}_{h}", cost=w[t] * tech.marginal) for t, h in enumerate(hours)])
            else:
                g = np.array([
                    lpb.add_var(f"g_{sb}_{name}_{h}", 0.0, ex * avail[t], w[t] * tech.marginal)
                    for t, h in enumerate(hours)
                ])
            gen[(b, name)] = g
            for t in range(T):
                bus_injections[b][t].append((g[t], 1.0))

    comps = connected_components(network)
    refs = sorted(min(c) for c in comps)
    ref_set = set(refs)
    theta = {}
    for b in buses:
        fixed = b in ref_set
        theta[b] = np.array([
            lpb.add_var(f"theta_{_safe(b)}_{h}", 0.0 if fixed else -np.inf, 0.0 if fixed else np.inf)
            for h in hours
        ])
    slack = {
        b: np.array([lpb.add_var(f"u_{_safe(b)}_{h}", cost=w[t] * slack_penalty) for t, h in enumerate(hours)])
        for b in buses
    }
    branch_ids = sorted(network.branches)
    flow = {}
    for lid in branch_ids:
        br = network.branches[lid]
        flow[lid] = np.array([
            lpb.add_var(f"f_{_safe(lid)}_{h}", -br.s_nom_mva, br.s_nom_mva) for h in hours
        ])
        for t in range(T):
            bus_injections[br.to_bus][t].append((flow[lid][t], 1.0))
            bus_injections[br.from_bus][t].append((flow[lid][t], -1.0))

    balance_rows = {}
    for bi, b in enumerate(buses):
        rows = []
        for t, h in enumerate(hours):
            terms = bus_injections[b][t] + [(slack[b][t], 1.0)]
            rows.append(row("balance", f"bal_{_safe(b)}_{h}", terms, demand[bi, t], demand[bi, t]))
        balance_rows[b] = np.array(rows)

    for lid in branch_ids:
        br = network.branches[lid]
        x_pu = br.x_ohm * base_mva / br.voltage_kv**2
        k = base_mva / x_pu
        for t, h in enumerate(hours):
            row("flow_definition", f"flow_{_safe(lid)}_{h}",
                [(flow[lid][t], 1.0), (theta[br.from_bus][t], -k), (theta[br.to_bus][t], k)], 0.0, 0.0)

    for (b, name), g in gen.items():
        if (b, name) not in pnom:
            continue
        avail = cf(b, name)
        ex = existing[(b, name)]
        for t, h in enumerate(hours):
            row("capacity", f"cap_{_safe(b)}_{name}_{h}", [(g[t], 1.0), (pnom[(b, name)], -avail[t])], -np.inf, ex * avail[t])

    for (b, name), g in gen.items():
        if techs[name].kind != HYDRO:
            continue
        if inflow_table is None or b not in inflow_table.regions:
            logger.warning("no inflow series for hydro at %s; energy is unconstrained", b)
            continue
        if inflow_table.hours <= hidx.max():
            raise ProblemError("inflow_mw does not cover the selected snapshots")
        budget = float(w @ inflow_table.row(b)[hidx])
        row("hydro", f"hydro_{_safe(b)}_{name}", [(g[t], w[t]) for t in range(T)], -np.inf, budget)

    for (b, name), st in storage.items():
        tech = techs[name]
        sb = _safe(b)
        for t, h in enumerate(hours):
            prev = st["soc"][t - 1]  # t = 0 wraps to the last snapshot (cyclic)
            terms = [(st["soc"][t], 1.0), (st["charge"][t], -w[t] * tech.efficiency_charge),
                     (st["discharge"][t], w[t] / tech.efficiency_discharge)]
            if prev != st["soc"][t]:
                terms.append((prev, -1.0))
            else:
                terms = [(st["charge"][t], -w[t] * tech.efficiency_charge),
                         (st["discharge"][t], w[t] / tech.efficiency_discharge)]
            row("storage_balance", f"soc_{sb}_{name}_{h}", terms, 0.0, 0.0)
            row("storage_limits", f"chmax_{sb}_{name}_{h}", [(st["charge"][t], 1.0), (st["p"], -1.0)], -np.inf, 0.0)
            row("storage_limits", f"dismax_{sb}_{name}_{h}", [(st["discharge"][t], 1.0), (st["p"], -1.0)], -np.inf, 0.0)
            row("storage_limits", f"socmax_{sb}_{name}_{h}", [(st["soc"][t], 1.0), (st["e"], -1.0)], -np.inf, 0.0)

    co2_row = None
    if math.isfinite(co2_cap):
        if co2_cap < 0:
            raise ConfigError("co2_cap must be non-negative")
        terms = [
            (g[t], w[t] * techs[name].emission_factor)
            for (b, name), g in gen.items()
            if techs[name].emission_factor > 0
            for t in range(T)
        ]
        co2_row = row("co2", "co2_cap", terms, -np.inf, co2_cap)

    lp = lpb.build()
    return ExpansionProblem(
        lp=lp, buses=buses, branches=branch_ids, techs=techs, hours=hours, weights=w,
        demand=demand, existing=existing, gen=gen, pnom=pnom, flow=flow, theta=theta, slack=slack,
        storage=storage, balance_rows=balance_rows, co2_row=co2_row,
        row_groups={k: np.array(v, dtype=np.int64) for k, v in groups.items()},
        reference_buses=refs, co2_cap=co2_cap, slack_penalty=slack_penalty,
        metadata={"base_mva": repr(base_mva), "snapshots": str(T), "rows": str(lp.num_rows), "cols": str(lp.num_cols)},
    )


@dataclass
class ExpansionSolution:
    status: str
    objective: float
    p_nom: dict[tuple[str, str], float]
    e_nom: dict[tuple[str, str], float]
    dispatch: dict[tuple[str, str], np.ndarray]
    flows: dict[str, np.ndarray]
    angles: dict[str, np.ndarray]
    charge: dict[tuple[str, str], np.ndarray]
    discharge: dict[tuple[str, str], np.ndarray]
    soc: dict[tuple[str, str], np.ndarray]
    slack: dict[str, np.ndarray]
    prices: dict[str, np.ndarray]
    co2_price: float
    emissions: float
    unserved_mwh: float
    row_duals: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)


def solve(problem: ExpansionProblem, tol: float = 1e-9, pricing: str = "devex", max_iter: int | None = None) -> ExpansionSolution:
    res = solve_lp(problem.lp, pricing=pricing, feas_tol=tol, opt_tol=tol, max_iter=max_iter)
    x, y = res.x, res.row_duals
    w = problem.weights
    dispatch = {k: x[v] for k, v in problem.gen.items()}
    p_nom = {k: float(x[j]) for k, j in problem.pnom.items()}
    st = problem.storage
    emissions = float(sum(
        problem.techs[name].emission_factor * (w @ g) for (b, name), g in dispatch.items()
    ))
    slack = {b: x[v] for b, v in problem.slack.items()}
    return ExpansionSolution(
        status=res.status,
        objective=res.objective,
        p_nom=p_nom,
        e_nom={k: float(x[s["e"]]) for k, s in st.items()},
        dispatch=dispatch,
        flows={l: x[v] for l, v in problem.flow.items()},
        angles={b: x[v] for b, v in problem.theta.items()},
        charge={k: x[s["charge"]] for k, s in st.items()},
        discharge={k: x[s["discharge"]] for k, s in st.items()},
        soc={k: x[s["soc"]] for k, s in st.items()},
        slack=slack,
        prices={b: y[rows] / w for b, rows in problem.balance_rows.items()},
        co2_price=float(-y[problem.co2_row]) if problem.co2_row is not None else 0.0,
        emissions=emissions,
        unserved_mwh=float(sum(w @ u for u in slack.values())),
        row_duals=y,
        metadata={
            "pricing": res.pricing,
            "iterations": str(res.iterations),
            "phase1_iterations": str(res.phase1_iterations),
        },
    )


def solution_vector(problem: ExpansionProblem, solution: ExpansionSolution) -> np.ndarray:
    """Reassemble the LP column vector from the solution's named arrays."""
    x = np.zeros(problem.lp.num_cols)
    for k, cols in problem.gen.items():
        x[cols] = solution.dispatch[k]
    for k, j in problem.pnom.items():
        x[j] = solution.p_nom[k]
    for k, s in problem.storage.items():
        x[s["e"]] = solution.e_nom[k]
        x[s["charge"]] = solution.charge[k]
        x[s["discharge"]] = solution.discharge[k]
        x[s["soc"]] = solution.soc[k]
    for l, cols in problem.flow.items():
        x[cols] = solution.flows[l]
    for b, cols in problem.theta.items():
        x[cols] = solution.angles[b]
    for b, cols in problem.slack.items():
        x[cols] = solution.slack[b]
    return x


@dataclass
class VerificationReport:
    max_primal_residual: float
    max_bound_violation: float
    duality_gap: float
    complementary_slackness: float
    max_dual_infeasibility: float
    residuals: dict[str, float]
    primal_objective: float
    dual_objective: float

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_primal_residual <= tol and self.max_bound_violation <= tol and self.duality_gap <= tol

    def as_dict(self) -> dict:
        return {
            "max_primal_residual": self.max_primal_residual,
            "max_bound_violation": self.max_bound_violation,
            "duality_gap": self.duality_gap,
            "complementary_slackness": self.complementary_slackness,
            "max_dual_infeasibility": self.max_dual_infeasibility,
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "residuals": dict(sorted(self.residuals.items())),
        }


def verify_solution(problem: ExpansionProblem, solution: ExpansionSolution) -> VerificationReport:
    """Recompute every residual from the problem data and the reported values.

    ``residuals`` breaks the worst row violation down by constraint family
    (balance, flow_definition, capacity, hydro, storage_*, co2) in MW, MWh or
    tCO2 as appropriate; ``flow_limit`` reports the worst ``|f| - s_nom``.
    """
    lp = problem.lp
    x = solution_vector(problem, solution)
    cert = certify(lp, x, solution.row_duals)
    activity = lp.A @ x
    viol = np.maximum(np.maximum(lp.row_lo - activity, activity - lp.row_hi), 0.0)
    residuals = {g: float(viol[rows].max(initial=0.0)) for g, rows in problem.row_groups.items()}
    over = 0.0
    for l, cols in problem.flow.items():
        over = max(over, float(np.max(np.abs(x[cols]) - lp.col_hi[cols], initial=0.0)))
    residuals["flow_limit"] = max(over, 0.0)
    return VerificationReport(
        max_primal_residual=cert.max_primal_residual,
        max_bound_violation=cert.max_bound_violation,
        duality_gap=cert.duality_gap,
        complementary_slackness=cert.complementary_slackness,
        max_dual_infeasibility=cert.max_dual_infeasibility,
        residuals=residuals,
        primal_objective=cert.primal_objective,
        dual_objective=cert.dual_objective,
    )


def export_mps(problem: ExpansionProblem) -> str:
    return write_mps(problem.lp)
