"""Result tables and a static SVG map of the network and its solution."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np
from shapely.geometry import MultiPolygon, Polygon

from gridweaver.errors import GridweaverError
from gridweaver.expansion import ExpansionProblem, ExpansionSolution
from gridweaver.regions import RegionCell
from gridweaver.topology import Network

TECH_COLORS = {
    "coal": "#4d4d4d", "gas": "#e07b39", "oil": "#8c564b", "nuclear": "#9467bd",
    "biomass": "#6b8e23", "geothermal": "#bc3c3c", "hydro": "#1f77b4", "wind": "#2ca02c",
    "solar": "#f2c80f", "battery": "#d62ad6",
}
_FALLBACK_COLORS = ["#17becf", "#7f7f7f", "#aec7e8", "#ff9896", "#c5b0d5"]


def _num(v: float) -> str:
    return format(float(v) + 0.0, ".10g")


def _px(v: float) -> str:
    return f"{v:.2f}"


def tech_color(name: str) -> str:
    if name in TECH_COLORS:
        return TECH_COLORS[name]
    return _FALLBACK_COLORS[sum(map(ord, name)) % len(_FALLBACK_COLORS)]


def _rings(geom):
    if isinstance(geom, Polygon):
        polys = [geom]
    elif isinstance(geom, MultiPolygon):
        polys = list(geom.geoms)
    else:
        polys = [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon)]
    for p in polys:
        yield p.exterior.coords
        for hole in p.interiors:
            yield hole.coords


def render_map(
    network: Network,
    cells: Sequence[RegionCell] = (),
    solution: ExpansionSolution | Mapping[tuple[str, str], float] | None = None,
    existing: Mapping[tuple[str, str], float] | None = None,
    width: int = 800,
    height: int = 600,
    title: str = "",
) -> str:
    """SVG map: cells as outlines, branches as lines, buses as circles.

    ``solution`` is an ExpansionSolution or a plain (bus, tech) -> built MW
    mapping, e.g. read back from capacities.csv.

    Line width scales with s_nom. With a solution, circle radius scales with
    installed capacity (existing plus built), circles take the colour of the
    largest technology at the bus, and branches are coloured existing vs.
    planned (planned lines enter the model only when included, so they count
    as built).
    """
    if not network.buses:
        raise GridweaverError("cannot render an empty network")
    lons = [b.lon for b in network.buses.values()]
    lats = [b.lat for b in network.buses.values()]
    for c in cells:
        if not c.polygon.is_empty:
            x0, y0, x1, y1 = c.polygon.bounds
            lons += [x0, x1]
            lats += [y0, y1]
    lon0, lon1, lat0, lat1 = min(lons), max(lons), min(lats), max(lats)
    kx = math.cos(math.radians((lat0 + lat1) / 2.0))
    span_x = max((lon1 - lon0) * kx, 1e-6)
    span_y = max(lat1 - lat0, 1e-6)
    legend_w = 140 if solution is not None else 0
    margin = 20.0
    scale = min((width - legend_w - 2 * margin) / span_x, (height - 2 * margin) / span_y)

    def xy(lon, lat):
        return margin + (lon - lon0) * kx * scale, height - margin - (lat - lat0) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<text x="{_px(margin)}" y="14" font-size="12">{escape(title)}</text>')

    for c in sorted(cells, key=lambda c: c.bus_id):
        d = []
        for ring in _rings(c.polygon):
            pts = [xy(x, y) for x, y in ring]
            d.append("M" + " L".join(f"{_px(px)},{_px(py)}" for px, py in pts) + " Z")
        if d:
            out.append(f'<path d="{" ".join(d)}" fill="none" stroke="#bbbbbb" stroke-width="0.8"/>')

    smax = max((br.s_nom_mva for br in network.branches.values() if math.isfinite(br.s_nom_mva)), default=1.0)
    for lid in sorted(network.branches):
        br = network.branches[lid]
        a, b = network.buses[br.from_bus], network.buses[br.to_bus]
        (x1, y1), (x2, y2) = xy(a.lon, a.lat), xy(b.lon, b.lat)
        s = br.s_nom_mva if math.isfinite(br.s_nom_mva) else 0.0
        color = "#555555"
        if solution is not None and br.status == "planned":
            color = "#d95f02"
        out.append(
            f'<line x1="{_px(x1)}" y1="{_px(y1)}" x2="{_px(x2)}" y2="{_px(y2)}" '
            f'stroke="{color}" stroke-width="{_px(0.5 + 4.0 * s / smax)}"/>'
        )

    installed: dict[str, dict[str, float]] = {b: {} for b in network.buses}
    if solution is not None:
        for (bus, tech), mw in (existing or {}).items():
            if bus in installed:
                installed[bus][tech] = installed[bus].get(tech, 0.0) + mw
        built = solution.p_nom if isinstance(solution, ExpansionSolution) else solution
        for (bus, tech), mw in built.items():
            if bus in installed:
                installed[bus][tech] = installed[bus].get(tech, 0.0) + mw
    totals = {b: sum(v.values()) for b, v in installed.items()}
    cmax = max(totals.values(), default=0.0)
    for bid in sorted(network.buses):
        bus = network.buses[bid]
        cx, cy = xy(bus.lon, bus.lat)
        r, fill = 3.0, "#333333"
        if solution is not None and cmax > 0:
            r = 3.0 + 12.0 * math.sqrt(totals[bid] / cmax)
            if totals[bid] > 0:
                fill = tech_color(max(sorted(installed[bid]), key=lambda t: installed[bid][t]))
        out.append(f'<circle cx="{_px(cx)}" cy="{_px(cy)}" r="{_px(r)}" fill="{fill}" stroke="#000000" stroke-width="0.5"/>')

    if solution is not None:
        present = sorted({t for v in installed.values() for t, mw in v.items() if mw > 1e-9})
        x0 = width - legend_w + 10
        for i, tech in enumerate(present):
            y = margin + 16 * i
            out.append(f'<rect x="{_px(x0)}" y="{_px(y)}" width="10" height="10" fill="{tech_color(tech)}"/>')
            out.append(f'<text x="{_px(x0 + 14)}" y="{_px(y + 9)}" font-size="10">{escape(tech)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- result tables -----------------------------------------------------------------


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_results(problem: ExpansionProblem, solution: ExpansionSolution, directory) -> list[Path]:
    """Write capacities/dispatch/flows/prices/storage/summary CSVs; returns the paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    hours = problem.hours
    written = []

    path = d / "capacities.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["bus", "tech", "existing_mw", "built_mw"])
        keys = sorted(set(problem.existing) | set(solution.p_nom))
        for bus, tech in keys:
            w.writerow([bus, tech, _num(problem.existing.get((bus, tech), 0.0)), _num(solution.p_nom.get((bus, tech), 0.0))])
    written.append(path)

    path = d / "dispatch.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["bus", "tech", "hour", "mw"])
        for (bus, tech) in sorted(solution.dispatch):
            for h, v in zip(hours, solution.dispatch[(bus, tech)]):
                w.writerow([bus, tech, h, _num(v)])
    written.append(path)

    path = d / "flows.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["line", "hour", "mw"])
        for lid in sorted(solution.flows):
            for h, v in zip(hours, solution.flows[lid]):
                w.writerow([lid, h, _num(v)])
    written.append(path)

    path = d / "prices.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["bus", "hour", "price"])
        for bus in sorted(solution.prices):
            for h, v in zip(hours, solution.prices[bus]):
                w.writerow([bus, h, _num(v)])
    written.append(path)

    path = d / "storage.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["bus", "tech", "hour", "charge_mw", "discharge_mw", "soc_mwh"])
        for key in sorted(solution.soc):
            bus, tech = key
            for t, h in enumerate(hours):
                w.writerow([bus, tech, h, _num(solution.charge[key][t]), _num(solution.discharge[key][t]),
                            _num(solution.soc[key][t])])
    written.append(path)

    path = d / "summary.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["key", "value"])
        rows = [
            ("status", solution.status),
            ("objective", _num(solution.objective)),
            ("emissions_t", _num(solution.emissions)),
            ("unserved_mwh", _num(solution.unserved_mwh)),
            ("co2_price", _num(solution.co2_price)),
            ("demand_mwh", _num(float(problem.weights @ problem.demand.sum(axis=0)))),
            ("snapshots", len(hours)),
            ("pricing", solution.metadata.get("pricing", "")),
            ("iterations", solution.metadata.get("iterations", "")),
        ]
        w.writerows(rows)
    written.append(path)
    return written


def read_summary(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        return {r["key"]: r["value"] for r in csv.DictReader(fh)}


def capacity_totals(solution: ExpansionSolution) -> dict[str, float]:
    out: dict[str, float] = {}
    for (_, tech), mw in solution.p_nom.items():
        out[tech] = out.get(tech, 0.0) + mw
    return dict(sorted(out.items()))


def dispatch_totals(problem: ExpansionProblem, solution: ExpansionSolution) -> dict[str, float]:
    out: dict[str, float] = {}
    for (_, tech), g in solution.dispatch.items():
        out[tech] = out.get(tech, 0.0) + float(np.dot(problem.weights, g))
    return dict(sorted(out.items()))
