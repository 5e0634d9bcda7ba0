"""Electrical network graph built from substations and line geometries."""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from gridweaver.errors import ConfigError, NetworkError
from gridweaver.geo import haversine_km
from gridweaver.ingest import EXISTING, PLANNED, RawLine, RawSubstation

logger = logging.getLogger(__name__)

SUBSTATION = "substation"
VIRTUAL = "virtual"

# voltage class kV -> (r ohm/km, x ohm/km, s_nom MVA per circuit)
DEFAULT_PARAMS: dict[float, tuple[float, float, float]] = {
    110.0: (0.12, 0.40, 120.0),
    220.0: (0.06, 0.30, 490.0),
    330.0: (0.04, 0.30, 700.0),
    500.0: (0.03, 0.28, 1500.0),
}


@dataclass(frozen=True)
class Bus:
    id: str
    lon: float
    lat: float
    voltage_kv: float
    country: str = ""
    origin: str = SUBSTATION

    def __post_init__(self):
        if not self.voltage_kv > 0:
            raise ValueError(f"bus {self.id}: voltage must be positive")


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    length_km: float
    voltage_kv: float
    r_ohm: float = math.nan
    x_ohm: float = math.nan
    s_nom_mva: float = math.nan
    circuits: int = 1
    status: str = EXISTING

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise ValueError(f"branch {self.id}: from_bus equals to_bus")
        if not self.length_km > 0:
            raise ValueError(f"branch {self.id}: length must be positive")
        if self.circuits < 1:
            raise ValueError(f"branch {self.id}: circuits must be >= 1")


@dataclass
class Network:
    buses: dict[str, Bus] = field(default_factory=dict)
    branches: dict[str, Branch] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def validate(self, require_params=True) -> "Network":
        for b in self.branches.values():
            for end in (b.from_bus, b.to_bus):
                if end not in self.buses:
                    raise NetworkError(f"branch {b.id} references unknown bus {end}")
            if require_params:
                if not (b.x_ohm > 0 and math.isfinite(b.x_ohm)):
                    raise NetworkError(f"branch {b.id}: reactance must be positive, got {b.x_ohm}")
                if not b.r_ohm >= 0:
                    raise NetworkError(f"branch {b.id}: resistance must be non-negative")
                if not b.s_nom_mva > 0:
                    raise NetworkError(f"branch {b.id}: rating must be positive")
        return self

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return self.buses == other.buses and _branches_equal(self.branches, other.branches)


def _branches_equal(a, b):
    if a.keys() != b.keys():
        return False
    for k in a:
        x, y = a[k], b[k]
        for f in ("r_ohm", "x_ohm", "s_nom_mva"):
            u, v = getattr(x, f), getattr(y, f)
            if not (u == v or (math.isnan(u) and math.isnan(v))):
                return False
        if replace(x, r_ohm=0.0, x_ohm=0.0, s_nom_mva=0.0) != replace(y, r_ohm=0.0, x_ohm=0.0, s_nom_mva=0.0):
            return False
    return True


def polyline_length(path: Sequence[tuple[float, float]]) -> float:
    """Haversine length of a lon/lat polyline in km."""
    if len(path) < 2:
        raise ValueError("polyline needs at least two vertices")
    p = np.asarray(path, dtype=float)
    return float(haversine_km(p[:-1, 0], p[:-1, 1], p[1:, 0], p[1:, 1]).sum())


def snap_and_build(
    substations: Sequence[RawSubstation],
    lines: Sequence[RawLine],
    snap_tol_km: float = 2.0,
    include_planned: bool = False,
) -> Network:
    """Attach line endpoints to substations and return the (unparameterized) network.

    Substations at identical coordinates merge into the first one (document
    order), keeping the maximum voltage. An endpoint farther than
    ``snap_tol_km`` from every substation becomes a virtual bus; endpoints at
    identical coordinates share one virtual bus.
    """
    if snap_tol_km < 0:
        raise ConfigError("snap_tol_km must be non-negative")

    merged: dict[tuple[float, float], dict] = {}
    for s in substations:
        key = (s.lon, s.lat)
        if key in merged:
            m = merged[key]
            if s.voltage_kv is not None:
                m["voltage_kv"] = max(m["voltage_kv"] or 0.0, s.voltage_kv)
            m["country"] = m["country"] or s.country
        else:
            merged[key] = {"id": s.id, "voltage_kv": s.voltage_kv, "country": s.country}

    line_kv = [ln.voltage_kv for ln in lines if ln.voltage_kv]
    fallback_kv = max(line_kv) if line_kv else 110.0

    sub_ids = [m["id"] for m in merged.values()]
    if len(set(sub_ids)) != len(sub_ids):
        raise NetworkError("substation ids are not unique")
    sub_lon = np.array([k[0] for k in merged], dtype=float)
    sub_lat = np.array([k[1] for k in merged], dtype=float)
    sub_country = [m["country"] or "" for m in merged.values()]
    sub_kv = [m["voltage_kv"] for m in merged.values()]
    # voltage of substation buses that carry no tag comes from connected lines
    attached_kv: dict[str, float] = {}

    virtual: dict[tuple[float, float], dict] = {}

    def attach(lon, lat, kv):
        if sub_ids:
            dist = haversine_km(lon, lat, sub_lon, sub_lat)
            k = int(np.argmin(dist))
            if dist[k] <= snap_tol_km:
                attached_kv[sub_ids[k]] = max(attached_kv.get(sub_ids[k], 0.0), kv)
                return sub_ids[k]
        key = (lon, lat)
        if key not in virtual:
            country = ""
            if sub_ids:
                country = sub_country[int(np.argmin(haversine_km(lon, lat, sub_lon, sub_lat)))]
            virtual[key] = {"id": f"v{len(virtual)}", "voltage_kv": kv, "country": country}
        else:
            virtual[key]["voltage_kv"] = max(virtual[key]["voltage_kv"], kv)
        return virtual[key]["id"]

    branches: dict[str, Branch] = {}
    dropped = 0
    for ln in lines:
        if ln.status == PLANNED and not include_planned:
            continue
        kv = ln.voltage_kv or fallback_kv
        a = attach(*ln.path[0], kv)
        b = attach(*ln.path[-1], kv)
        if a == b:
            dropped += 1
            continue
        bid = ln.id
        if bid in branches:
            raise NetworkError(f"duplicate line id {bid}")
        branches[bid] = Branch(
            id=bid,
            from_bus=a,
            to_bus=b,
            length_km=polyline_length(ln.path),
            voltage_kv=kv,
            circuits=ln.circuits,
            status=ln.status,
        )
    if dropped:
        logger.info("dropped %d lines whose endpoints snapped to the same bus", dropped)

    buses: dict[str, Bus] = {}
    for sid, lon, lat, kv, country in zip(sub_ids, sub_lon, sub_lat, sub_kv, sub_country):
        v = kv or attached_kv.get(sid) or fallback_kv
        buses[sid] = Bus(sid, float(lon), float(lat), float(v), country, SUBSTATION)
    for (lon, lat), v in virtual.items():
        vid = v["id"]
        while vid in buses:
            vid = "_" + vid
        if vid != v["id"]:
            for k, br in list(branches.items()):
                if br.from_bus == v["id"] or br.to_bus == v["id"]:
                    branches[k] = replace(
                        br,
                        from_bus=vid if br.from_bus == v["id"] else br.from_bus,
                        to_bus=vid if br.to_bus == v["id"] else br.to_bus,
                    )
        buses[vid] = Bus(vid, float(lon), float(lat), float(v["voltage_kv"]), v["country"], VIRTUAL)

    meta = {
        "snap_tol_km": repr(float(snap_tol_km)),
        "include_planned": str(bool(include_planned)),
        "virtual_buses": str(len(virtual)),
    }
    return Network(buses, branches, meta).validate(require_params=False)


def _param_class(table, kv):
    classes = sorted(table)
    below = [c for c in classes if c <= kv]
    return below[-1] if below else classes[0]


def assign_electrical_params(network: Network, param_table=None) -> Network:
    """Length- and circuit-scaled impedances and ratings from a voltage-class table."""
    table = DEFAULT_PARAMS if param_table is None else {float(k): tuple(v) for k, v in param_table.items()}
    if not table:
        raise ConfigError("electrical parameter table is empty")
    branches = {}
    for bid, b in network.branches.items():
        r_km, x_km, s_circ = table[_param_class(table, b.voltage_kv)]
        branches[bid] = replace(
            b,
            r_ohm=r_km * b.length_km / b.circuits,
            x_ohm=x_km * b.length_km / b.circuits,
            s_nom_mva=s_circ * b.circuits,
        )
    out = Network(dict(network.buses), branches, dict(network.metadata))
    return out.validate()


def connected_components(network: Network) -> list[set[str]]:
    """Bus-id sets, largest first (ties: smallest member id first)."""
    adj: dict[str, list[str]] = {b: [] for b in network.buses}
    for br in network.branches.values():
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    seen: set[str] = set()
    comps = []
    for start in sorted(adj):
        if start in seen:
            continue
        comp = {start}
        queue = deque([start])
        seen.add(start)
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    comp.add(v)
                    queue.append(v)
        comps.append(comp)
    comps.sort(key=lambda c: (-len(c), min(c)))
    return comps


def total_length_km(network: Network) -> float:
    return float(sum(b.length_km for b in network.branches.values()))


# -- persistence ------------------------------------------------------------

BUS_COLUMNS = ["id", "lon", "lat", "voltage_kv", "country", "origin"]
BRANCH_COLUMNS = ["id", "from", "to", "length_km", "r_ohm", "x_ohm", "s_nom_mva", "circuits", "status", "voltage_kv"]


def _f(v: float) -> str:
    return repr(float(v))


def write_network(network: Network, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "buses.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BUS_COLUMNS)
        for bid in sorted(network.buses):
            b = network.buses[bid]
            w.writerow([b.id, _f(b.lon), _f(b.lat), _f(b.voltage_kv), b.country, b.origin])
    with open(d / "branches.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BRANCH_COLUMNS)
        for bid in sorted(network.branches):
            b = network.branches[bid]
            w.writerow([
                b.id, b.from_bus, b.to_bus, _f(b.length_km), _f(b.r_ohm), _f(b.x_ohm),
                _f(b.s_nom_mva), b.circuits, b.status, _f(b.voltage_kv),
            ])
    if network.metadata:
        (d / "metadata.json").write_text(json.dumps(network.metadata, sort_keys=True, indent=1) + "\n")


def read_network(directory) -> Network:
    d = Path(directory)
    buses, branches = {}, {}
    with open(d / "buses.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            buses[row["id"]] = Bus(
                row["id"], float(row["lon"]), float(row["lat"]), float(row["voltage_kv"]),
                row["country"], row["origin"],
            )
    with open(d / "branches.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            branches[row["id"]] = Branch(
                id=row["id"], from_bus=row["from"], to_bus=row["to"],
                length_km=float(row["length_km"]), voltage_kv=float(row["voltage_kv"]),
                r_ohm=float(row["r_ohm"]), x_ohm=float(row["x_ohm"]), s_nom_mva=float(row["s_nom_mva"]),
                circuits=int(row["circuits"]), status=row["status"],
            )
    meta_path = d / "metadata.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Network(buses, branches, meta).validate(require_params=False)


def network_geojson(network: Network) -> dict:
    feats = []
    for bid in sorted(network.buses):
        b = network.buses[bid]
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [b.lon, b.lat]},
            "properties": {"id": b.id, "voltage_kv": b.voltage_kv, "country": b.country, "origin": b.origin},
        })
    for lid in sorted(network.branches):
        br = network.branches[lid]
        a, b = network.buses[br.from_bus], network.buses[br.to_bus]
        feats.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [[a.lon, a.lat], [b.lon, b.lat]]},
            "properties": {
                "id": br.id, "from": br.from_bus, "to": br.to_bus, "s_nom_mva": br.s_nom_mva,
                "x_ohm": br.x_ohm, "status": br.status,
            },
        })
    return {"type": "FeatureCollection", "features": feats}
