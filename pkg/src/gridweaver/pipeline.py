"""Staged, content-hashed pipeline from raw geodata to optimized results.

Each stage reads the previous stages' files plus raw inputs, writes into
``<output_dir>/<stage>/`` and appends one line to ``manifest.jsonl``. A
stage whose input hashes, config hash and outputs are unchanged since its
last manifest entry is skipped.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import shape

from gridweaver import eligibility as elig
from gridweaver import expansion, ingest, plants, profiles, regions, report, topology
from gridweaver.config import PipelineConfig
from gridweaver.errors import ConfigError, PrerequisiteError

logger = logging.getLogger(__name__)

STAGES = ("ingest", "build", "cluster", "profiles", "eligibility", "optimize", "report")
MANIFEST = "manifest.jsonl"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _files_under(d: Path) -> list[Path]:
    return sorted(p for p in d.rglob("*") if p.is_file()) if d.exists() else []


@dataclass
class StageResult:
    stage: str
    status: str  # "ran" | "up-to-date"
    outputs: list[Path]


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.output_dir

    # -- bookkeeping -----------------------------------------------------------

    def stage_dir(self, stage: str) -> Path:
        return self.out / stage

    @property
    def manifest_path(self) -> Path:
        return self.out / MANIFEST

    def manifest(self) -> list[dict]:
        if not self.manifest_path.exists():
            return []
        return [json.loads(line) for line in self.manifest_path.read_text().splitlines() if line.strip()]

    def last_entry(self, stage: str) -> dict | None:
        entries = [e for e in self.manifest() if e["stage"] == stage]
        return entries[-1] if entries else None

    def _rel(self, p: Path) -> str:
        try:
            return str(p.resolve().relative_to(self.cfg.base_dir.resolve()))
        except ValueError:
            return str(p.resolve())

    def _raw_inputs(self, stage: str) -> list[Path]:
        c, p = self.cfg, self.cfg.paths
        if stage == "ingest":
            return [c.resolve(p.substations), c.resolve(p.lines)] + [c.resolve(x) for x in p.plants]
        if stage == "cluster":
            extra = [c.resolve(p.country_shapes)]
            if elig.POPULATION in p.rasters:
                pop = c.resolve(p.rasters[elig.POPULATION])
                extra += [pop, pop.with_suffix(pop.suffix + ".json")]
            return extra
        if stage == "profiles":
            return [c.resolve(p.weather)]
        if stage == "eligibility":
            out = []
            for kind in sorted(p.rasters):
                r = c.resolve(p.rasters[kind])
                out += [r, r.with_suffix(r.suffix + ".json")]
            return out
        return []

    def input_hashes(self, stage: str) -> dict[str, str]:
        idx = STAGES.index(stage)
        files = list(self._raw_inputs(stage))
        for upstream in STAGES[:idx]:
            files += _files_under(self.stage_dir(upstream))
        return {self._rel(f): sha256_file(f) for f in sorted(set(files), key=str)}

    def output_hashes(self, stage: str) -> dict[str, str]:
        return {self._rel(f): sha256_file(f) for f in _files_under(self.stage_dir(stage))}

    def is_complete(self, stage: str) -> bool:
        entry = self.last_entry(stage)
        if entry is None:
            return False
        return all((self.cfg.base_dir / k).exists() or Path(k).exists() for k in entry["outputs"])

    def check_prerequisites(self, stage: str):
        for upstream in STAGES[: STAGES.index(stage)]:
            if not self.is_complete(upstream):
                raise PrerequisiteError(f"run stage '{upstream}' first")

    def up_to_date(self, stage: str) -> bool:
        entry = self.last_entry(stage)
        if entry is None or entry["config"] != self.cfg.digest():
            return False
        if entry["inputs"] != self.input_hashes(stage):
            return False
        return entry["outputs"] == self.output_hashes(stage)

    # -- driver --------------------------------------------------------------------

    def run_stage(self, stage: str, force: bool = False, export_mps=None) -> StageResult:
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
        self.check_prerequisites(stage)
        if stage == "ingest":
            self.cfg.validate(check_paths=True)
        if not force and self.up_to_date(stage):
            logger.info("stage %s: up to date", stage)
            if export_mps is not None and stage == "optimize":
                Path(export_mps).write_text(expansion.export_mps(self._build_problem()))
            return StageResult(stage, "up-to-date", [])
        inputs = self.input_hashes(stage)
        d = self.stage_dir(stage)
        for old in _files_under(d):
            old.unlink()
        d.mkdir(parents=True, exist_ok=True)
        logger.info("stage %s: running", stage)
        kwargs = {"export_mps": export_mps} if stage == "optimize" else {}
        getattr(self, f"_run_{stage}")(d, **kwargs)
        outputs = self.output_hashes(stage)
        entry = {
            "stage": stage,
            "inputs": inputs,
            "config": self.cfg.digest(),
            "outputs": outputs,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.manifest_path, "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
        return StageResult(stage, "ran", [self.cfg.base_dir / k for k in outputs])

    def run_all(self, force: bool = False, export_mps=None) -> list[StageResult]:
        return [self.run_stage(s, force=force, export_mps=export_mps) for s in STAGES]

    # -- stages ------------------------------------------------------------------------

    def _run_ingest(self, d: Path):
        c, p = self.cfg, self.cfg.paths
        counts = {}
        for kind, parser, src, writer in (
            ("substations", ingest.parse_substations, p.substations, ingest.substations_to_geojson),
            ("lines", ingest.parse_lines, p.lines, ingest.lines_to_geojson),
        ):
            res = parser(c.resolve(src), c.ingest.dialect)
            rejected_idx = {r.feature_index for r in res.rejected}
            doc_index = [i for i in range(len(res.records) + len(res.rejected)) if i not in rejected_idx]
            index_of = {id(rec): i for rec, i in zip(res.records, doc_index)}
            rep = ingest.filter_transmission(res.records, c.ingest.threshold_kv, c.ingest.keep_missing_voltage)
            rejections = list(res.rejected)
            rejections += [ingest.Rejection(index_of[id(r)], f"below {c.ingest.threshold_kv:g} kV") for r in rep.rejected]
            if not c.ingest.keep_missing_voltage:
                rejections += [ingest.Rejection(index_of[id(r)], "missing voltage") for r in rep.missing_voltage]
            rejections.sort()
            ingest.write_rejections(d / f"{kind}_rejections.csv", rejections)
            (d / f"{kind}.geojson").write_text(json.dumps(writer(rep.kept), sort_keys=True) + "\n")
            counts[kind] = {"parsed": len(res.records), "unparsable": len(res.rejected), **rep.counts()}
            logger.info("%s: %d parsed, %d kept, %d below threshold, %d missing voltage", kind,
                        len(res.records), len(rep.kept), len(rep.rejected), len(rep.missing_voltage))

        merged = None
        match_rows, plant_rejections = [], []
        for path in p.plants:
            recs, rej = plants.parse_plants(c.resolve(path), Path(path).stem)
            plant_rejections += [(Path(path).name, r.row, r.reason) for r in rej]
            if merged is None:
                merged = recs
            else:
                merged, rep = plants.match_plants(merged, recs, c.plants.name_threshold, c.plants.dist_km)
                match_rows += rep
        merged = merged or []
        plants.write_plants(d / "plants.csv", merged)
        plants.write_match_report(d / "match_report.csv", match_rows)
        with open(d / "plant_rejections.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source", "row", "reason"])
            w.writerows(plant_rejections)
        counts["plants"] = {"merged": len(merged), "matches": len(match_rows), "rejected": len(plant_rejections)}
        (d / "summary.json").write_text(json.dumps(counts, sort_keys=True, indent=1) + "\n")

    def _run_build(self, d: Path):
        src = self.stage_dir("ingest")
        subs = ingest.parse_substations(src / "substations.geojson").records
        lines = ingest.parse_lines(src / "lines.geojson").records
        b = self.cfg.build
        net = topology.snap_and_build(subs, lines, b.snap_tol_km, b.include_planned)
        table = None
        if b.param_table:
            table = {float(kv): tuple(v) for kv, v in b.param_table.items()}
        net = topology.assign_electrical_params(net, table)
        net.validate()
        topology.write_network(net, d / "network")
        (d / "network.geojson").write_text(json.dumps(topology.network_geojson(net), sort_keys=True) + "\n")
        comps = topology.connected_components(net)
        logger.info("network: %d buses, %d branches, %d components, %.1f km",
                    len(net.buses), len(net.branches), len(comps), topology.total_length_km(net))

    def _country_shapes(self) -> dict:
        doc = json.loads(self.cfg.resolve(self.cfg.paths.country_shapes).read_text())
        out = {}
        for f in doc["features"]:
            props = f.get("properties") or {}
            code = props.get("country") or props.get("iso2") or props.get("ISO_A2")
            if not code:
                raise ConfigError("country shape feature lacks a 'country' property")
            out[str(code).upper()] = shape(f["geometry"])
        return out

    def _population_weights(self, cells: list[regions.RegionCell]) -> dict[str, float]:
        """Cell population share within its country; falls back to area share."""
        pop = None
        if elig.POPULATION in self.cfg.paths.rasters:
            layer = elig.read_raster(self.cfg.resolve(self.cfg.paths.rasters[elig.POPULATION]), elig.POPULATION)
            pop = {}
            for c in cells:
                inside = shapely.contains_xy(c.polygon, layer.lon, layer.lat)
                if inside.any():
                    density = float(layer.values[inside].mean())
                else:
                    rp = c.polygon.representative_point() if not c.polygon.is_empty else None
                    j = 0 if rp is None else int(np.argmin((layer.lon - rp.x) ** 2 + (layer.lat - rp.y) ** 2))
                    density = float(layer.values[j])
                pop[c.bus_id] = max(density, 0.0) * c.area_km2
        raw = pop if pop is not None else {c.bus_id: c.area_km2 for c in cells}
        by_country: dict[str, float] = {}
        for c in cells:
            by_country[c.country] = by_country.get(c.country, 0.0) + raw[c.bus_id]
        weights = {}
        for c in cells:
            total = by_country[c.country]
            if total > 0:
                weights[c.bus_id] = raw[c.bus_id] / total
            else:
                n = sum(1 for x in cells if x.country == c.country)
                weights[c.bus_id] = 1.0 / n
        return weights

    def _run_cluster(self, d: Path):
        cfg = self.cfg
        net = topology.read_network(self.stage_dir("build") / "network")
        shapes = self._country_shapes()
        countries = sorted({b.country for b in net.buses.values()})
        missing = [c for c in countries if c not in shapes]
        if missing:
            raise ConfigError(f"no country shape for {missing}")
        cells = []
        for country in countries:
            seeds = [(b.id, b.lon, b.lat) for b in sorted(net.buses.values(), key=lambda b: b.id) if b.country == country]
            cells += regions.build_voronoi(shapes[country], seeds, country)
        weights = self._population_weights(cells)

        plant_list, _ = plants.parse_plants(self.stage_dir("ingest") / "plants.csv")
        by_bus = plants.assign_to_regions(plant_list, cells)

        cm = regions.cluster_buses(list(net.buses.values()), weights, cfg.cluster.k, cfg.cluster_seed,
                                   cfg.cluster.per_country, cfg.cluster.n_init)
        agg = regions.aggregate_network(net, cm, cells, by_bus, None, weights)
        cluster_weight: dict[str, float] = {}
        for bus, w in sorted(weights.items()):
            cid = agg.busmap[bus]
            cluster_weight[cid] = cluster_weight.get(cid, 0.0) + w

        topology.write_network(agg.network, d / "network")
        regions.write_cells(d / "cells.geojson", agg.cells)
        regions.write_cells(d / "bus_cells.geojson", cells, cm)
        regions.write_clustermap(d / "clustermap.csv", cm)
        plants.write_capacity_table(d / "capacity.csv", agg.plants)
        with open(d / "weights.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bus_id", "country", "weight"])
            for cid in sorted(cluster_weight, key=lambda s: int(s[1:])):
                w.writerow([cid, agg.network.buses[cid].country, repr(cluster_weight[cid])])
        logger.info("clustered %d buses into %d (inertia %.6g)", len(net.buses), len(agg.network.buses), cm.inertia)

    def _read_weights(self):
        weights, country = {}, {}
        with open(self.stage_dir("cluster") / "weights.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                weights[r["bus_id"]] = float(r["weight"])
                country[r["bus_id"]] = r["country"]
        # re-normalize per country so float round-off in the cluster sums cannot trip the 1e-9 check
        totals: dict[str, float] = {}
        for b, w in weights.items():
            totals[country[b]] = totals.get(country[b], 0.0) + w
        return {b: w / totals[country[b]] for b, w in weights.items()}, country

    def _run_profiles(self, d: Path):
        cfg, pc = self.cfg, self.cfg.profiles
        weather = profiles.read_weather_csv(cfg.resolve(cfg.paths.weather))
        cells = regions.read_cells(self.stage_dir("cluster") / "cells.geojson")
        weights, country = self._read_weights()
        T = weather.hours
        shape_ = profiles.DemandShape(pc.weekday_factor, pc.weekend_factor, pc.seasonal_amplitude, pc.peak_day)
        hours = max(T, profiles.HOURS_PER_YEAR)
        full = profiles.synth_demand(pc.annual_twh, weights, country, shape_, hours, pc.start_weekday)
        demand = profiles.SeriesTable("demand_mw", full.regions, full.values[:, :T])
        profiles.write_series(d / "demand_mw.csv", demand)

        fallback = {}
        turbine = profiles.TurbineCurve(pc.cut_in, pc.rated, pc.cut_out)
        for kind, values in (
            ("cf_wind", profiles.wind_cf(weather, pc.hub_height_m, turbine)),
            ("cf_solar", profiles.solar_cf(weather, pc.solar_temp_coeff)),
        ):
            table, rep = profiles.regionalize(values, weather.lon, weather.lat, cells, kind, weather.cell_ids)
            profiles.write_series(d / f"{kind}.csv", table)
            fallback[kind] = rep.fallback

        capacity = plants.read_capacity_table(self.stage_dir("cluster") / "capacity.csv")
        runoff = weather.runoff if weather.runoff is not None else np.ones((len(weather.cell_ids), T))
        rtable, _ = profiles.regionalize(runoff, weather.lon, weather.lat, cells, "inflow_mw", weather.cell_ids)
        inflow = np.zeros_like(rtable.values)
        for i, bus in enumerate(rtable.regions):
            cap = capacity.get((bus, "hydro"), 0.0)
            if cap <= 0:
                continue
            energy = cap * cfg.plants.hydro_capacity_factor * T  # budget over the modelled window
            r = rtable.values[i]
            if r.sum() <= 0:
                logger.warning("region %s has hydro but zero runoff; using a flat inflow", bus)
                r = np.ones(T)
            inflow[i] = plants.hydro_inflow(r, energy)
        profiles.write_series(d / "inflow_mw.csv", profiles.SeriesTable("inflow_mw", rtable.regions, inflow))
        (d / "regionalize_report.json").write_text(json.dumps(fallback, sort_keys=True, indent=1) + "\n")

    def _rules(self) -> elig.ExclusionRuleSet:
        e = self.cfg.eligibility
        return elig.ExclusionRuleSet(frozenset(e.excluded_landcover_codes), e.protected_excluded,
                                     e.max_population_density, e.max_water_depth_m, e.buffer_km)

    def _run_eligibility(self, d: Path):
        cfg = self.cfg
        layers = {kind: elig.read_raster(cfg.resolve(path), kind) for kind, path in sorted(cfg.paths.rasters.items())}
        rules = self._rules()
        absent = [k for k in rules.layers_needed(False) if k not in layers]
        if absent:
            logger.warning("rules need raster layers %s that are not configured; affected cells count as ineligible", absent)
        cells = regions.read_cells(self.stage_dir("cluster") / "cells.geojson")
        rows = []
        for cell in sorted(cells, key=lambda c: c.bus_id):
            if not layers:
                raise ConfigError("eligibility needs at least one raster layer")
            res = elig.eligible_fraction(cell, layers, rules)
            for tech, density in sorted(cfg.eligibility.density_mw_per_km2.items()):
                rows.append((cell.bus_id, tech, res, elig.potential_mw(res.eligible_area_km2, density)))
        elig.write_potentials(d / "potentials.csv", rows)

    def technologies(self) -> dict[str, expansion.Technology]:
        techs = expansion.default_technologies()
        names = {f.name for f in fields(expansion.Technology)}
        for name, overrides in sorted(self.cfg.optimize.costs.items()):
            bad = sorted(set(overrides) - names)
            if bad:
                raise ConfigError(f"optimize.costs.{name}: unknown fields {bad}")
            overrides = {k: (math.inf if v in ("inf", None) and k == "max_potential_mw" else v) for k, v in overrides.items()}
            base = techs.get(name)
            techs[name] = replace(base, **overrides) if base else expansion.Technology(name=name, **overrides)
        return techs

    def _build_problem(self) -> expansion.ExpansionProblem:
        cfg, o = self.cfg, self.cfg.optimize
        net = topology.read_network(self.stage_dir("cluster") / "network")
        capacity = plants.read_capacity_table(self.stage_dir("cluster") / "capacity.csv")
        pdir = self.stage_dir("profiles")
        series = {kind: profiles.read_series(pdir / f"{kind}.csv", kind) for kind in profiles.KINDS}
        potentials = elig.read_potentials(self.stage_dir("eligibility") / "potentials.csv")
        techs = self.technologies()
        potentials = {k: v for k, v in potentials.items() if k[1] in techs}
        snaps = expansion.SnapshotSpec(o.snapshot_start, o.snapshot_count, o.snapshot_stride)
        return expansion.build_problem(net, capacity, series, potentials, techs, o.co2_cap, snaps, o.slack_penalty)

    def _run_optimize(self, d: Path, export_mps=None):
        o = self.cfg.optimize
        problem = self._build_problem()
        if export_mps is not None:
            Path(export_mps).write_text(expansion.export_mps(problem))
        logger.info("LP: %d rows x %d columns", problem.lp.num_rows, problem.lp.num_cols)
        sol = expansion.solve(problem, tol=o.tol, pricing=o.pricing)
        if sol.status != "optimal":
            logger.error("solver finished with status %s", sol.status)
        report.write_results(problem, sol, d)
        ver = expansion.verify_solution(problem, sol)
        (d / "verification.json").write_text(json.dumps(_finite(ver.as_dict()), sort_keys=True, indent=1) + "\n")
        logger.info("objective %.6g, unserved %.3g MWh, emissions %.6g t, gap %.2e",
                    sol.objective, sol.unserved_mwh, sol.emissions, ver.duality_gap)

    def _run_report(self, d: Path):
        net = topology.read_network(self.stage_dir("cluster") / "network")
        cells = regions.read_cells(self.stage_dir("cluster") / "cells.geojson")
        existing, built = {}, {}
        with open(self.stage_dir("optimize") / "capacities.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                existing[(r["bus"], r["tech"])] = float(r["existing_mw"])
                built[(r["bus"], r["tech"])] = float(r["built_mw"])
        rc = self.cfg.report
        svg = report.render_map(net, cells, built, existing, rc.width_px, rc.height_px, title="optimal capacity")
        (d / "map.svg").write_text(svg)
        full = topology.read_network(self.stage_dir("build") / "network")
        (d / "network.svg").write_text(report.render_map(full, [], None, None, rc.width_px, rc.height_px,
                                                         title="transmission network"))
        totals: dict[str, list[float]] = {}
        for (bus, tech) in sorted(set(existing) | set(built)):
            t = totals.setdefault(tech, [0.0, 0.0])
            t[0] += existing.get((bus, tech), 0.0)
            t[1] += built.get((bus, tech), 0.0)
        with open(d / "capacity_totals.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tech", "existing_mw", "built_mw"])
            for tech, (ex, bu) in sorted(totals.items()):
                w.writerow([tech, report._num(ex), report._num(bu)])


def _finite(obj):
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def run_stage(stage: str, cfg: PipelineConfig, force: bool = False, export_mps=None) -> StageResult:
    return Pipeline(cfg).run_stage(stage, force=force, export_mps=export_mps)
