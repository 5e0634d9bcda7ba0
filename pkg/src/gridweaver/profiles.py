"""Hourly demand and wind/solar capacity-factor series per region."""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from gridweaver.errors import ConfigError, GridweaverError, ParseError
from gridweaver.regions import RegionCell, locate_points, nearest_cell

logger = logging.getLogger(__name__)

KINDS = ("demand_mw", "cf_wind", "cf_solar", "inflow_mw")
HOURS_PER_YEAR = 8760


@dataclass
class WeatherGrid:
    cell_ids: list[str]
    lon: np.ndarray
    lat: np.ndarray
    wind_ms: np.ndarray  # cells x hours, 10 m wind speed
    ghi_wm2: np.ndarray
    temp_c: np.ndarray
    runoff: np.ndarray | None = None

    def __post_init__(self):
        self.lon = np.asarray(self.lon, dtype=float)
        self.lat = np.asarray(self.lat, dtype=float)
        shp = np.shape(self.wind_ms)
        for name in ("wind_ms", "ghi_wm2", "temp_c") + (("runoff",) if self.runoff is not None else ()):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shp:
                raise GridweaverError(f"weather field {name} has shape {arr.shape}, expected {shp}")
            setattr(self, name, arr)
        if len(self.cell_ids) != shp[0] or self.lon.shape != (shp[0],):
            raise GridweaverError("weather cell metadata inconsistent with series")
        if np.any(self.wind_ms < 0) or np.any(self.ghi_wm2 < 0):
            raise GridweaverError("wind speed and irradiance must be non-negative")

    @property
    def hours(self) -> int:
        return self.wind_ms.shape[1]


def read_weather_csv(path) -> WeatherGrid:
    """Long-format weather table: cell_id,lon,lat,hour,wind_ms,ghi_wm2,temp_c[,runoff]."""
    rows = defaultdict(dict)
    meta = {}
    has_runoff = False
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"cell_id", "lon", "lat", "hour", "wind_ms", "ghi_wm2", "temp_c"}
        missing = needed - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"weather table lacks columns {sorted(missing)}")
        has_runoff = "runoff" in (reader.fieldnames or [])
        for lineno, r in enumerate(reader, start=2):
            try:
                cid = r["cell_id"]
                meta.setdefault(cid, (float(r["lon"]), float(r["lat"])))
                vals = (float(r["wind_ms"]), float(r["ghi_wm2"]), float(r["temp_c"]),
                        float(r["runoff"]) if has_runoff and r["runoff"] != "" else 0.0)
                rows[cid][int(r["hour"])] = vals
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad weather record: {exc}", line=lineno) from exc
    if not rows:
        raise GridweaverError("weather table is empty")
    ids = list(rows)
    hours = sorted(rows[ids[0]])
    if hours != list(range(len(hours))):
        raise ParseError("weather hours must be 0..T-1 without gaps")
    data = np.empty((4, len(ids), len(hours)))
    for c, cid in enumerate(ids):
        if sorted(rows[cid]) != hours:
            raise ParseError(f"weather cell {cid} does not cover all hours")
        for h in hours:
            data[:, c, h] = rows[cid][h]
    return WeatherGrid(
        cell_ids=ids,
        lon=np.array([meta[c][0] for c in ids]),
        lat=np.array([meta[c][1] for c in ids]),
        wind_ms=data[0], ghi_wm2=data[1], temp_c=data[2],
        runoff=data[3] if has_runoff else None,
    )


@dataclass
class SeriesTable:
    kind: str
    regions: list[str]
    values: np.ndarray  # regions x hours

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.kind not in KINDS:
            raise GridweaverError(f"unknown series kind {self.kind!r}")
        if self.values.shape[0] != len(self.regions):
            raise GridweaverError("series rows do not match regions")
        if self.kind.startswith("cf_") and (np.any(self.values < 0) or np.any(self.values > 1)):
            raise GridweaverError("capacity factors must lie in [0, 1]")
        if self.kind == "demand_mw" and np.any(self.values < 0):
            raise GridweaverError("demand must be non-negative")

    @property
    def hours(self) -> int:
        return self.values.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {r: self.values[i] for i, r in enumerate(self.regions)}

    def row(self, region) -> np.ndarray:
        return self.values[self.regions.index(region)]


def write_series(path, table: SeriesTable):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour"] + list(table.regions))
        for h in range(table.hours):
            w.writerow([h] + [repr(float(v)) for v in table.values[:, h]])


def read_series(path, kind) -> SeriesTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "hour":
            raise ParseError(f"{path}: first column must be 'hour'")
        data = [[float(v) for v in row[1:]] for row in reader]
    values = np.array(data, dtype=float).T if data else np.zeros((len(header) - 1, 0))
    return SeriesTable(kind, header[1:], values)


# -- demand ---------------------------------------------------------------------------


@dataclass
class DemandShape:
    weekday_factor: Sequence[float] = field(default_factory=lambda: [1.0] * 24)
    weekend_factor: Sequence[float] = field(default_factory=lambda: [1.0] * 24)
    seasonal_amplitude: float = 0.0
    peak_day: int = 0

    def __post_init__(self):
        if len(self.weekday_factor) != 24 or len(self.weekend_factor) != 24:
            raise ConfigError("diurnal factors need 24 values each")
        if min(self.weekday_factor) <= 0 or min(self.weekend_factor) <= 0:
            raise ConfigError("diurnal factors must be positive")
        if not 0.0 <= self.seasonal_amplitude < 1.0:
            raise ConfigError("seasonal amplitude must lie in [0, 1)")

    def values(self, hours: int, start_weekday: int = 0) -> np.ndarray:
        t = np.arange(hours)
        day = t // 24
        weekend = (start_weekday + day) % 7 >= 5
        diurnal = np.where(weekend, np.asarray(self.weekend_factor)[t % 24], np.asarray(self.weekday_factor)[t % 24])
        season = 1.0 + self.seasonal_amplitude * np.cos(2.0 * np.pi * (day - self.peak_day) / 365.0)
        return diurnal * season


def synth_demand(
    annual_twh: Mapping[str, float],
    region_weights: Mapping[str, float],
    region_country: Mapping[str, str],
    shape: DemandShape | None = None,
    hours: int = HOURS_PER_YEAR,
    start_weekday: int = 0,
) -> SeriesTable:
    """Scale a normalized load shape to each region's share of its country's energy.

    Weekdays are numbered from Monday = 0; days 5 and 6 use the weekend factors.
    """
    shape = shape or DemandShape()
    by_country: dict[str, float] = defaultdict(float)
    for r, w in region_weights.items():
        if w < 0:
            raise ConfigError(f"negative demand weight for region {r}")
        by_country[region_country[r]] += w
    for c, total in by_country.items():
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"demand weights of country {c} sum to {total!r}, expected 1")
        if c not in annual_twh:
            raise ConfigError(f"no annual demand given for country {c}")
    s = shape.values(hours, start_weekday)
    norm = s / s.sum()
    regions = sorted(region_weights)
    values = np.array([annual_twh[region_country[r]] * 1e6 * region_weights[r] * norm for r in regions])
    return SeriesTable("demand_mw", regions, values.reshape(len(regions), hours))


# -- renewables -------------------------------------------------------------------------


@dataclass(frozen=True)
class TurbineCurve:
    cut_in: float = 3.0
    rated: float = 12.0
    cut_out: float = 25.0

    def __post_init__(self):
        if not 0 < self.cut_in < self.rated < self.cut_out:
            raise ConfigError("turbine curve needs 0 < cut_in < rated < cut_out")


def wind_power_curve(v_hub, turbine: TurbineCurve) -> np.ndarray:
    v = np.asarray(v_hub, dtype=float)
    ramp = (v**3 - turbine.cut_in**3) / (turbine.rated**3 - turbine.cut_in**3)
    cf = np.where(v <= turbine.cut_in, 0.0, np.where(v < turbine.rated, ramp, 1.0))
    return np.where(v > turbine.cut_out, 0.0, cf)


def hub_speed(v10, hub_height_m: float) -> np.ndarray:
    """1/7 power-law shear from 10 m to hub height."""
    return np.asarray(v10, dtype=float) * (hub_height_m / 10.0) ** (1.0 / 7.0)


def wind_cf(weather: WeatherGrid, hub_height_m: float = 100.0, turbine: TurbineCurve | None = None) -> np.ndarray:
    """Capacity factor per weather cell and hour (cells x hours)."""
    turbine = turbine or TurbineCurve()
    return wind_power_curve(hub_speed(weather.wind_ms, hub_height_m), turbine)


def solar_cf_values(ghi, temp_c, temp_coeff: float = -0.004) -> np.ndarray:
    ghi = np.asarray(ghi, dtype=float)
    temp_c = np.asarray(temp_c, dtype=float)
    return np.clip(ghi / 1000.0 * (1.0 + temp_coeff * (temp_c - 25.0)), 0.0, 1.0)


def solar_cf(weather: WeatherGrid, temp_coeff: float = -0.004) -> np.ndarray:
    return solar_cf_values(weather.ghi_wm2, weather.temp_c, temp_coeff)


@dataclass
class RegionalizeReport:
    fallback: dict[str, str] = field(default_factory=dict)  # region -> weather cell used


def regionalize(
    series: np.ndarray,
    weather_lon,
    weather_lat,
    cells: Sequence[RegionCell],
    kind: str,
    weather_ids: Sequence[str] | None = None,
) -> tuple[SeriesTable, RegionalizeReport]:
    """Unweighted mean of the weather-cell series inside each region."""
    series = np.atleast_2d(np.asarray(series, dtype=float))
    if series.shape[0] == 0:
        raise GridweaverError("weather grid is empty")
    hits = locate_points(weather_lon, weather_lat, cells)
    members: dict[int, list[int]] = defaultdict(list)
    for w, h in enumerate(hits):
        if h:
            members[min(h, key=lambda k: cells[k].bus_id)].append(w)
    report = RegionalizeReport()
    wlon = np.asarray(weather_lon, dtype=float)
    wlat = np.asarray(weather_lat, dtype=float)
    order = sorted(range(len(cells)), key=lambda k: cells[k].bus_id)
    out = np.empty((len(order), series.shape[1]))
    for row, k in enumerate(order):
        cell = cells[k]
        if members.get(k):
            out[row] = series[members[k]].mean(axis=0)
            continue
        if cell.polygon.is_empty:
            rep = (float("nan"), float("nan"))
            w = 0
        else:
            rep = cell.polygon.representative_point().coords[0]
            d = (wlon - rep[0]) ** 2 + ((wlat - rep[1])) ** 2
            w = int(np.argmin(d))
        out[row] = series[w]
        label = weather_ids[w] if weather_ids is not None else str(w)
        report.fallback[cell.bus_id] = label
        logger.warning("region %s contains no weather cell; using nearest cell %s", cell.bus_id, label)
    return SeriesTable(kind, [cells[k].bus_id for k in order], out), report
