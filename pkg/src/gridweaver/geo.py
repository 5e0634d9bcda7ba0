"""Small geodesy helpers shared by the modules."""
from __future__ import annotations

import numpy as np
from shapely import affinity
from shapely.geometry.base import BaseGeometry

EARTH_RADIUS_KM = 6371.0


def haversine_km(lon1, lat1, lon2, lat2):
    """Great-circle distance in km; accepts scalars or numpy arrays."""
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    a = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


class LocalProjection:
    """Equirectangular projection to km about a reference point.

    ``x = R * (lon - lon0) * cos(lat0)``, ``y = R * (lat - lat0)`` with angles in
    radians. The projection is affine, so shapely geometries transform exactly
    in both directions.
    """

    def __init__(self, lon0: float, lat0: float):
        self.lon0 = float(lon0)
        self.lat0 = float(lat0)
        self.kx = EARTH_RADIUS_KM * np.cos(np.radians(self.lat0)) * np.pi / 180.0
        self.ky = EARTH_RADIUS_KM * np.pi / 180.0

    @classmethod
    def about(cls, geom: BaseGeometry) -> "LocalProjection":
        c = geom.centroid
        return cls(c.x, c.y)

    def forward(self, lon, lat):
        return (np.asarray(lon) - self.lon0) * self.kx, (np.asarray(lat) - self.lat0) * self.ky

    def inverse(self, x, y):
        return np.asarray(x) / self.kx + self.lon0, np.asarray(y) / self.ky + self.lat0

    def project(self, geom: BaseGeometry) -> BaseGeometry:
        # x' = kx*x - kx*lon0, y' = ky*y - ky*lat0
        return affinity.affine_transform(geom, [self.kx, 0, 0, self.ky, -self.kx * self.lon0, -self.ky * self.lat0])

    def unproject(self, geom: BaseGeometry) -> BaseGeometry:
        return affinity.affine_transform(geom, [1 / self.kx, 0, 0, 1 / self.ky, self.lon0, self.lat0])

    def describe(self) -> str:
        return f"equirectangular lon0={self.lon0:.6f} lat0={self.lat0:.6f} R={EARTH_RADIUS_KM}"
