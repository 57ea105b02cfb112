"""Kernel dispatch plus the spatial grid shared by both implementations.

``impl`` is the active backend module. Callers go through the wrappers
below so that arrays are coerced to contiguous float64 once.
"""

import math

import numpy as np

from . import _kernels_numpy
from ._accel import USE_NUMBA

if USE_NUMBA:
    from . import _kernels_numba as impl
else:
    impl = _kernels_numpy

EARTH_RADIUS_M = 6371000.0
BACKEND = "numba" if USE_NUMBA else "numpy"

# widen cells a hair so rounding in the degree conversion never shrinks them
_CELL_SLACK = 1.0 + 1e-9


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def cell_size(lat, eps):
    """Cell edge (degrees lat, degrees lon) guaranteeing every point within
    ``eps`` metres lies in the surrounding 3x3 block.

    Along a meridian, distance >= R * dlat. For longitude,
    hav(d/R) >= cos^2(phi_max) hav(dlon), hence
    dlon <= 2 asin(sin(d / 2R) / cos(phi_max)). ``None`` for the longitude
    edge means a single column (poles, huge eps, or antimeridian proximity).
    """
    cell_lat = math.degrees(eps / EARTH_RADIUS_M) * _CELL_SLACK
    if lat.size == 0:
        return cell_lat, None
    cos_max = math.cos(math.radians(min(90.0, float(np.max(np.abs(lat))))))
    if cos_max <= 0.0:
        return cell_lat, None
    s = math.sin(eps / (2.0 * EARTH_RADIUS_M)) / cos_max
    if s >= 1.0:
        return cell_lat, None
    return cell_lat, math.degrees(2.0 * math.asin(s)) * _CELL_SLACK


class Grid:
    """Immutable uniform grid over (lat, lon) with cells at least ``eps`` wide."""

    def __init__(self, lat, lon, eps):
        self.lat = _f64(lat)
        self.lon = _f64(lon)
        self.eps = float(eps)
        self.cell_lat, cell_lon = cell_size(self.lat, self.eps)
        n = self.lat.shape[0]
        if cell_lon is not None and n and np.max(np.abs(self.lon)) + cell_lon >= 180.0:
            cell_lon = None
        self.cell_lon = cell_lon
        self._cy0 = self._cx0 = 0
        if n == 0:
            self.key = np.empty(0, dtype=np.int64)
            self.width = 3
        else:
            cy = np.floor(self.lat / self.cell_lat).astype(np.int64)
            if cell_lon is None:
                cx = np.zeros(n, dtype=np.int64)
            else:
                cx = np.floor(self.lon / cell_lon).astype(np.int64)
            self._cy0 = int(cy.min())
            self._cx0 = int(cx.min())
            ry = cy - self._cy0 + 1
            rx = cx - self._cx0 + 1
            self.width = int(rx.max()) + 2
            self.key = ry * self.width + rx
        self.order = np.argsort(self.key, kind="stable").astype(np.int64)
        self.skey = self.key[self.order]

    def __len__(self):
        return self.lat.shape[0]

    def _locate(self, lat, lon):
        # key of an arbitrary query point, relative to this grid's origin
        cy = int(math.floor(lat / self.cell_lat)) - self._cy0 + 1
        if self.cell_lon is None:
            return cy, 1
        return cy, int(math.floor(lon / self.cell_lon)) - self._cx0 + 1

    def candidates(self, lat, lon):
        """Indices of all points in the 3x3 cell block around (lat, lon), ascending."""
        if len(self) == 0:
            return np.empty(0, dtype=np.int64)
        cy, cx = self._locate(lat, lon)
        found = []
        for dy in (-1, 0, 1):
            y = cy + dy
            for dx in (-1, 0, 1):
                x = cx + dx
                if x < 0 or x >= self.width:
                    continue
                k = y * self.width + x
                lo = np.searchsorted(self.skey, k, side="left")
                hi = np.searchsorted(self.skey, k, side="right")
                found.append(self.order[lo:hi])
        return np.sort(np.concatenate(found)) if found else np.empty(0, dtype=np.int64)

    def neighbors(self, lat, lon):
        """Exact eps-neighbourhood of (lat, lon) among the indexed points."""
        cand = self.candidates(lat, lon)
        d = _kernels_numpy.hav(self.lat[cand], self.lon[cand], lat, lon)
        return cand[d <= self.eps]


def haversine_to(lat, lon, lat0, lon0):
    return impl.haversine_to(_f64(lat), _f64(lon), float(lat0), float(lon0))


def dbscan_labels(grid, min_points, backend=None):
    mod = _backend(backend)
    return mod.dbscan_labels(grid.lat, grid.lon, grid.eps, int(min_points),
                             grid.key, grid.order, grid.skey, int(grid.width))


def mean_min_distance(clat, clon, plat, plon, backend=None):
    return float(_backend(backend).mean_min_distance(_f64(clat), _f64(clon), _f64(plat), _f64(plon)))


def kth_distances(lat, lon, k, backend=None):
    return _backend(backend).kth_distances(_f64(lat), _f64(lon), int(k))


def _backend(name):
    if name is None:
        return impl
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba
        return _kernels_numba
    raise ValueError(f"unknown backend {name!r}")
