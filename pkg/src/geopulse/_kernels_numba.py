"""Compiled kernels. Loop-style code; every function mirrors one in
``_kernels_numpy`` and must return identical results."""

import math

import numpy as np

from ._accel import njit

EARTH_RADIUS_M = 6371000.0
_DEG = math.pi / 180.0


@njit(cache=True)
def hav(lat1, lon1, lat2, lon2):
    p1 = lat1 * _DEG
    p2 = lat2 * _DEG
    s1 = math.sin((p2 - p1) * 0.5)
    s2 = math.sin((lon2 - lon1) * _DEG * 0.5)
    a = s1 * s1 + math.cos(p1) * math.cos(p2) * s2 * s2
    if a > 1.0:
        a = 1.0
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


@njit(cache=True)
def haversine_to(lat, lon, lat0, lon0):
    out = np.empty(lat.shape[0])
    for i in range(lat.shape[0]):
        out[i] = hav(lat[i], lon[i], lat0, lon0)
    return out


@njit(cache=True)
def _query(i, lat, lon, eps, key, order, skey, width, out):
    # 3x3 cell block around point i; rows of three cells are contiguous keys
    m = 0
    for dy in range(-1, 2):
        base = key[i] + dy * width
        lo = np.searchsorted(skey, base - 1)
        hi = np.searchsorted(skey, base + 1, side="right")
        for p in range(lo, hi):
            j = order[p]
            if hav(lat[i], lon[i], lat[j], lon[j]) <= eps:
                out[m] = j
                m += 1
    return m


@njit(cache=True)
def dbscan_labels(lat, lon, eps, min_points, key, order, skey, width):
    n = lat.shape[0]
    buf = np.empty(n, dtype=np.int64)
    core = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        core[i] = _query(i, lat, lon, eps, key, order, skey, width, buf) >= min_points

    labels = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        head = 0
        tail = 1
        queue[0] = i
        while head < tail:
            q = queue[head]
            head += 1
            m = _query(q, lat, lon, eps, key, order, skey, width, buf)
            for t in range(m):
                r = buf[t]
                if labels[r] == -1:
                    labels[r] = cluster
                    if core[r]:
                        queue[tail] = r
                        tail += 1
        cluster += 1
    return labels, core


@njit(cache=True)
def mean_min_distance(clat, clon, plat, plon):
    total = 0.0
    for i in range(clat.shape[0]):
        best = np.inf
        for j in range(plat.shape[0]):
            d = hav(clat[i], clon[i], plat[j], plon[j])
            if d < best:
                best = d
        total += best
    return total / clat.shape[0]


@njit(cache=True)
def kth_distances(lat, lon, k):
    # distance to the k-th closest point, the point itself counted first
    n = lat.shape[0]
    out = np.empty(n)
    buf = np.empty(n)
    for i in range(n):
        for j in range(n):
            buf[j] = hav(lat[i], lon[i], lat[j], lon[j])
        out[i] = np.partition(buf, k - 1)[k - 1]
    return out
