"""Vectorised numpy fallbacks for the compiled kernels."""

import math

import numpy as np

EARTH_RADIUS_M = 6371000.0
_DEG = math.pi / 180.0
_CHUNK = 1024


def hav(lat1, lon1, lat2, lon2):
    p1 = np.asarray(lat1) * _DEG
    p2 = np.asarray(lat2) * _DEG
    s1 = np.sin((p2 - p1) * 0.5)
    s2 = np.sin((np.asarray(lon2) - np.asarray(lon1)) * _DEG * 0.5)
    a = s1 * s1 + np.cos(p1) * np.cos(p2) * s2 * s2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(a, 1.0)))


def haversine_to(lat, lon, lat0, lon0):
    return hav(lat, lon, lat0, lon0)


def neighbor_lists(lat, lon, eps, key, order, skey, width):
    """Exact eps-neighbourhood of every point, computed cell block by cell block."""
    n = lat.shape[0]
    out = [None] * n
    cells, starts = np.unique(skey, return_index=True)
    ends = np.append(starts[1:], n)
    span = {int(c): (int(s), int(e)) for c, s, e in zip(cells, starts, ends)}
    for c, s, e in zip(cells, starts, ends):
        members = order[s:e]
        cand = []
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                hit = span.get(int(c) + dy * width + dx)
                if hit is not None:
                    cand.append(order[hit[0]:hit[1]])
        cand = np.concatenate(cand)
        d = hav(lat[members][:, None], lon[members][:, None], lat[cand][None, :], lon[cand][None, :])
        within = d <= eps
        for row, i in enumerate(members):
            out[i] = cand[within[row]]
    return out


def dbscan_labels(lat, lon, eps, min_points, key, order, skey, width):
    n = lat.shape[0]
    nbrs = neighbor_lists(lat, lon, eps, key, order, skey, width)
    core = np.array([len(x) >= min_points for x in nbrs], dtype=bool)
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        queue = [i]
        head = 0
        while head < len(queue):
            q = queue[head]
            head += 1
            for r in nbrs[q]:
                if labels[r] == -1:
                    labels[r] = cluster
                    if core[r]:
                        queue.append(r)
        cluster += 1
    return labels, core


def mean_min_distance(clat, clon, plat, plon):
    mins = np.empty(clat.shape[0])
    for s in range(0, clat.shape[0], _CHUNK):
        d = hav(clat[s:s + _CHUNK, None], clon[s:s + _CHUNK, None], plat[None, :], plon[None, :])
        mins[s:s + _CHUNK] = d.min(axis=1)
    # cumsum is a strict left-to-right sum, matching the compiled loop
    return float(np.cumsum(mins)[-1] / clat.shape[0])


def kth_distances(lat, lon, k):
    out = np.empty(lat.shape[0])
    for s in range(0, lat.shape[0], _CHUNK):
        d = hav(lat[s:s + _CHUNK, None], lon[s:s + _CHUNK, None], lat[None, :], lon[None, :])
        out[s:s + _CHUNK] = np.partition(d, k - 1, axis=1)[:, k - 1]
    return out
