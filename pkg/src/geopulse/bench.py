"""Timing of the numba kernels against their numpy fallbacks."""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from ._accel import HAVE_NUMBA


def _best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def blob_points(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Half the points in 20 tight blobs, half uniform, over ~10 km."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-0.04, 0.04, (20, 2))
    m = n // 2
    pick = rng.integers(0, 20, m)
    blob = centers[pick] + rng.normal(0.0, 0.0008, (m, 2))
    uni = rng.uniform(-0.05, 0.05, (n - m, 2))
    pts = np.vstack([blob, uni])
    return 40.75 + pts[:, 0], -73.98 + pts[:, 1]


def kernel_timings(sizes=(2_000, 20_000), seed: int = 0, repeat: int = 3) -> list[str]:
    """One line per (kernel, size): numpy time, numba time, speed-up.

    Each numba kernel is called once before timing so compilation (or the
    cache load) is not counted.
    """
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    lines = []
    for n in sizes:
        lat, lon = blob_points(n, seed)
        grid = kernels.Grid(lat, lon, 60.0)
        cases = {
            "dbscan": lambda b: kernels.dbscan_labels(grid, 5, backend=b),
            "mean_min": lambda b: kernels.mean_min_distance(lat[: n // 4], lon[: n // 4], lat[n // 2:],
                                                            lon[n // 2:], backend=b),
        }
        if n <= 5_000:
            cases["kth_dist"] = lambda b: kernels.kth_distances(lat, lon, 4, backend=b)
        for name, fn in cases.items():
            times = {}
            for b in backends:
                fn(b)
                times[b] = _best_of(lambda: fn(b), repeat)
            line = f"{name:9s} n={n:<7d} numpy {times['numpy'] * 1e3:9.2f} ms"
            if "numba" in times:
                line += f"  numba {times['numba'] * 1e3:9.2f} ms  x{times['numpy'] / times['numba']:.1f}"
            lines.append(line)
    return lines
