"""Farthest point sampling, exact and windowed over a Morton partition."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import workers
from .model import ContractError
from .serialize import WindowPartition


def fps_exact(points, k: int, seed_index: int = 0) -> np.ndarray:
    """Greedy max-min farthest point sampling.

    Starts at ``seed_index`` and repeatedly adds the point whose squared
    distance to the selected set is largest; ties go to the lowest index.
    O(kN) time, O(N) memory.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(p)
    if k > n:
        raise ContractError(f"cannot sample {k} points from {n}")
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if not 0 <= seed_index < n:
        raise ContractError(f"seed_index {seed_index} out of range for {n} points")
    x, y, z = (np.ascontiguousarray(p[:, i]) for i in range(3))
    best = np.full(n, np.inf)
    tmp = np.empty(n)
    dist = np.empty(n)
    out = np.empty(k, dtype=np.int64)
    i = int(seed_index)
    for s in range(k):
        out[s] = i
        np.subtract(x, x[i], out=tmp)
        np.multiply(tmp, tmp, out=dist)
        np.subtract(y, y[i], out=tmp)
        tmp *= tmp
        dist += tmp
        np.subtract(z, z[i], out=tmp)
        tmp *= tmp
        dist += tmp
        np.minimum(best, dist, out=best)
        i = int(np.argmax(best))
    return out


@dataclass(frozen=True)
class SamplePlan:
    total_samples: int
    per_window_quota: tuple[int, ...]
    oversample_weights: dict[int, float] = field(default_factory=dict)


def _cap_and_redistribute(quota: np.ndarray, population: np.ndarray) -> np.ndarray:
    quota = quota.copy()
    n_win = len(quota)
    for w in range(n_win):
        excess = quota[w] - population[w]
        if excess <= 0:
            continue
        quota[w] = population[w]
        j = (w + 1) % n_win
        while excess > 0:
            if quota[j] < population[j]:
                quota[j] += 1
                excess -= 1
            j = (j + 1) % n_win
    return quota


def build_plan(part: WindowPartition, k: int, labels=None, weights: dict[int, float] | None = None) -> SamplePlan:
    """Split ``k`` samples across the windows of ``part``.

    Unweighted: ``k // W`` each, one extra for the first ``k % W`` windows.
    Weighted: quotas proportional to the summed per-point label weights in
    each window (largest-remainder rounding). Either way a window never gets
    more than its real population; the overflow moves round-robin to the
    following windows.
    """
    population = part.populations()
    n = int(population.sum())
    if k > n:
        raise ContractError(f"cannot sample {k} points from {n}")
    if k < 0:
        raise ContractError("k must be non-negative")
    if weights and labels is None:
        raise ContractError("oversampling weights need per-point labels")
    weights = {int(a): float(b) for a, b in (weights or {}).items()}
    if any(w <= 0 for w in weights.values()):
        raise ContractError("oversampling weights must be positive")

    n_win = part.n_windows
    mass = None
    if weights:
        labels = np.asarray(labels, dtype=np.int64)
        if len(labels) != n:
            raise ContractError(f"{len(labels)} labels for {n} points")
        lut = np.ones(int(max(labels.max(initial=0), max(weights)) + 1))
        for lab, wt in weights.items():
            lut[lab] = wt
        point_mass = lut[labels]
        # equal weights everywhere are neutral
        if np.ptp(point_mass) > 0:
            mass = np.array([point_mass[part.window_indices(w)].sum() for w in range(n_win)])

    if mass is None:
        quota = np.full(n_win, k // n_win, dtype=np.int64)
        quota[: k % n_win] += 1
    else:
        ideal = k * mass / mass.sum()
        quota = np.floor(ideal).astype(np.int64)
        short = k - int(quota.sum())
        frac = ideal - quota
        # largest remainder, ties to the lower window
        for w in np.lexsort((np.arange(n_win), -frac))[:short]:
            quota[w] += 1
    quota = _cap_and_redistribute(quota, population)
    return SamplePlan(int(k), tuple(int(q) for q in quota), weights)


def _fps_in_window(points: np.ndarray, members: np.ndarray, quota: int) -> np.ndarray:
    if quota == 0:
        return np.empty(0, dtype=np.int64)
    # ascending original indices, so seeding and ties match fps_exact
    sorted_members = np.sort(members)
    return sorted_members[fps_exact(points[sorted_members], quota, 0)]


def fps_windowed(points, part: WindowPartition, plan: SamplePlan) -> np.ndarray:
    """Independent FPS inside every Morton window, concatenated in window order.

    Each window is seeded at its lowest original index, so a single
    window reproduces ``fps_exact(points, k, seed_index=0)``.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    population = part.populations()
    if len(plan.per_window_quota) != part.n_windows:
        raise ContractError("plan and partition disagree on the number of windows")
    if any(q > pop for q, pop in zip(plan.per_window_quota, population)):
        raise ContractError("a window quota exceeds its population")
    jobs = [(part.window_indices(w), q) for w, q in enumerate(plan.per_window_quota)]
    n_threads = workers.get_threads()
    if n_threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            chunks = list(pool.map(lambda j: _fps_in_window(p, *j), jobs))
    else:
        chunks = [_fps_in_window(p, *j) for j in jobs]
    return np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)


def covering_radius(points, selected) -> float:
    """Largest distance from any point to its nearest selected sample."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    s = p[np.asarray(selected, dtype=np.int64)]
    if len(s) == 0:
        return float("inf")
    d, _ = cKDTree(s).query(p)
    return float(d.max())
