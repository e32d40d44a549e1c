"""Slow, obviously-correct reference implementations used only by tests.

None of these import from meshparse except for plain data containers, so a
bug in the library cannot leak into its own oracle.
"""
from __future__ import annotations

from collections import deque

import numpy as np


def interleave_string(q: tuple[int, int, int], bits: int) -> str:
    """Bit string x1 y1 z1 x2 y2 z2 ... built by string concatenation."""
    xs, ys, zs = (format(int(c), f"0{bits}b") for c in q)
    return "".join(a + b + c for a, b, c in zip(xs, ys, zs))


def morton_sort_oracle(unit_points: np.ndarray, bits: int) -> np.ndarray:
    scale = (1 << bits) - 1
    q = [tuple(int(np.floor(c * scale + 0.5)) for c in p) for p in unit_points]
    keys = [interleave_string(t, bits) for t in q]
    return np.array(sorted(range(len(keys)), key=lambda i: (keys[i], i)), dtype=np.int64)


def fps_recompute(points: np.ndarray, k: int, seed: int = 0) -> list[int]:
    """Greedy FPS recomputing every min-distance from scratch at each step."""
    p = np.asarray(points, dtype=np.float64)
    chosen = [seed]
    while len(chosen) < k:
        best, best_i = -1.0, -1
        for i in range(len(p)):
            d = min(float(((p[i] - p[c]) ** 2).sum()) for c in chosen)
            if d > best:
                best, best_i = d, i
        chosen.append(best_i)
    return chosen


def fps_recompute_fast(points: np.ndarray, k: int, seed: int = 0) -> list[int]:
    """Same recompute-from-scratch definition, with the inner scan vectorized."""
    p = np.asarray(points, dtype=np.float64)
    chosen = [seed]
    while len(chosen) < k:
        d = ((p[:, None, :] - p[None, chosen, :]) ** 2).sum(axis=2).min(axis=1)
        chosen.append(int(np.argmax(d)))  # argmax returns the first maximum
    return chosen


def dbscan_reference(points: np.ndarray, eps: float, min_samples: int) -> np.ndarray:
    """Textbook DBSCAN with an O(N^2) distance matrix and BFS expansion."""
    p = np.asarray(points, dtype=np.float64)
    n = len(p)
    d2 = ((p[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
    neigh = [np.flatnonzero(row <= eps * eps) for row in d2]
    core = np.array([len(nb) >= min_samples for nb in neigh], dtype=bool)
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for s in range(n):
        if labels[s] != -1 or not core[s]:
            continue
        labels[s] = cluster
        queue = deque([s])
        while queue:
            q = queue.popleft()
            if not core[q]:
                continue
            for r in neigh[q]:
                if labels[r] == -1:
                    labels[r] = cluster
                    queue.append(r)
        cluster += 1
    return labels


def same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    """Equal up to a relabeling of clusters; noise (-1) must match exactly."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or not np.array_equal(a == -1, b == -1):
        return False
    fwd, back = {}, {}
    for x, y in zip(a.tolist(), b.tolist()):
        if fwd.setdefault(x, y) != y or back.setdefault(y, x) != x:
            return False
    return True


def raycast(eye: np.ndarray, dirs: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Nearest-hit triangle per ray (Moller-Trumbore), -1 on a miss.

    ``dirs`` has unit component along the view axis so the ray parameter is
    camera depth; equal depths resolve to the lower triangle index.
    """
    h, w, _ = dirs.shape
    d = dirs.reshape(-1, 3)
    best_t = np.full(len(d), np.inf)
    best = np.full(len(d), -1, dtype=np.int64)
    for t_idx, (a, b, c) in enumerate(tris):
        e1, e2 = b - a, c - a
        pv = np.cross(d, e2)
        det = pv @ e1
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = eye - a
        u = (pv @ s) * inv
        qv = np.cross(s, e1)
        v = (d @ qv) * inv
        t = (qv @ e2) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        closer = hit & (t < best_t)
        best_t[closer] = t[closer]
        best[closer] = t_idx
    return best.reshape(h, w)


def confusion_by_pairs(gt, pred, n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=np.int64)
    for g, p in zip(gt, pred):
        m[g][p] += 1
    return m


def random_triangle_scene(rng: np.random.Generator, n: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """``n`` independent triangles scattered in [-1, 1]^3 as (vertices, faces)."""
    centers = rng.uniform(-0.8, 0.8, size=(n, 1, 3))
    verts = (centers + rng.normal(scale=0.4, size=(n, 3, 3))).reshape(-1, 3)
    return verts, np.arange(3 * n).reshape(n, 3)
