"""Timing harness comparing exact and windowed farthest point sampling."""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np

from .model import ContractError
from .sample import build_plan, covering_radius, fps_exact, fps_windowed
from .serialize import DEFAULT_WINDOW_SIZE, partition


@dataclass(frozen=True)
class BenchRow:
    method: str
    n: int
    k: int
    window_size: int
    wall_time: float
    covering_radius: float


def _median_time(fn, trials: int):
    times, out = [], None
    for _ in range(trials):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def bench_fps(n: int, k: int, window_size: int = DEFAULT_WINDOW_SIZE, trials: int = 3,
              seed: int = 0) -> list[BenchRow]:
    """Median wall time and covering radius of both samplers on one uniform cloud.

    The windowed timing includes Morton partitioning and plan construction.
    """
    if k > n:
        raise ContractError(f"k={k} exceeds n={n}")
    if trials < 1:
        raise ContractError("trials must be >= 1")
    points = np.random.default_rng(seed).random((n, 3))

    def windowed():
        part = partition(points, window_size)
        return fps_windowed(points, part, build_plan(part, k))

    t_exact, exact = _median_time(lambda: fps_exact(points, k), trials)
    t_win, win = _median_time(windowed, trials)
    return [
        BenchRow("exact", n, k, window_size, t_exact, covering_radius(points, exact)),
        BenchRow("windowed", n, k, window_size, t_win, covering_radius(points, win)),
    ]


def speedup(rows: list[BenchRow]) -> float:
    by = {r.method: r.wall_time for r in rows}
    return by["exact"] / by["windowed"]


def write_csv(rows: list[BenchRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(BenchRow.__dataclass_fields__))
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
