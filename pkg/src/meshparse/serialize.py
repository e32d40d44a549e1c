"""Min-max normalization, Morton (z-order) codes and window partitioning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ContractError

DEFAULT_WINDOW_SIZE = 5000
DEFAULT_BITS = 16
MAX_BITS = 21


def normalize_unit_cube(points) -> np.ndarray:
    """Per-axis min-max normalization into [0, 1]^3. Zero-extent axes map to 0."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ContractError("cannot normalize an empty point set")
    lo = p.min(axis=0)
    extent = p.max(axis=0) - lo
    safe = np.where(extent > 0, extent, 1.0)
    out = (p - lo) / safe
    out[:, extent == 0] = 0.0
    # guard the upper endpoint against rounding
    np.clip(out, 0.0, 1.0, out=out)
    return out


def _check_bits(bits: int) -> int:
    bits = int(bits)
    if not 1 <= bits <= MAX_BITS:
        raise ContractError(f"bits_per_axis must be in [1, {MAX_BITS}], got {bits}")
    return bits


def quantize(unit_points, bits: int) -> np.ndarray:
    """Round [0, 1] coordinates to integers in [0, 2^bits - 1]."""
    bits = _check_bits(bits)
    u = np.asarray(unit_points, dtype=np.float64)
    if u.size and (np.isnan(u).any() or u.min() < 0.0 or u.max() > 1.0):
        raise ContractError("coordinates must lie in [0, 1]")
    scale = float((1 << bits) - 1)
    return np.floor(u * scale + 0.5).astype(np.uint64)


def _spread3(q: np.ndarray, bits: int) -> np.ndarray:
    # place bit i of q at bit 3*i of the result
    out = np.zeros_like(q)
    one = np.uint64(1)
    for i in range(bits):
        out |= ((q >> np.uint64(i)) & one) << np.uint64(3 * i)
    return out


def morton_codes(unit_points, bits: int = DEFAULT_BITS) -> np.ndarray:
    """Vectorized Morton codes, x most significant within each bit triple."""
    q = quantize(np.asarray(unit_points, dtype=np.float64).reshape(-1, 3), bits)
    two, one = np.uint64(2), np.uint64(1)
    return (_spread3(q[:, 0], bits) << two) | (_spread3(q[:, 1], bits) << one) | _spread3(q[:, 2], bits)


def morton_encode(p, bits_per_axis: int = DEFAULT_BITS) -> int:
    """Morton code of a single point in [0, 1]^3.

    >>> morton_encode((1.0, 0.0, 0.0), 2)
    36
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise ContractError(f"expected a 3D position, got shape {p.shape}")
    return int(morton_codes(p[None, :], bits_per_axis)[0])


def morton_decode(code: int, bits_per_axis: int = DEFAULT_BITS) -> tuple[int, int, int]:
    """Quantized (x, y, z) integers from a code."""
    bits = _check_bits(bits_per_axis)
    xyz = [0, 0, 0]
    for i in range(bits):
        for axis in range(3):
            if code >> (3 * i + 2 - axis) & 1:
                xyz[axis] |= 1 << i
    return tuple(xyz)


@dataclass(frozen=True, eq=False)
class WindowPartition:
    order: np.ndarray
    window_size: int
    windows: tuple[tuple[int, int], ...]
    pad_count: int

    @property
    def n_windows(self) -> int:
        return len(self.windows)

    def window_indices(self, w: int) -> np.ndarray:
        start, stop = self.windows[w]
        return self.order[start:stop]

    def populations(self) -> np.ndarray:
        return np.array([b - a for a, b in self.windows], dtype=np.int64)


def morton_order(points, bits: int = DEFAULT_BITS) -> np.ndarray:
    codes = morton_codes(normalize_unit_cube(points), bits)
    # stable sort: equal codes keep ascending original index
    return np.argsort(codes, kind="stable")


def partition(points, window_size: int = DEFAULT_WINDOW_SIZE, bits_per_axis: int = DEFAULT_BITS) -> WindowPartition:
    """Morton-sort the points and cut the order into windows of ``window_size``.

    The last window may be short; its missing slots are counted in
    ``pad_count`` but never materialized as points.
    """
    if window_size <= 0:
        raise ContractError(f"window_size must be positive, got {window_size}")
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ContractError("cannot partition an empty point set")
    order = morton_order(p, bits_per_axis)
    n = len(order)
    n_windows = -(-n // window_size)
    windows = tuple((w * window_size, min((w + 1) * window_size, n)) for w in range(n_windows))
    rem = n % window_size
    pad = window_size - rem if rem else 0
    order.setflags(write=False)
    return WindowPartition(order, int(window_size), windows, int(pad))
