"""Software rasterizer producing triangle-ID and depth buffers.

Pixels are sampled at their centers. The nearest triangle (smallest
camera-space depth) wins; equal depths go to the lower triangle index, so
the result does not depend on triangle order. Shared edges are owned by
exactly one triangle (top-left rule). Back faces are rendered.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .model import ContractError, Mesh

DEFAULT_SIZE = 1024
DEFAULT_FOV = 40.0
DEFAULT_DISTANCE = 3.0
BACKGROUND = -1

_CHUNK = 1 << 22  # candidate pixels evaluated per batch


@dataclass(frozen=True)
class ViewSpec:
    azimuth: float = 0.0
    elevation: float = 0.0
    width: int = DEFAULT_SIZE
    height: int = DEFAULT_SIZE
    fov: float = DEFAULT_FOV
    distance: float = DEFAULT_DISTANCE  # in bounding-sphere radii

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ContractError(f"image size must be positive, got {self.width}x{self.height}")
        if not 0.0 < self.fov < 180.0:
            raise ContractError(f"fov must be in (0, 180) degrees, got {self.fov}")
        if self.distance <= 0:
            raise ContractError("camera distance must be positive")

    def with_size(self, width: int, height: int | None = None) -> "ViewSpec":
        return ViewSpec(self.azimuth, self.elevation, width, height or width, self.fov, self.distance)

    def to_json(self) -> dict:
        return {"azimuth": self.azimuth, "elevation": self.elevation, "width": self.width,
                "height": self.height, "fov": self.fov, "distance": self.distance}


def default_views(size: int = DEFAULT_SIZE, fov: float = DEFAULT_FOV, distance: float = DEFAULT_DISTANCE) -> list[ViewSpec]:
    """Elevations {0, 30, -30} x azimuths {0, 90, 180, 270}, elevation-major."""
    return [ViewSpec(az, el, size, size, fov, distance)
            for el in (0.0, 30.0, -30.0) for az in (0.0, 90.0, 180.0, 270.0)]


def bounding_sphere(vertices) -> tuple[np.ndarray, float]:
    """Center of the axis-aligned bounds and the farthest-vertex radius."""
    v = np.asarray(vertices, dtype=np.float64)
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radius = float(np.sqrt(((v - center) ** 2).sum(axis=1).max()))
    return center, (radius if radius > 0 else 1.0)


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera looking at ``target``; world +y is up in the image."""

    eye: np.ndarray
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    focal: float  # pixels
    width: int
    height: int
    near: float

    @classmethod
    def from_view(cls, view: ViewSpec, center, radius: float) -> "Camera":
        az, el = np.radians(view.azimuth), np.radians(view.elevation)
        offset = np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
        center = np.asarray(center, dtype=np.float64)
        eye = center + view.distance * radius * offset
        forward = -offset
        right = np.cross(forward, [0.0, 1.0, 0.0])
        if np.linalg.norm(right) < 1e-9:
            right = np.array([1.0, 0.0, 0.0])
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        focal = 0.5 * view.height / np.tan(np.radians(view.fov) / 2)
        return cls(eye, right, up, forward, float(focal), view.width, view.height, 1e-3 * radius)

    def to_camera(self, points) -> np.ndarray:
        """World points to camera coordinates (x right, y up, depth forward)."""
        d = np.asarray(points, dtype=np.float64) - self.eye
        return np.stack([d @ self.right, d @ self.up, d @ self.forward], axis=-1)

    def project(self, cam_points) -> np.ndarray:
        """Camera coordinates to (u, v) pixel coordinates; v grows downward."""
        c = np.asarray(cam_points, dtype=np.float64)
        u = 0.5 * self.width + self.focal * c[..., 0] / c[..., 2]
        v = 0.5 * self.height - self.focal * c[..., 1] / c[..., 2]
        return np.stack([u, v], axis=-1)

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Ray origin and per-pixel world directions (scaled to unit depth)."""
        u = np.arange(self.width) + 0.5
        v = np.arange(self.height) + 0.5
        uu, vv = np.meshgrid(u, v)
        x = (uu - 0.5 * self.width) / self.focal
        y = (0.5 * self.height - vv) / self.focal
        dirs = x[..., None] * self.right + y[..., None] * self.up + self.forward
        return self.eye, dirs


@dataclass(frozen=True, eq=False)
class RenderBuffers:
    """``triangle_id`` is -1 on background, where ``depth`` is +inf."""

    triangle_id: np.ndarray
    depth: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.triangle_id.shape

    @property
    def coverage(self) -> np.ndarray:
        return self.triangle_id >= 0


def _clip_near(cam_tris: np.ndarray, near: float) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of one camera-space triangle against depth >= near."""
    poly = list(cam_tris)
    out = []
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        ina, inb = a[2] >= near, b[2] >= near
        if ina:
            out.append(a)
        if ina != inb:
            t = (near - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    return [np.array([out[0], out[j], out[j + 1]]) for j in range(1, len(out) - 1)]


def _camera_triangles(mesh: Mesh, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    cam = camera.to_camera(mesh.vertices)[mesh.triangles]  # (M, 3, 3)
    ids = np.arange(mesh.n_triangles, dtype=np.int64)
    depth = cam[:, :, 2]
    front = (depth >= camera.near).all(axis=1)
    crossing = ~front & (depth >= camera.near).any(axis=1)
    tris, tids = [cam[front]], [ids[front]]
    for t in np.flatnonzero(crossing):
        pieces = _clip_near(cam[t], camera.near)
        if pieces:
            tris.append(np.array(pieces))
            tids.append(np.full(len(pieces), t, dtype=np.int64))
    return np.concatenate(tris), np.concatenate(tids)


def _edge_owned(w, du, dv):
    # strictly inside, or on a top edge (dv == 0, du > 0) or a left edge (dv < 0)
    return (w > 0) | ((w == 0) & ((dv < 0) | ((dv == 0) & (du > 0))))


def _raster_batch(uv, invz, tids, x0, y0, bw, counts, width):
    total = int(counts.sum())
    tri = np.repeat(np.arange(len(tids)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total, dtype=np.int64) - start
    px = x0[tri] + local % bw[tri]
    py = y0[tri] + local // bw[tri]
    cu, cv = px + 0.5, py + 0.5

    a, b, c = uv[tri, 0], uv[tri, 1], uv[tri, 2]

    def edge(p, q):
        # evaluate from the lexicographically smaller endpoint so that the two
        # triangles sharing an edge get exactly opposite values
        swap = (p[:, 0] > q[:, 0]) | ((p[:, 0] == q[:, 0]) & (p[:, 1] > q[:, 1]))
        s, e = np.where(swap[:, None], q, p), np.where(swap[:, None], p, q)
        w = (e[:, 0] - s[:, 0]) * (cv - s[:, 1]) - (e[:, 1] - s[:, 1]) * (cu - s[:, 0])
        return np.where(swap, -w, w), q[:, 0] - p[:, 0], q[:, 1] - p[:, 1]

    w0, du0, dv0 = edge(b, c)
    w1, du1, dv1 = edge(c, a)
    w2, du2, dv2 = edge(a, b)
    inside = _edge_owned(w0, du0, dv0) & _edge_owned(w1, du1, dv1) & _edge_owned(w2, du2, dv2)
    area = (w0 + w1 + w2)[inside]
    iz = invz[tri[inside]]
    inv_depth = (w0[inside] * iz[:, 0] + w1[inside] * iz[:, 1] + w2[inside] * iz[:, 2]) / area
    pix = py[inside] * width + px[inside]
    return pix, 1.0 / inv_depth, tids[tri[inside]]


def rasterize(mesh: Mesh, view: ViewSpec, frame: tuple | None = None) -> RenderBuffers:
    """Render ``mesh`` into triangle-ID and depth buffers.

    ``frame`` is the ``(center, radius)`` the camera orbits; by default the
    mesh's own bounding sphere, so the whole mesh is in view.
    """
    center, radius = frame if frame is not None else bounding_sphere(mesh.vertices)
    camera = Camera.from_view(view, center, radius)
    return rasterize_with_camera(mesh, camera)


def rasterize_with_camera(mesh: Mesh, camera: Camera) -> RenderBuffers:
    width, height = camera.width, camera.height
    ids = np.full(width * height, BACKGROUND, dtype=np.int64)
    zbuf = np.full(width * height, np.inf)
    if mesh.n_triangles == 0:
        return RenderBuffers(ids.reshape(height, width).astype(np.int32), zbuf.reshape(height, width))

    cam, tids = _camera_triangles(mesh, camera)
    uv = camera.project(cam)  # (M, 3, 2)
    invz = 1.0 / cam[:, :, 2]
    a, b, c = uv[:, 0], uv[:, 1], uv[:, 2]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    ok = np.isfinite(area) & (area != 0)
    # no culling: flip clockwise triangles to a common orientation
    flip = area < 0
    uv[flip] = uv[flip][:, [0, 2, 1]]
    invz[flip] = invz[flip][:, [0, 2, 1]]
    uv, invz, tids = uv[ok], invz[ok], tids[ok]

    # pixels whose centers fall inside the bounding box
    lo = np.ceil(uv.min(axis=1) - 0.5)
    hi = np.floor(uv.max(axis=1) - 0.5)
    x0 = np.clip(lo[:, 0], 0, width - 1).astype(np.int64)
    x1 = np.clip(hi[:, 0], -1, width - 1).astype(np.int64)
    y0 = np.clip(lo[:, 1], 0, height - 1).astype(np.int64)
    y1 = np.clip(hi[:, 1], -1, height - 1).astype(np.int64)
    offscreen = (hi[:, 0] < 0) | (lo[:, 0] > width - 1) | (hi[:, 1] < 0) | (lo[:, 1] > height - 1)
    bw = np.maximum(x1 - x0 + 1, 0)
    bh = np.maximum(y1 - y0 + 1, 0)
    counts = np.where(offscreen, 0, bw * bh)

    live = np.flatnonzero(counts)
    csum = np.cumsum(counts[live])
    starts = 0
    while starts < len(live):
        base = csum[starts - 1] if starts else 0
        stop = int(np.searchsorted(csum, base + _CHUNK, side="right"))
        stop = max(stop, starts + 1)
        sel = live[starts:stop]
        pix, depth, tid = _raster_batch(uv[sel], invz[sel], tids[sel], x0[sel], y0[sel], bw[sel], counts[sel], width)
        if len(pix):
            order = np.lexsort((tid, depth, pix))
            pix, depth, tid = pix[order], depth[order], tid[order]
            first = np.ones(len(pix), dtype=bool)
            first[1:] = pix[1:] != pix[:-1]
            pix, depth, tid = pix[first], depth[first], tid[first]
            cur_z, cur_id = zbuf[pix], ids[pix]
            better = (depth < cur_z) | ((depth == cur_z) & ((cur_id < 0) | (tid < cur_id)))
            zbuf[pix[better]] = depth[better]
            ids[pix[better]] = tid[better]
        starts = stop
    return RenderBuffers(ids.reshape(height, width).astype(np.int32), zbuf.reshape(height, width))


def provoking_vertices(mesh: Mesh, buffers: RenderBuffers) -> np.ndarray:
    """Per-pixel index of the last (draw-order) vertex of the visible triangle.

    Background pixels hold -1.
    """
    tid = buffers.triangle_id
    if tid.size and tid.max(initial=-1) >= mesh.n_triangles:
        raise ContractError(
            f"buffer references triangle {int(tid.max())} but mesh has {mesh.n_triangles}"
        )
    out = np.full(tid.shape, -1, dtype=np.int64)
    mask = tid >= 0
    out[mask] = mesh.triangles[tid[mask], 2]
    return out


visible_vertices = provoking_vertices


# ------------------------------------------------------------------ export

_ID_MAGIC = b"MPTRIID\x00"
_DEPTH_MAGIC = b"MPDEPTH\x00"


def _write_grid(path, magic: bytes, grid: np.ndarray, dtype: str) -> None:
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(magic + struct.pack("<II", w, h))
        fh.write(np.ascontiguousarray(grid, dtype=dtype).tobytes())


def _read_grid(path, magic: bytes, dtype: str) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:8] != magic:
            raise ContractError(f"{path}: not a {magic[:7].decode()} buffer")
        w, h = struct.unpack("<II", head[8:])
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != w * h:
        raise ContractError(f"{path}: expected {w * h} values, found {data.size}")
    return data.reshape(h, w)


def save_buffers(buffers: RenderBuffers, id_path, depth_path=None) -> None:
    """Triangle IDs as int32 and depth as float32, both little-endian after a 16-byte header."""
    _write_grid(id_path, _ID_MAGIC, buffers.triangle_id, "<i4")
    if depth_path is not None:
        _write_grid(depth_path, _DEPTH_MAGIC, buffers.depth, "<f4")


def load_buffers(id_path, depth_path=None) -> RenderBuffers:
    tid = _read_grid(id_path, _ID_MAGIC, "<i4").astype(np.int32)
    if depth_path is not None:
        depth = _read_grid(depth_path, _DEPTH_MAGIC, "<f4").astype(np.float64)
    else:
        depth = np.where(tid >= 0, 0.0, np.inf)
    return RenderBuffers(tid, depth)


def preview(buffers: RenderBuffers) -> np.ndarray:
    """8-bit depth shading: near is bright, background is black."""
    d = buffers.depth
    mask = np.isfinite(d)
    img = np.zeros(d.shape, dtype=np.uint8)
    if mask.any():
        lo, hi = d[mask].min(), d[mask].max()
        span = hi - lo if hi > lo else 1.0
        img[mask] = (255 - 200 * (d[mask] - lo) / span).astype(np.uint8)
    return img


def save_preview(buffers: RenderBuffers, path) -> None:
    Image.fromarray(preview(buffers), mode="L").save(path)
