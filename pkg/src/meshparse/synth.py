"""Synthetic labeled humanoid used as a ground-truth oracle for the pipeline.

The body is built from spheres, capsules and boxes, one labeled part each,
standing along +y and facing +z. Every part is a separate surface, so every
triangle carries exactly one part label. Keypoints are tied to vertex sets
("anchors") whose visibility in a rendering gives the oracle confidence.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .align import COCO_KEYPOINTS, Keypoint, KeypointSet, Rendering, align_pca, rotation_between
from .model import ContractError, LabeledCloud, LabelSpace, Mesh
from .render import DEFAULT_SIZE, Camera, ViewSpec, bounding_sphere, default_views, rasterize_with_camera

HUMANOID_LABELS = LabelSpace("custom", (
    "background", "face and neck", "hair", "torso", "left arm", "right arm",
    "left hand", "right hand", "left leg", "right leg", "left foot", "right foot",
))

DEFAULT_TESSELLATION = 160  # vertices per model unit along a surface
MIN_TESSELLATION = 20


@dataclass(frozen=True)
class Part:
    name: str
    primitive: str  # sphere | capsule | box | cap
    transform: np.ndarray = field(repr=False)  # 4x4, applied to the unit primitive
    label: int
    size: tuple = ()  # primitive parameters in model units


@dataclass(frozen=True, eq=False)
class SyntheticHumanoid:
    parts: tuple[Part, ...]
    tessellation: int
    mesh: Mesh
    ground_truth: LabeledCloud
    anchors: dict[str, np.ndarray]


# -------------------------------------------------------------- primitives

def _lathe(radius: np.ndarray, height: np.ndarray, n_seg: int):
    """Surface of revolution about +y from a bottom-to-top profile.

    Profile points with zero radius become single pole vertices.
    """
    ang = 2 * np.pi * np.arange(n_seg) / n_seg
    ring_xy = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    verts, rings = [], []
    for r, h in zip(radius, height):
        start = sum(len(v) for v in verts)
        if r <= 1e-12:
            verts.append(np.array([[0.0, h, 0.0]]))
            rings.append(("pole", start))
        else:
            verts.append(np.column_stack([r * ring_xy[:, 0], np.full(n_seg, h), r * ring_xy[:, 1]]))
            rings.append(("ring", start))
    tris = []
    j = np.arange(n_seg)
    jn = (j + 1) % n_seg
    for (ka, a), (kb, b) in zip(rings[:-1], rings[1:]):
        if ka == "pole" and kb == "ring":
            tris.append(np.column_stack([np.full(n_seg, a), b + jn, b + j]))
        elif ka == "ring" and kb == "pole":
            tris.append(np.column_stack([a + j, a + jn, np.full(n_seg, b)]))
        elif ka == "ring" and kb == "ring":
            tris.append(np.column_stack([a + j, a + jn, b + jn]))
            tris.append(np.column_stack([a + j, b + jn, b + j]))
    return np.concatenate(verts), np.concatenate(tris)


def _sphere(radius: float, density: float, polar_max: float = np.pi):
    """Unit-axis sphere of ``radius``; ``polar_max`` < pi leaves an open cap around +y."""
    n_lat = max(4, int(np.ceil(polar_max * radius * density)))
    n_seg = max(8, int(np.ceil(2 * np.pi * radius * density)))
    theta = np.linspace(polar_max, 0.0, n_lat + 1)
    return _lathe(radius * np.sin(theta), radius * np.cos(theta), n_seg)


def _capsule(length: float, radius: float, density: float):
    """Capsule along +y from 0 to ``length``."""
    n_cap = max(3, int(np.ceil(0.5 * np.pi * radius * density)))
    n_body = max(1, int(np.ceil(length * density)))
    n_seg = max(8, int(np.ceil(2 * np.pi * radius * density)))
    lower = np.linspace(np.pi, np.pi / 2, n_cap + 1)
    upper = np.linspace(np.pi / 2, 0.0, n_cap + 1)
    r = np.concatenate([radius * np.sin(lower), np.full(n_body - 1, radius), radius * np.sin(upper)])
    h = np.concatenate([radius * np.cos(lower), np.linspace(0, length, n_body + 1)[1:-1],
                        length + radius * np.cos(upper)])
    return _lathe(r, h, n_seg)


def _box(half: np.ndarray, density: float):
    verts, tris = [], []
    for axis in range(3):
        u_ax, v_ax = [a for a in range(3) if a != axis]
        nu = max(1, int(np.ceil(2 * half[u_ax] * density)))
        nv = max(1, int(np.ceil(2 * half[v_ax] * density)))
        gu, gv = np.meshgrid(np.linspace(-half[u_ax], half[u_ax], nu + 1),
                             np.linspace(-half[v_ax], half[v_ax], nv + 1), indexing="ij")
        for sign in (-1.0, 1.0):
            base = sum(len(v) for v in verts)
            face = np.zeros((gu.size, 3))
            face[:, axis] = sign * half[axis]
            face[:, u_ax] = gu.ravel()
            face[:, v_ax] = gv.ravel()
            verts.append(face)
            idx = base + np.arange(gu.size).reshape(nu + 1, nv + 1)
            a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
            c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
            tris.append(np.column_stack([a, b, c]))
            tris.append(np.column_stack([a, c, d]))
    return np.concatenate(verts), np.concatenate(tris)


def _placement(origin, direction=(0.0, 1.0, 0.0), scale=(1.0, 1.0, 1.0)) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = rotation_between((0.0, 1.0, 0.0), direction) @ np.diag(scale)
    m[:3, 3] = origin
    return m


# ------------------------------------------------------------------ body

def _body_plan(rng: np.random.Generator) -> list[tuple]:
    """Part layout in meters; ``rng`` jitters proportions symmetrically."""
    j = lambda: float(rng.uniform(0.95, 1.05))  # noqa: E731
    head_r = 0.11 * j()
    torso_half = np.array([0.17 * j(), 0.28, 0.10 * j()])
    torso_c = np.array([0.0, 1.15, 0.0])
    top = torso_c[1] + torso_half[1]
    arm_r = 0.045 * j()
    arm_len = 0.52 * j()
    sx = torso_half[0] + arm_r + 0.02
    leg_r = 0.065 * j()
    leg_top = torso_c[1] - torso_half[1] - 0.02
    head_c = np.array([0.0, top + 0.06 + head_r, 0.0])
    L = HUMANOID_LABELS.index
    plan = [
        ("head", "sphere", dict(center=head_c, radius=head_r), L("face and neck")),
        ("neck", "capsule", dict(p0=[0.0, top - 0.02, 0.0], p1=head_c - [0, head_r * 0.6, 0], radius=0.05),
         L("face and neck")),
        ("hair", "cap", dict(center=head_c, radius=head_r * 1.06, polar_max=np.radians(60)), L("hair")),
        ("torso", "box", dict(center=torso_c, half=torso_half), L("torso")),
    ]
    for side, sgn in (("left", 1.0), ("right", -1.0)):
        shoulder = np.array([sgn * sx, top - 0.05, 0.0])
        wrist = shoulder + [sgn * 0.04, -arm_len, 0.0]
        hand_c = wrist + [sgn * 0.005, -0.085, 0.0]
        hip = np.array([sgn * 0.09, leg_top, 0.0])
        ankle = np.array([sgn * 0.09, 0.13, 0.0])
        plan += [
            (f"{side} arm", "capsule", dict(p0=shoulder, p1=wrist, radius=arm_r), L(f"{side} arm")),
            (f"{side} hand", "sphere", dict(center=hand_c, radius=1.0, scale=(0.035, 0.07, 0.045)),
             L(f"{side} hand")),
            (f"{side} leg", "capsule", dict(p0=hip, p1=ankle, radius=leg_r), L(f"{side} leg")),
            (f"{side} foot", "box", dict(center=[sgn * 0.09, 0.035, 0.05], half=np.array([0.05, 0.035, 0.12])),
             L(f"{side} foot")),
        ]
    return plan


def _build_part(name, kind, spec, label, density):
    if kind == "sphere":
        scale = np.array(spec.get("scale", (1.0, 1.0, 1.0)))
        r = spec["radius"] * scale
        v, t = _sphere(1.0, density * float(np.mean(r)))
        xf = _placement(spec["center"], scale=r)
        size = tuple(float(x) for x in r)
    elif kind == "cap":
        v, t = _sphere(spec["radius"], density, spec["polar_max"])
        xf = _placement(spec["center"])
        size = (float(spec["radius"]), float(spec["polar_max"]))
    elif kind == "capsule":
        p0, p1 = np.asarray(spec["p0"], float), np.asarray(spec["p1"], float)
        length = float(np.linalg.norm(p1 - p0))
        v, t = _capsule(length, spec["radius"], density)
        xf = _placement(p0, p1 - p0)
        size = (length, float(spec["radius"]))
    elif kind == "box":
        v, t = _box(np.asarray(spec["half"], float), density)
        xf = _placement(spec["center"])
        size = tuple(float(x) for x in spec["half"])
    else:  # pragma: no cover
        raise ValueError(kind)
    world = v @ xf[:3, :3].T + xf[:3, 3]
    return Part(name, kind, xf, label, size), world, t


def _anchor_sets(parts_geo, plan) -> dict[str, np.ndarray]:
    """Vertex index sets standing in for each COCO keypoint."""
    geo = {name: (off, verts) for name, off, verts in parts_geo}
    spec = {p[0]: p[2] for p in plan}
    anchors: dict[str, np.ndarray] = {}

    head_off, head_v = geo["head"]
    hc = np.asarray(spec["head"]["center"])
    dirs = head_v - hc
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def cone(axis, deg):
        axis = np.asarray(axis, float) / np.linalg.norm(axis)
        return head_off + np.flatnonzero(dirs @ axis > np.cos(np.radians(deg)))

    anchors["nose"] = cone((0, 0, 1), 20)
    for side, sgn in (("left", 1.0), ("right", -1.0)):
        anchors[f"{side}_eye"] = cone((sgn * 0.35, 0.25, 0.9), 12)
        anchors[f"{side}_ear"] = cone((sgn * 1.0, 0.05, 0.25), 25)

        off, av = geo[f"{side} arm"]
        p0, p1 = np.asarray(spec[f"{side} arm"]["p0"], float), np.asarray(spec[f"{side} arm"]["p1"], float)
        axis = (p1 - p0) / np.linalg.norm(p1 - p0)
        s = (av - p0) @ axis
        radial = (av - p0) - np.outer(s, axis)
        outer = radial[:, 0] * sgn > 0
        length = np.linalg.norm(p1 - p0)
        anchors[f"{side}_shoulder"] = off + np.flatnonzero((s < 0.10) & outer)
        anchors[f"{side}_elbow"] = off + np.flatnonzero(np.abs(s - 0.5 * length) < 0.04)
        anchors[f"{side}_wrist"] = off + np.flatnonzero(np.abs(s - length) < 0.04)

        off, lv = geo[f"{side} leg"]
        p0, p1 = np.asarray(spec[f"{side} leg"]["p0"], float), np.asarray(spec[f"{side} leg"]["p1"], float)
        axis = (p1 - p0) / np.linalg.norm(p1 - p0)
        s = (lv - p0) @ axis
        length = np.linalg.norm(p1 - p0)
        anchors[f"{side}_hip"] = off + np.flatnonzero((s > 0.05) & (s < 0.15))
        anchors[f"{side}_knee"] = off + np.flatnonzero(np.abs(s - 0.5 * length) < 0.04)
        anchors[f"{side}_ankle"] = off + np.flatnonzero(np.abs(s - length) < 0.04)
    return {name: anchors[name].astype(np.int64) for name in COCO_KEYPOINTS}


def generate_humanoid(seed: int = 0, tessellation: int = DEFAULT_TESSELLATION) -> SyntheticHumanoid:
    """Build the labeled humanoid, PCA-aligned so the alignment stage leaves it in place."""
    if tessellation < MIN_TESSELLATION:
        raise ContractError(f"tessellation must be at least {MIN_TESSELLATION}")
    rng = np.random.default_rng(seed)
    plan = _body_plan(rng)
    parts, verts, tris, labels, geo = [], [], [], [], []
    offset = 0
    for name, kind, spec, label in plan:
        part, v, t = _build_part(name, kind, spec, label, float(tessellation))
        parts.append(part)
        verts.append(v)
        tris.append(t + offset)
        labels.append(np.full(len(v), label, dtype=np.int64))
        geo.append((name, offset, v))
        offset += len(v)
    anchors = _anchor_sets(geo, plan)
    mesh, _ = align_pca(Mesh(np.concatenate(verts), np.concatenate(tris)))
    gt = LabeledCloud(mesh.vertices, np.concatenate(labels), HUMANOID_LABELS)
    return SyntheticHumanoid(tuple(parts), int(tessellation), mesh, gt, anchors)


def triangle_labels(mesh: Mesh, vertex_labels) -> np.ndarray:
    """Label per triangle, taken from its provoking (last) vertex."""
    return np.asarray(vertex_labels, dtype=np.int64)[mesh.triangles[:, 2]]


def oracle_label_image(mesh: Mesh, buffers, vertex_labels) -> np.ndarray:
    """What a perfect 2D parser would output for a rendering: the label of each visible triangle."""
    tl = triangle_labels(mesh, vertex_labels)
    tid = buffers.triangle_id
    out = np.zeros(tid.shape, dtype=np.int64)
    out[tid >= 0] = tl[tid[tid >= 0]]
    return out


class SyntheticPoseEstimator:
    """Oracle keypoints: confidence is the visible fraction of a keypoint's anchor vertices.

    A vertex counts as visible when it projects inside the image and is not
    behind the depth buffer by more than a small tolerance. The keypoint
    position is the mean projection of its visible anchors.
    """

    def __init__(self, anchors: dict[str, np.ndarray], tolerance: float = 0.01):
        self.anchors = {k: np.asarray(v, dtype=np.int64) for k, v in anchors.items()}
        self.tolerance = tolerance

    def __call__(self, rendering: Rendering) -> KeypointSet:
        cam = rendering.camera
        depth = rendering.buffers.depth
        _, radius = bounding_sphere(rendering.mesh.vertices)
        tol = self.tolerance * radius
        pts = {}
        for name, idx in self.anchors.items():
            if len(idx) == 0:
                pts[name] = Keypoint(0.0, 0.0, 0.0)
                continue
            c = cam.to_camera(rendering.mesh.vertices[idx])
            front = c[:, 2] > cam.near
            uv = cam.project(np.where(front[:, None], c, 1.0))
            col, row = np.floor(uv[:, 0]).astype(np.int64), np.floor(uv[:, 1]).astype(np.int64)
            inside = front & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
            vis = np.zeros(len(idx), dtype=bool)
            vis[inside] = c[inside, 2] <= depth[row[inside], col[inside]] + tol
            conf = float(vis.mean())
            where = uv[vis] if vis.any() else uv[front] if front.any() else np.zeros((1, 2))
            u, v = where.mean(axis=0)
            pts[name] = Keypoint(float(u), float(v), conf)
        return KeypointSet(pts)


def render_oracle_views(humanoid: SyntheticHumanoid, views: list[ViewSpec] | None = None):
    """Per-view ``(RenderBuffers, label image, KeypointSet)`` for the humanoid."""
    views = views if views is not None else default_views()
    mesh = humanoid.mesh
    center, radius = bounding_sphere(mesh.vertices)
    estimator = SyntheticPoseEstimator(humanoid.anchors)
    out = []
    for view in views:
        camera = Camera.from_view(view, center, radius)
        buffers = rasterize_with_camera(mesh, camera)
        labels = oracle_label_image(mesh, buffers, humanoid.ground_truth.labels)
        kps = estimator(Rendering(mesh, camera, buffers))
        out.append((buffers, labels, kps))
    return out


def save_anchors(anchors: dict[str, np.ndarray], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({k: [int(i) for i in v] for k, v in anchors.items()}, fh)
        fh.write("\n")


def load_anchors(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return {str(k): np.asarray(v, dtype=np.int64) for k, v in doc.items()}


def export_dataset(out, seed: int = 0, tessellation: int = DEFAULT_TESSELLATION,
                   size: int = DEFAULT_SIZE) -> Path:
    """Write a humanoid with its oracle inputs and a ready-to-run pipeline config.

    Layout: ``mesh.ply``, ``ground_truth.ply`` (+ labels sidecar),
    ``label_space.json``, ``anchors.json``, ``labels/view_XX.png``,
    ``keypoints/view_XX.json`` and ``pipeline.json``. Returns the config path.
    """
    out = Path(out)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    (out / "keypoints").mkdir(exist_ok=True)
    h = generate_humanoid(seed, tessellation)
    io.save_mesh(h.mesh, out / "mesh.ply")
    io.save_labeled_cloud(h.ground_truth, out / "ground_truth.ply")
    io.save_label_space(HUMANOID_LABELS, out / "label_space.json")
    save_anchors(h.anchors, out / "anchors.json")
    for i, (_, image, kps) in enumerate(render_oracle_views(h, default_views(size))):
        io.write_label_image(image, out / "labels" / f"view_{i:02d}.png")
        with open(out / "keypoints" / f"view_{i:02d}.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(kps.to_json(), fh, indent=2)
    config = {
        "version": 1, "mesh": "mesh.ply", "label_space": "label_space.json", "views": "default",
        "render": {"size": size},
        "align": {"enabled": True, "keypoints": {"source": "oracle", "path": "anchors.json"}},
        "labels": {"source": "images", "dir": "labels"},
        "ground_truth": "ground_truth.labels.txt", "output": "run", "seed": seed,
    }
    with open(out / "pipeline.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    return out / "pipeline.json"
