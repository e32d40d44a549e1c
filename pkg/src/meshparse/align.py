"""Canonical orientation: PCA up-axis alignment and keypoint-driven correction."""
from __future__ import annotations

import json
import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .model import ContractError, Mesh
from .render import Camera, RenderBuffers, ViewSpec, bounding_sphere, rasterize_with_camera, save_preview

log = logging.getLogger(__name__)

COCO_KEYPOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

NOSE_MIN_CONFIDENCE = 0.3
SHOULDER_ASYMMETRY = 0.15
EYE_DIFFERENTIAL = 0.15
EAR_CONVERGED = 0.4
POSITION_MIN_CONFIDENCE = 0.05
CANONICAL_VIEW = ViewSpec(0.0, 0.0, 512, 512)


class AlignmentError(RuntimeError):
    pass


class EstimatorError(RuntimeError):
    pass


# ---------------------------------------------------------------- rotations

def rotation_about(axis: str | np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    if isinstance(axis, str):
        axis = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}[axis]
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def rotation_between(a, b) -> np.ndarray:
    """Smallest rotation taking direction ``a`` onto direction ``b``."""
    a = np.asarray(a, dtype=np.float64) / np.linalg.norm(a)
    b = np.asarray(b, dtype=np.float64) / np.linalg.norm(b)
    axis = np.cross(a, b)
    s, c = np.linalg.norm(axis), float(np.clip(a @ b, -1.0, 1.0))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis perpendicular to a
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return rotation_about(perp, np.pi)
    return rotation_about(axis, np.arctan2(s, c))


@dataclass(frozen=True)
class AlignmentFrame:
    """Body frame: left-to-right shoulder, mid-hip to upper chest, and their cross product."""

    x_ho: np.ndarray
    y_ho: np.ndarray
    z_ho: np.ndarray

    @classmethod
    def from_landmarks(cls, left_shoulder, right_shoulder, mid_hip, upper_chest) -> "AlignmentFrame":
        x = np.asarray(right_shoulder, float) - np.asarray(left_shoulder, float)
        y = np.asarray(upper_chest, float) - np.asarray(mid_hip, float)
        z = np.cross(x, y)
        norms = [np.linalg.norm(v) for v in (x, y, z)]
        if min(norms) < 1e-12 or not np.isfinite(norms).all():
            raise AlignmentError("degenerate body landmarks")
        return cls(x / norms[0], y / norms[1], z / norms[2])


def align_pca(mesh: Mesh) -> tuple[Mesh, np.ndarray]:
    """Mean-center the mesh and rotate its principal axis onto world +y.

    The principal axis sign is chosen to point into the +y half-space, so an
    already upright mesh gets the identity.
    """
    v = mesh.vertices
    if len(v) < 3:
        raise AlignmentError("need at least 3 vertices")
    centered = v - v.mean(axis=0)
    evals, evecs = np.linalg.eigh(centered.T @ centered)
    order = np.argsort(np.abs(evals))[::-1]
    evals, evecs = np.abs(evals[order]), evecs[:, order]
    if evals[0] <= 0 or evals[1] <= 1e-12 * evals[0]:
        raise AlignmentError("vertex covariance has rank < 2 (points are collinear)")
    e1 = evecs[:, 0]
    if e1[1] < 0:
        e1 = -e1
    rot = rotation_between(e1, [0.0, 1.0, 0.0])
    return Mesh(centered @ rot.T, mesh.triangles), rot


# ---------------------------------------------------------------- keypoints

@dataclass(frozen=True)
class Keypoint:
    u: float
    v: float
    confidence: float


@dataclass(frozen=True)
class KeypointSet:
    points: dict[str, Keypoint] = field(default_factory=dict)

    def __post_init__(self):
        pts = dict(self.points)
        for name, kp in pts.items():
            if name not in COCO_KEYPOINTS:
                raise ContractError(f"unknown keypoint {name!r}")
            if not 0.0 <= kp.confidence <= 1.0:
                raise ContractError(f"{name}: confidence {kp.confidence} outside [0, 1]")
        for name in COCO_KEYPOINTS:
            pts.setdefault(name, Keypoint(0.0, 0.0, 0.0))
        object.__setattr__(self, "points", pts)

    def __getitem__(self, name: str) -> Keypoint:
        return self.points[name]

    def conf(self, name: str) -> float:
        return self.points[name].confidence

    def to_json(self) -> list[dict]:
        return [{"name": n, "x": self[n].u, "y": self[n].v, "confidence": self[n].confidence}
                for n in COCO_KEYPOINTS]

    @classmethod
    def from_json(cls, doc) -> "KeypointSet":
        if not isinstance(doc, list):
            raise ContractError("keypoint JSON must be an array")
        pts = {}
        for item in doc:
            try:
                pts[str(item["name"])] = Keypoint(float(item["x"]), float(item["y"]),
                                                  float(item["confidence"]))
            except (KeyError, TypeError, ValueError):
                raise ContractError(f"bad keypoint entry {item!r}") from None
        return cls(pts)


@dataclass(frozen=True, eq=False)
class Rendering:
    """What a pose estimator sees: the rendered buffers plus how they were made."""

    mesh: Mesh
    camera: Camera
    buffers: RenderBuffers


class PoseEstimator(Protocol):
    def __call__(self, rendering: Rendering) -> KeypointSet: ...


def render_canonical(mesh: Mesh, view: ViewSpec = CANONICAL_VIEW) -> Rendering:
    center, radius = bounding_sphere(mesh.vertices)
    camera = Camera.from_view(view, center, radius)
    return Rendering(mesh, camera, rasterize_with_camera(mesh, camera))


def load_keypoints(path) -> KeypointSet:
    with open(path, "r", encoding="utf-8") as fh:
        return KeypointSet.from_json(json.load(fh))


class FileEstimator:
    """Returns the same keypoints from a JSON file on every call."""

    def __init__(self, path):
        self.keypoints = load_keypoints(path)

    def __call__(self, rendering: Rendering) -> KeypointSet:
        return self.keypoints


class CommandEstimator:
    """Runs an external pose model: ``<command> <preview.pgm>`` must print keypoint JSON."""

    def __init__(self, command: str, timeout: float = 300.0):
        self.argv = shlex.split(command)
        self.timeout = timeout

    def __call__(self, rendering: Rendering) -> KeypointSet:
        with tempfile.TemporaryDirectory() as tmp:
            image = Path(tmp) / "view.pgm"
            save_preview(rendering.buffers, image)
            proc = subprocess.run(self.argv + [str(image)], capture_output=True, text=True,
                                  timeout=self.timeout)
        if proc.returncode != 0:
            raise EstimatorError(f"{self.argv[0]} exited with {proc.returncode}: {proc.stderr.strip()}")
        try:
            return KeypointSet.from_json(json.loads(proc.stdout))
        except (json.JSONDecodeError, ContractError) as exc:
            raise EstimatorError(f"{self.argv[0]} printed unusable keypoints: {exc}") from exc


# ------------------------------------------------------- orientation rules

def _mean_position(kps: KeypointSet, names) -> np.ndarray | None:
    pts = [kps[n] for n in names if kps.conf(n) > POSITION_MIN_CONFIDENCE]
    if len(pts) < len(names):
        return None
    return np.mean([(p.u, p.v) for p in pts], axis=0)


def ear_score(kps: KeypointSet) -> float:
    return 0.5 * (kps.conf("left_ear") + kps.conf("right_ear"))


def decide_correction(kps: KeypointSet) -> tuple[str, np.ndarray] | None:
    """First firing rule as ``(reason, rotation)``, or None when the pose looks canonical.

    Rules, in priority order:

    1. torso axis: horizontal body turns a quarter about z; shoulders
       below hips turn a half about z;
    2. nose confidence below 0.3 (facing away) turns a half about y;
    3. shoulder confidence asymmetry above 0.15 turns pi/8 about y (pi/4
       above 0.3), bringing the weaker shoulder toward the camera;
    4. ears clearly more confident than eyes means the face is tipped
       away; tilt pi/8 about x toward the camera.
    """
    shoulders = _mean_position(kps, ("left_shoulder", "right_shoulder"))
    hips = _mean_position(kps, ("left_hip", "right_hip"))
    if shoulders is not None and hips is not None:
        du, dv = shoulders - hips
        if abs(du) > abs(dv):
            # image u follows world +x in the front view
            return "horizontal", rotation_about("z", np.pi / 2 if du > 0 else -np.pi / 2)
        if dv > 0:
            return "upside_down", rotation_about("z", np.pi)

    if kps.conf("nose") < NOSE_MIN_CONFIDENCE:
        return "rear_facing", rotation_about("y", np.pi)

    asym = kps.conf("left_shoulder") - kps.conf("right_shoulder")
    if abs(asym) > SHOULDER_ASYMMETRY:
        angle = np.pi / 4 if abs(asym) > 2 * SHOULDER_ASYMMETRY else np.pi / 8
        # the left side faces +x; turning by -angle about y brings it toward the camera
        return "lateral", rotation_about("y", -angle if asym < 0 else angle)

    eyes = 0.5 * (kps.conf("left_eye") + kps.conf("right_eye"))
    if ear_score(kps) - eyes > EYE_DIFFERENTIAL:
        eye_pos = _mean_position(kps, ("left_eye", "right_eye"))
        ear_pos = _mean_position(kps, ("left_ear", "right_ear"))
        # eyes drawn above the ears: the face points up, so tip the head top forward
        forward = eye_pos is None or ear_pos is None or eye_pos[1] < ear_pos[1]
        return "lean", rotation_about("x", np.pi / 8 if forward else -np.pi / 8)
    return None


@dataclass
class OrientationResult:
    mesh: Mesh
    trace: list[np.ndarray]
    reasons: list[str]
    estimator_calls: int
    ear_confidence: float

    @property
    def converged(self) -> bool:
        return self.ear_confidence > EAR_CONVERGED

    @property
    def rotation(self) -> np.ndarray:
        total = np.eye(3)
        for r in self.trace:
            total = r @ total
        return total

    def __iter__(self):
        # unpacks as (mesh, trace)
        return iter((self.mesh, self.trace))


def correct_orientation(mesh: Mesh, estimator: PoseEstimator,
                        renderer: Callable[[Mesh], Rendering] = render_canonical,
                        max_iters: int = 10) -> OrientationResult:
    """Iteratively render, estimate keypoints and apply one corrective rotation.

    Stops when no rule fires or after ``max_iters`` estimator calls.
    Rotations are about the origin, so composing the trace reproduces the
    output from the input exactly up to rounding.
    """
    if max_iters < 1:
        raise ContractError("max_iters must be at least 1")
    trace, reasons = [], []
    ear = 0.0
    calls = 0
    for it in range(max_iters):
        rendering = renderer(mesh)
        try:
            kps = estimator(rendering)
        except Exception as exc:
            raise EstimatorError(f"pose estimator failed at iteration {it}: {exc}") from exc
        calls += 1
        ear = ear_score(kps)
        decision = decide_correction(kps)
        if decision is None:
            break
        reason, rot = decision
        log.debug("iteration %d: %s", it, reason)
        mesh = mesh.transformed(rot)
        trace.append(rot)
        reasons.append(reason)
    else:
        log.warning("orientation did not settle within %d iterations", max_iters)
    result = OrientationResult(mesh, trace, reasons, calls, ear)
    if not result.converged:
        log.warning("final ear confidence %.2f is below %.1f", ear, EAR_CONVERGED)
    return result
