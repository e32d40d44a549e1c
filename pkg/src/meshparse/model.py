"""Shared containers: meshes, label spaces, labeled point clouds, confusion matrices."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """Raised when an operation's input violates its documented preconditions."""


class ValidationError(ContractError):
    """Raised when loaded data breaks a container invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Indexed triangle mesh. Triangle order is the draw order."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        t = np.array(self.triangles, dtype=np.int64)
        if t.size == 0:
            t = t.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise ValidationError(f"vertices must be a non-empty (N, 3) array, got shape {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValidationError(f"triangles must be (M, 3), got shape {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            bad = int(np.flatnonzero((t < 0).any(1) | (t >= len(v)).any(1))[0])
            raise ValidationError(
                f"triangle {bad} references vertex {t[bad].tolist()} but mesh has {len(v)} vertices"
            )
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(vertices, self.triangles)

    def transformed(self, rotation: np.ndarray) -> "Mesh":
        return Mesh(self.vertices @ np.asarray(rotation).T, self.triangles)


@dataclass(frozen=True)
class LabelSpace:
    name: str
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        if not labels or labels[0] != "background":
            raise ValidationError("label index 0 must be named 'background'")
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate label names in {self.name!r}")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str | int) -> int:
        """Resolve a label name (or a numeric string/int) to its index."""
        if isinstance(label, (int, np.integer)):
            idx = int(label)
        elif isinstance(label, str) and label.isdigit():
            idx = int(label)
        else:
            try:
                return self.labels.index(label)
            except ValueError:
                raise ContractError(f"unknown label {label!r} in label space {self.name!r}") from None
        if not 0 <= idx < len(self.labels):
            raise ContractError(f"label index {idx} out of range for {self.name!r}")
        return idx


CIHP = LabelSpace("cihp", (
    "background", "hat", "hair", "gloves", "sunglasses", "upper clothes", "dress", "coat",
    "socks", "pants", "torso-skin", "scarf", "skirt", "face", "left arm", "right arm",
    "left leg", "right leg", "left shoe", "right shoe",
))

SAPIENS_V1 = LabelSpace("sapiens-v1", (
    "background", "apparel", "face and neck", "hair", "left foot", "left hand", "left arm",
    "left leg", "lower clothing", "right foot", "right hand", "right arm", "right leg",
    "torso", "upper clothing",
))

SAPIENS_V2 = LabelSpace("sapiens-v2", SAPIENS_V1.labels + ("lip", "teeth", "tongue"))

BUILTIN_LABEL_SPACES = {s.name: s for s in (CIHP, SAPIENS_V1, SAPIENS_V2)}


@dataclass(frozen=True, eq=False)
class LabeledCloud:
    points: np.ndarray
    labels: np.ndarray
    label_space: LabelSpace = field(repr=False)

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        lab = np.array(self.labels, dtype=np.int64).reshape(-1)
        if len(p) != len(lab):
            raise ValidationError(f"{len(p)} points but {len(lab)} labels")
        if lab.size and (lab.min() < 0 or lab.max() >= len(self.label_space)):
            raise ValidationError(
                f"label {int(lab.max())} outside label space {self.label_space.name!r} "
                f"of size {len(self.label_space)}"
            )
        object.__setattr__(self, "points", _frozen(p))
        object.__setattr__(self, "labels", _frozen(lab))

    def __len__(self) -> int:
        return len(self.labels)

    def relabeled(self, labels) -> "LabeledCloud":
        return LabeledCloud(self.points, labels, self.label_space)

    def subset(self, indices) -> "LabeledCloud":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledCloud(self.points[indices], self.labels[indices], self.label_space)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed ``[true][predicted]``."""

    counts: np.ndarray
    label_space: LabelSpace | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValidationError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise ValidationError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", _frozen(c))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]


def confusion(gt: LabeledCloud, pred: LabeledCloud) -> ConfusionMatrix:
    if len(gt) != len(pred):
        raise ContractError(f"ground truth has {len(gt)} points, prediction has {len(pred)}")
    if gt.label_space != pred.label_space:
        raise ContractError(
            f"label spaces differ: {gt.label_space.name!r} vs {pred.label_space.name!r}"
        )
    n = len(gt.label_space)
    flat = np.bincount(gt.labels * n + pred.labels, minlength=n * n)
    return ConfusionMatrix(flat.reshape(n, n), gt.label_space)
