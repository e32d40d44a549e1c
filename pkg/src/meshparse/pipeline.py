"""End-to-end orchestration: align -> render -> fuse -> denoise -> sample.

Every stage writes its outputs under the output directory and a
``manifest.json`` lists them with SHA-256 hashes. Given the same config the
manifest is byte-identical between runs.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .align import CommandEstimator, FileEstimator, align_pca, correct_orientation
from .fuse import DbscanParams, accumulate_votes, apply_rules, denoise_labels, finalize_labels, load_rules
from .metrics import evaluate
from .model import BUILTIN_LABEL_SPACES, LabeledCloud, ValidationError, confusion
from .render import (DEFAULT_DISTANCE, DEFAULT_FOV, DEFAULT_SIZE, Camera, ViewSpec, bounding_sphere,
                     default_views, rasterize_with_camera, save_buffers, save_preview)
from .sample import build_plan, fps_windowed
from .serialize import DEFAULT_BITS, DEFAULT_WINDOW_SIZE, partition
from .synth import SyntheticPoseEstimator, load_anchors, oracle_label_image

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
LABEL_IMAGE_SUFFIXES = (".png", ".pgm")


class ConfigError(ValidationError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class RenderConfig:
    size: int = DEFAULT_SIZE
    fov: float = DEFAULT_FOV
    distance: float = DEFAULT_DISTANCE


@dataclass(frozen=True)
class AlignConfig:
    enabled: bool = True
    max_iters: int = 10
    keypoints: dict = field(default_factory=lambda: {"source": "none"})


@dataclass(frozen=True)
class FuseConfig:
    eps: float = 0.03
    min_samples: int = 100
    knn: int = 40
    rules: Path | None = None


@dataclass(frozen=True)
class SampleConfig:
    k: int = 10000
    window_size: int = DEFAULT_WINDOW_SIZE
    bits: int = DEFAULT_BITS
    oversample: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PipelineConfig:
    mesh: Path
    label_space: str | Path
    labels: dict
    output: Path
    views: str | list = "default"
    render: RenderConfig = RenderConfig()
    align: AlignConfig = AlignConfig()
    fuse: FuseConfig = FuseConfig()
    sample: SampleConfig = SampleConfig()
    ground_truth: Path | None = None
    seed: int = 0  # recorded in the manifest; every current stage is deterministic
    version: int = CONFIG_VERSION

    def view_specs(self) -> list[ViewSpec]:
        r = self.render
        if self.views == "default":
            return default_views(r.size, r.fov, r.distance)
        return [ViewSpec(float(v["azimuth"]), float(v["elevation"]), r.size, r.size, r.fov, r.distance)
                for v in self.views]


def _take(doc: dict, allowed: set, where: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return doc


def _path(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _require_file(p: Path, what: str) -> Path:
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def parse_config(doc: dict, base_dir=".") -> PipelineConfig:
    """Validate a config document. Relative paths resolve against ``base_dir``."""
    base = Path(base_dir)
    top = _take(doc, {"version", "mesh", "label_space", "views", "render", "align", "labels",
                      "fuse", "sample", "ground_truth", "output", "seed"}, "config")
    if top.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {top.get('version')!r}")
    for key in ("mesh", "label_space", "labels", "output"):
        if key not in top:
            raise ConfigError(f"config: missing required key {key!r}")

    mesh = _require_file(_path(base, top["mesh"]), "mesh")
    ls = top["label_space"]
    if ls not in BUILTIN_LABEL_SPACES:
        ls = _require_file(_path(base, ls), "label space")

    views = top.get("views", "default")
    if views != "default":
        if not isinstance(views, list) or not views:
            raise ConfigError("views: expected 'default' or a non-empty list")
        for k, v in enumerate(views):
            _take(v, {"azimuth", "elevation"}, f"views[{k}]")

    render = RenderConfig(**_take(top.get("render", {}), {"size", "fov", "distance"}, "render"))

    al = dict(_take(top.get("align", {}), {"enabled", "max_iters", "keypoints"}, "align"))
    kp = dict(_take(al.get("keypoints", {"source": "none"}), {"source", "path", "command"}, "align.keypoints"))
    src = kp.get("source", "none")
    if src in ("oracle", "file"):
        if "path" not in kp:
            raise ConfigError(f"align.keypoints: source {src!r} needs 'path'")
        kp["path"] = _require_file(_path(base, kp["path"]), "keypoint file")
    elif src == "command":
        if "command" not in kp:
            raise ConfigError("align.keypoints: source 'command' needs 'command'")
    elif src != "none":
        raise ConfigError(f"align.keypoints: unknown source {src!r}")
    al["keypoints"] = kp
    align = AlignConfig(**al)

    lab = dict(_take(top["labels"], {"source", "dir", "ground_truth"}, "labels"))
    if lab.get("source") == "images":
        if "dir" not in lab:
            raise ConfigError("labels: source 'images' needs 'dir'")
        lab["dir"] = _require_file(_path(base, lab["dir"]), "label image directory")
    elif lab.get("source") == "oracle":
        if "ground_truth" not in lab:
            raise ConfigError("labels: source 'oracle' needs 'ground_truth'")
        lab["ground_truth"] = _require_file(_path(base, lab["ground_truth"]), "oracle ground truth")
    else:
        raise ConfigError(f"labels: unknown source {lab.get('source')!r}")

    fz = dict(_take(top.get("fuse", {}), {"eps", "min_samples", "knn", "rules"}, "fuse"))
    if fz.get("rules") is not None:
        fz["rules"] = _require_file(_path(base, fz["rules"]), "rule file")
    fuse = FuseConfig(**fz)
    sample = SampleConfig(**_take(top.get("sample", {}), {"k", "window_size", "bits", "oversample"}, "sample"))

    gt = top.get("ground_truth")
    return PipelineConfig(
        mesh=mesh, label_space=ls, labels=lab, output=_path(base, top["output"]), views=views,
        render=render, align=align, fuse=fuse, sample=sample,
        ground_truth=_require_file(_path(base, gt), "ground truth") if gt else None,
        seed=int(top.get("seed", 0)),
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, path.parent)


# ------------------------------------------------------------------- run

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_ground_truth(path: Path, label_space, n_vertices: int) -> np.ndarray:
    if path.suffix == ".ply":
        labels = io.load_labeled_cloud(path, label_space).labels
    else:
        labels = io.load_labels_txt(path)
    if len(labels) != n_vertices:
        raise ValidationError(f"{path}: {len(labels)} labels for {n_vertices} vertices")
    return labels


def _find_label_image(directory: Path, index: int) -> Path | None:
    for suffix in LABEL_IMAGE_SUFFIXES:
        p = directory / f"view_{index:02d}{suffix}"
        if p.exists():
            return p
    return None


class _Stages:
    def __init__(self, root: Path):
        self.root = root
        self.entries: list[dict] = []

    def record(self, name: str, paths: list[Path]) -> None:
        arts = [{"path": p.relative_to(self.root).as_posix(), "sha256": sha256_file(p)} for p in paths]
        self.entries.append({"name": name, "artifacts": arts})


def run_pipeline(config: PipelineConfig) -> Path:
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    label_space = io.load_label_space(config.label_space)
    stages = _Stages(out)
    mesh = io.load_mesh(config.mesh)

    # ---- align
    stage = "align"
    try:
        info: dict = {"pca_rotation": np.eye(3).tolist(), "trace": [], "reasons": []}
        if config.align.enabled:
            mesh, rot = align_pca(mesh)
            info["pca_rotation"] = rot.tolist()
            estimator = _make_estimator(config.align.keypoints)
            if estimator is not None:
                res = correct_orientation(mesh, estimator, max_iters=config.align.max_iters)
                mesh = res.mesh
                info.update(trace=[r.tolist() for r in res.trace], reasons=res.reasons,
                            ear_confidence=res.ear_confidence, converged=res.converged)
        io.save_mesh(mesh, out / "aligned.ply")
        _write_json(info, out / "align.json")
        stages.record(stage, [out / "aligned.ply", out / "align.json"])

        # ---- render
        stage = "render"
        vdir = out / "views"
        vdir.mkdir(exist_ok=True)
        views = config.view_specs()
        center, radius = bounding_sphere(mesh.vertices)
        buffers, paths = [], []
        visible = np.zeros(mesh.n_vertices, dtype=bool)
        for i, view in enumerate(views):
            b = rasterize_with_camera(mesh, Camera.from_view(view, center, radius))
            buffers.append(b)
            tid = np.unique(b.triangle_id[b.triangle_id >= 0])
            visible[mesh.triangles[tid].ravel()] = True
            stem = vdir / f"view_{i:02d}"
            save_buffers(b, stem.with_suffix(".tid"), stem.with_suffix(".depth"))
            save_preview(b, stem.with_suffix(".pgm"))
            paths += [stem.with_suffix(s) for s in (".tid", ".depth", ".pgm")]
        _write_json([v.to_json() for v in views], vdir / "views.json")
        io.save_labels_txt(visible.astype(np.int64), out / "visible.txt")
        stages.record(stage, paths + [vdir / "views.json", out / "visible.txt"])

        # ---- fuse
        stage = "fuse"
        label_images = _label_images(config, mesh, buffers, label_space, out)
        votes = accumulate_votes(mesh, zip(buffers, label_images), len(label_space))
        fused = finalize_labels(mesh, votes, label_space)
        io.save_labeled_cloud(fused, out / "fused.ply")
        stages.record(stage, [out / "fused.ply", io.sidecar_path(out / "fused.ply")])

        # ---- denoise
        stage = "denoise"
        params = DbscanParams(config.fuse.eps, config.fuse.min_samples, config.fuse.knn)
        clean = denoise_labels(fused, params)
        if config.fuse.rules is not None:
            clean = apply_rules(clean, load_rules(config.fuse.rules, label_space))
        io.save_labeled_cloud(clean, out / "denoised.ply")
        stages.record(stage, [out / "denoised.ply", io.sidecar_path(out / "denoised.ply")])

        # ---- sample
        stage = "sample"
        sc = config.sample
        part = partition(clean.points, sc.window_size, sc.bits)
        weights = {label_space.index(k): float(v) for k, v in sc.oversample.items()}
        plan = build_plan(part, min(sc.k, len(clean)), clean.labels if weights else None, weights or None)
        chosen = fps_windowed(clean.points, part, plan)
        sampled = clean.subset(chosen)
        io.save_labeled_cloud(sampled, out / "sampled.ply")
        io.save_labels_txt(chosen, out / "sampled_indices.txt")
        stages.record(stage, [out / "sampled.ply", io.sidecar_path(out / "sampled.ply"),
                              out / "sampled_indices.txt"])

        manifest = {"version": CONFIG_VERSION, "seed": config.seed, "stages": stages.entries}
        stage = "evaluate"
        if config.ground_truth is not None:
            gt_labels = _load_ground_truth(config.ground_truth, label_space, mesh.n_vertices)
            gt = LabeledCloud(mesh.vertices, gt_labels, label_space)
            report = evaluate(confusion(gt, clean)).to_json()
            report["visible_agreement"] = float((clean.labels == gt_labels)[visible].mean()) if visible.any() else None
            report["fused_visible_agreement"] = float((fused.labels == gt_labels)[visible].mean()) if visible.any() else None
            _write_json(report, out / "report.json")
            manifest["report"] = {"path": "report.json", "sha256": sha256_file(out / "report.json")}
    except (StageError, ConfigError):
        raise
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc

    _write_json(manifest, out / "manifest.json")
    return out


def _make_estimator(kp: dict):
    src = kp.get("source", "none")
    if src == "none":
        return None
    if src == "oracle":
        return SyntheticPoseEstimator(load_anchors(kp["path"]))
    if src == "file":
        return FileEstimator(kp["path"])
    return CommandEstimator(kp["command"])


def _label_images(config: PipelineConfig, mesh, buffers, label_space, out: Path) -> list[np.ndarray]:
    src = config.labels["source"]
    images = []
    if src == "images":
        directory = Path(config.labels["dir"])
        for i, b in enumerate(buffers):
            p = _find_label_image(directory, i)
            if p is None:
                raise StageError("fuse", f"missing label image for view {i} (view_{i:02d}.png) in {directory}")
            img = io.read_label_image(p)
            if img.shape != b.shape:
                raise StageError("fuse", f"view {i}: label image {p.name} is {img.shape}, render is {b.shape}")
            images.append(img)
        return images
    gt = _load_ground_truth(Path(config.labels["ground_truth"]), label_space, mesh.n_vertices)
    ldir = out / "labels"
    ldir.mkdir(exist_ok=True)
    for i, b in enumerate(buffers):
        img = oracle_label_image(mesh, b, gt)
        io.write_label_image(img, ldir / f"view_{i:02d}.png")
        images.append(img)
    return images
