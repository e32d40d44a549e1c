"""Command-line entry point: ``meshparse <subcommand> ...``.

Exit status is 0 on success, 2 when an input fails validation and 1 for any
other runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .model import ContractError, LabelSpace, LabeledCloud, confusion
from .workers import set_threads

log = logging.getLogger("meshparse")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


def _label_space(arg, labels=None) -> LabelSpace:
    if arg is not None:
        return io.load_label_space(arg)
    n = int(max((int(np.max(x, initial=0)) for x in labels), default=0)) + 1
    return LabelSpace("custom", ("background",) + tuple(f"class_{i}" for i in range(1, n)))


def _parse_weights(spec: str | None, space: LabelSpace) -> dict[int, float]:
    if not spec:
        return {}
    out = {}
    for item in spec.split(","):
        name, sep, value = item.rpartition("=")
        if not sep or not name:
            raise ContractError(f"bad oversample entry {item!r}; expected label=weight")
        key = int(name) if name.strip().isdigit() else name.strip()
        out[space.index(key)] = float(value)
    return out


# ------------------------------------------------------------ subcommands

def cmd_serialize(args) -> int:
    from .serialize import partition

    points = io.load_points(args.cloud)
    part = partition(points, args.window_size, args.bits)
    doc = {"order": part.order.tolist(), "windows": [list(w) for w in part.windows],
           "pad_count": part.pad_count}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
    summary = {"n_points": len(points), "n_windows": part.n_windows, "pad_count": part.pad_count}
    _emit(args, summary if args.out else doc,
          f"{len(points)} points in {part.n_windows} windows ({part.pad_count} pad slots)")
    return EXIT_OK


def cmd_sample(args) -> int:
    from .sample import build_plan, fps_windowed
    from .serialize import partition

    space = io.load_label_space(args.label_space)
    cloud = io.load_labeled_cloud(args.cloud, space)
    if args.k > len(cloud):
        raise ContractError(f"k={args.k} exceeds the {len(cloud)} points in {args.cloud}")
    weights = _parse_weights(args.oversample, space)
    part = partition(cloud.points, args.window_size, args.bits)
    plan = build_plan(part, args.k, cloud.labels if weights else None, weights or None)
    chosen = fps_windowed(cloud.points, part, plan)
    io.save_labeled_cloud(cloud.subset(chosen), args.out)
    if args.indices:
        io.save_labels_txt(chosen, args.indices)
    _emit(args, {"k": len(chosen), "windows": part.n_windows, "out": str(args.out)},
          f"sampled {len(chosen)} of {len(cloud)} points -> {args.out}")
    return EXIT_OK


def cmd_upsample(args) -> int:
    from .fuse import upsample_labels

    space = io.load_label_space(args.label_space)
    sampled = io.load_labeled_cloud(args.sampled, space)
    full = io.load_points(args.full)
    out = upsample_labels(sampled, full, args.k)
    io.save_labeled_cloud(out, args.out)
    _emit(args, {"n_points": len(out), "out": str(args.out)},
          f"propagated labels to {len(out)} points -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics import evaluate

    gt_labels = _read_labels(args.gt)
    pred_labels = _read_labels(args.pred)
    space = _label_space(args.label_space, [gt_labels, pred_labels])
    if len(gt_labels) != len(pred_labels):
        raise ContractError(f"{len(gt_labels)} ground-truth labels vs {len(pred_labels)} predictions")
    dummy = np.zeros((len(gt_labels), 3))
    report = evaluate(confusion(LabeledCloud(dummy, gt_labels, space), LabeledCloud(dummy, pred_labels, space)),
                      include_background=args.include_background)
    lines = [f"mIoU {report.miou:.2f}  fw mIoU {report.fw_miou:.2f}  Acc {report.acc:.2f}"]
    lines += [f"  {name:<16} {'-' if v is None else f'{v:.2f}'}" for name, v in report.per_class_iou]
    _emit(args, report.to_json(), "\n".join(lines))
    return EXIT_OK


def _read_labels(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".txt":
        return io.load_labels_txt(path)
    v = io.read_ply(path).get("vertex")
    if v is None or "label" not in v:
        raise io.MeshParseError(f"{path}: no per-vertex 'label' property")
    return np.asarray(v["label"], dtype=np.int64)


def cmd_render(args) -> int:
    from .render import Camera, ViewSpec, bounding_sphere, default_views, rasterize_with_camera, save_buffers, save_preview

    mesh = io.load_mesh(args.mesh)
    if args.views == "default":
        views = default_views(args.size, args.fov, args.distance)
    else:
        with open(args.views, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        views = [ViewSpec(float(v["azimuth"]), float(v["elevation"]), args.size, args.size, args.fov,
                          args.distance) for v in doc]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    center, radius = bounding_sphere(mesh.vertices)
    for i, view in enumerate(views):
        b = rasterize_with_camera(mesh, Camera.from_view(view, center, radius))
        stem = out / f"view_{i:02d}"
        save_buffers(b, stem.with_suffix(".tid"), stem.with_suffix(".depth"))
        save_preview(b, stem.with_suffix(".pgm"))
    with open(out / "views.json", "w", encoding="utf-8") as fh:
        json.dump([v.to_json() for v in views], fh, indent=2)
    _emit(args, {"views": len(views), "out": str(out)}, f"rendered {len(views)} views -> {out}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    from .fuse import DbscanParams, accumulate_votes, apply_rules, denoise_labels, finalize_labels, load_rules
    from .pipeline import _find_label_image
    from .render import load_buffers

    mesh = io.load_mesh(args.mesh)
    space = io.load_label_space(args.label_space)
    vdir = Path(args.views_dir)
    ldir = Path(args.labels_dir) if args.labels_dir else vdir
    ids = sorted(vdir.glob("view_*.tid"))
    if not ids:
        raise ContractError(f"no view_XX.tid buffers in {vdir}")
    views = []
    for tid_path in ids:
        index = int(tid_path.stem.split("_")[1])
        img_path = _find_label_image(ldir, index)
        if img_path is None:
            raise ContractError(f"missing label image for view {index} in {ldir}")
        views.append((load_buffers(tid_path), io.read_label_image(img_path)))
    fused = finalize_labels(mesh, accumulate_votes(mesh, views, len(space)), space)
    if not args.no_denoise:
        fused = denoise_labels(fused, DbscanParams(args.eps, args.min_samples, args.knn))
    if args.rules:
        fused = apply_rules(fused, load_rules(args.rules, space))
    io.save_labeled_cloud(fused, args.out)
    _emit(args, {"views": len(views), "n_points": len(fused), "out": str(args.out)},
          f"fused {len(views)} views onto {len(fused)} vertices -> {args.out}")
    return EXIT_OK


def cmd_align(args) -> int:
    from .align import CommandEstimator, FileEstimator, align_pca, correct_orientation
    from .synth import SyntheticPoseEstimator, load_anchors

    mesh = io.load_mesh(args.mesh)
    payload: dict = {}
    if not args.no_pca:
        mesh, rot = align_pca(mesh)
        payload["pca_rotation"] = rot.tolist()
    estimator = None
    if args.anchors:
        estimator = SyntheticPoseEstimator(load_anchors(args.anchors))
    elif args.keypoints_from:
        src = args.keypoints_from
        estimator = FileEstimator(src) if Path(src).is_file() else CommandEstimator(src)
    if estimator is not None:
        res = correct_orientation(mesh, estimator, max_iters=args.max_iters)
        mesh = res.mesh
        payload.update(reasons=res.reasons, ear_confidence=res.ear_confidence, converged=res.converged,
                       rotation=res.rotation.tolist())
    io.save_mesh(mesh, args.out)
    payload["out"] = str(args.out)
    _emit(args, payload, f"aligned mesh -> {args.out}"
          + (f" ({len(payload['reasons'])} corrections)" if "reasons" in payload else ""))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import export_dataset

    config = export_dataset(args.out, args.seed, args.tessellation, args.size)
    mesh = io.load_mesh(config.parent / "mesh.ply")
    _emit(args, {"vertices": mesh.n_vertices, "triangles": mesh.n_triangles, "config": str(config)},
          f"humanoid seed {args.seed}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles -> {config}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .pipeline import load_config, run_pipeline

    config = load_config(args.config)
    out = run_pipeline(config)
    payload = {"output": str(out)}
    report = out / "report.json"
    if report.exists():
        with open(report, "r", encoding="utf-8") as fh:
            payload["report"] = json.load(fh)
    text = f"pipeline complete -> {out}"
    if "report" in payload:
        r = payload["report"]
        text += f"\nmIoU {r['miou']:.2f}  fw mIoU {r['fw_miou']:.2f}  Acc {r['acc']:.2f}"
    _emit(args, payload, text)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_fps, speedup, write_csv

    rows = bench_fps(args.n, args.k, args.window_size, args.trials, args.seed)
    if args.csv:
        write_csv(rows, args.csv)
    ratio = speedup(rows)
    payload = {"rows": [r.__dict__ for r in rows], "speedup": ratio}
    text = "\n".join(f"{r.method:<9} {r.wall_time:9.3f} s  covering radius {r.covering_radius:.5f}" for r in rows)
    _emit(args, payload, text + f"\nspeedup {ratio:.1f}x")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    from .render import DEFAULT_DISTANCE, DEFAULT_FOV, DEFAULT_SIZE
    from .serialize import DEFAULT_BITS, DEFAULT_WINDOW_SIZE

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="meshparse", description="Per-vertex semantic parsing of human meshes.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("serialize", cmd_serialize, "Morton-order a point set and split it into windows")
    sp.add_argument("cloud")
    sp.add_argument("--bits", type=int, default=DEFAULT_BITS)
    sp.add_argument("--window-size", type=int, default=DEFAULT_WINDOW_SIZE)
    sp.add_argument("--out")

    sp = add("align", cmd_align, "canonicalize mesh orientation")
    sp.add_argument("mesh")
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-iters", type=int, default=10)
    sp.add_argument("--keypoints-from", help="keypoint JSON file, or a command that is passed a preview image")
    sp.add_argument("--anchors", help="synthetic anchor file; use the visibility oracle as the estimator")
    sp.add_argument("--no-pca", action="store_true")

    sp = add("render", cmd_render, "rasterize triangle-ID and depth buffers")
    sp.add_argument("mesh")
    sp.add_argument("--out", required=True)
    sp.add_argument("--views", default="default", help="'default' or a JSON list of {azimuth, elevation}")
    sp.add_argument("--size", type=int, default=DEFAULT_SIZE)
    sp.add_argument("--fov", type=float, default=DEFAULT_FOV)
    sp.add_argument("--distance", type=float, default=DEFAULT_DISTANCE)

    sp = add("fuse", cmd_fuse, "back-project label images onto mesh vertices")
    sp.add_argument("mesh")
    sp.add_argument("--views-dir", required=True)
    sp.add_argument("--labels-dir", help="label images view_XX.png (default: --views-dir)")
    sp.add_argument("--label-space", required=True)
    sp.add_argument("--eps", type=float, default=0.03)
    sp.add_argument("--min-samples", type=int, default=100)
    sp.add_argument("--knn", type=int, default=40)
    sp.add_argument("--rules")
    sp.add_argument("--no-denoise", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("sample", cmd_sample, "windowed farthest point sampling")
    sp.add_argument("cloud")
    sp.add_argument("--label-space", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--window-size", type=int, default=DEFAULT_WINDOW_SIZE)
    sp.add_argument("--bits", type=int, default=DEFAULT_BITS)
    sp.add_argument("--oversample", help="label=weight,...")
    sp.add_argument("--indices", help="also write chosen indices here")
    sp.add_argument("--out", required=True)

    sp = add("upsample", cmd_upsample, "propagate sampled labels to the full point set")
    sp.add_argument("sampled")
    sp.add_argument("full")
    sp.add_argument("--label-space", required=True)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "mIoU, fw mIoU and accuracy")
    sp.add_argument("gt")
    sp.add_argument("pred")
    sp.add_argument("--label-space")
    sp.add_argument("--include-background", action=argparse.BooleanOptionalAction, default=True)

    sp = add("pipeline", cmd_pipeline, "run every stage from a JSON config")
    sp.add_argument("config")

    sp = add("synth", cmd_synth, "generate a labeled synthetic humanoid and its oracle inputs")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tessellation", type=int, default=160)
    sp.add_argument("--size", type=int, default=DEFAULT_SIZE)

    sp = add("bench", cmd_bench, "time exact against windowed FPS")
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--k", type=int, default=10_000)
    sp.add_argument("--window-size", type=int, default=DEFAULT_WINDOW_SIZE)
    sp.add_argument("--trials", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv")
    return p


def main(argv=None) -> int:
    from .align import AlignmentError, EstimatorError
    from .pipeline import StageError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None:
            set_threads(args.threads)
        return args.func(args)
    except (ContractError, io.MeshParseError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        cause = exc.__cause__
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if isinstance(cause, (ContractError, io.MeshParseError, FileNotFoundError)) else EXIT_RUNTIME
    except (AlignmentError, EstimatorError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
