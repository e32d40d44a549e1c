import json

import numpy as np
import pytest

from meshparse import io
from meshparse.cli import main
from meshparse.model import LabeledCloud, LabelSpace


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def space_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("ls") / "space.json"
    io.save_label_space(LabelSpace("t", ("background", "a", "b")), p)
    return p


def test_evaluate_json(tmp_path, capsys, space_file):
    sp = io.load_label_space(space_file)
    pts = np.zeros((8, 3))
    io.save_labeled_cloud(LabeledCloud(pts, [1, 1, 1, 1, 2, 2, 2, 2], sp), tmp_path / "gt.ply")
    io.save_labeled_cloud(LabeledCloud(pts, [1, 1, 1, 2, 2, 2, 2, 1], sp), tmp_path / "pred.ply")
    code, out, _ = run(capsys, "evaluate", tmp_path / "gt.ply", tmp_path / "pred.ply", "--json",
                       "--no-include-background", "--label-space", space_file)
    assert code == 0
    doc = json.loads(out)
    assert doc["miou"] == pytest.approx(60.0) and doc["acc"] == pytest.approx(75.0)


def test_evaluate_length_mismatch_is_validation_error(tmp_path, capsys):
    (tmp_path / "a.txt").write_text("1\n2\n")
    (tmp_path / "b.txt").write_text("1\n")
    code, _, err = run(capsys, "evaluate", tmp_path / "a.txt", tmp_path / "b.txt")
    assert code == 2 and "error" in err


def test_missing_input_is_validation_error(tmp_path, capsys):
    code, _, _ = run(capsys, "render", tmp_path / "none.obj", "--out", tmp_path / "o")
    assert code == 2


def test_serialize(tmp_path, capsys, rng):
    io.save_mesh(_tiny_mesh(rng), tmp_path / "m.ply")
    code, out, _ = run(capsys, "serialize", tmp_path / "m.ply", "--bits", 10, "--window-size", 7, "--json")
    doc = json.loads(out)
    assert code == 0 and sorted(doc["order"]) == list(range(20)) and doc["pad_count"] == 1


def _tiny_mesh(rng):
    from meshparse.model import Mesh
    return Mesh(rng.random((20, 3)), rng.integers(0, 20, (30, 3)))


def test_sample_and_upsample(tmp_path, capsys, space_file, rng):
    sp = io.load_label_space(space_file)
    pts = rng.random((400, 3))
    io.save_labeled_cloud(LabeledCloud(pts, (pts[:, 0] > 0.5) + 1, sp), tmp_path / "c.ply")
    code, _, _ = run(capsys, "sample", tmp_path / "c.ply", "--label-space", space_file, "--k", 50,
                     "--window-size", 100, "--oversample", "a=2,b=1", "--out", tmp_path / "s.ply")
    assert code == 0
    assert len(io.load_labeled_cloud(tmp_path / "s.ply", sp)) == 50
    code, _, _ = run(capsys, "upsample", tmp_path / "s.ply", tmp_path / "c.ply", "--label-space", space_file,
                     "--out", tmp_path / "u.ply")
    up = io.load_labeled_cloud(tmp_path / "u.ply", sp)
    assert code == 0 and len(up) == 400
    assert (up.labels == (pts[:, 0] > 0.5) + 1).mean() > 0.9


def test_sample_bad_oversample_label(tmp_path, capsys, space_file, rng):
    sp = io.load_label_space(space_file)
    io.save_labeled_cloud(LabeledCloud(rng.random((10, 3)), [1] * 10, sp), tmp_path / "c.ply")
    code, _, err = run(capsys, "sample", tmp_path / "c.ply", "--label-space", space_file, "--k", 5,
                       "--oversample", "zebra=2", "--out", tmp_path / "s.ply")
    assert code == 2 and "zebra" in err


def test_synth_render_fuse_align_pipeline(tmp_path, capsys):
    data = tmp_path / "data"
    code, out, _ = run(capsys, "synth", "--out", data, "--tessellation", 40, "--size", 128, "--json")
    assert code == 0 and json.loads(out)["vertices"] > 0

    code, _, _ = run(capsys, "align", data / "mesh.ply", "--out", tmp_path / "aligned.ply",
                     "--anchors", data / "anchors.json")
    assert code == 0
    code, out, _ = run(capsys, "align", data / "mesh.ply", "--out", tmp_path / "a2.ply",
                       "--keypoints-from", data / "keypoints" / "view_00.json", "--json")
    assert code == 0 and json.loads(out)["reasons"] == []

    code, _, _ = run(capsys, "render", data / "mesh.ply", "--out", tmp_path / "views", "--size", 128)
    assert code == 0 and len(list((tmp_path / "views").glob("*.tid"))) == 12
    code, _, _ = run(capsys, "fuse", data / "mesh.ply", "--views-dir", tmp_path / "views",
                     "--labels-dir", data / "labels", "--label-space", data / "label_space.json",
                     "--min-samples", 5, "--out", tmp_path / "fused.ply")
    assert code == 0
    space = io.load_label_space(data / "label_space.json")
    fused = io.load_labeled_cloud(tmp_path / "fused.ply", space)
    gt = io.load_labels_txt(data / "ground_truth.labels.txt")
    assert (fused.labels == gt).mean() > 0.85

    code, out, _ = run(capsys, "pipeline", data / "pipeline.json", "--json")
    assert code == 0 and "report" in json.loads(out)


def test_pipeline_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"version": 1, "bogus": 1}))
    code, _, err = run(capsys, "pipeline", tmp_path / "c.json")
    assert code == 2 and "bogus" in err


def test_pipeline_runtime_failure_exit_code(tmp_path, capsys):
    data = tmp_path / "d"
    run(capsys, "synth", "--out", data, "--tessellation", 30, "--size", 64)
    (data / "labels" / "view_02.png").unlink()
    code, _, err = run(capsys, "pipeline", data / "pipeline.json")
    assert code == 1 and "view 2" in err


def test_bench_csv(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "--n", 3000, "--k", 300, "--window-size", 500, "--trials", 1,
                       "--csv", tmp_path / "b.csv", "--threads", 1)
    assert code == 0 and "speedup" in out
    assert (tmp_path / "b.csv").read_text().startswith("method,")


def test_console_script_help():
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "meshparse.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("align", "render", "fuse", "sample", "upsample", "evaluate", "pipeline", "synth", "bench"):
        assert cmd in proc.stdout
