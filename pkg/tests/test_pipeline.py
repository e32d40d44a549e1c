import json
import shutil

import numpy as np
import pytest

from meshparse import io
from meshparse.pipeline import ConfigError, StageError, load_config, parse_config, run_pipeline, sha256_file


def _edit(config_path, tmp_path, **changes):
    """Copy a dataset config next to its data with top-level keys replaced."""
    doc = json.loads(config_path.read_text())
    doc.update(changes)
    out = config_path.parent / f"cfg_{tmp_path.name}.json"
    out.write_text(json.dumps(doc))
    return out


@pytest.fixture(scope="module")
def first_run(small_dataset):
    return run_pipeline(load_config(small_dataset))


def test_pipeline_writes_every_stage(first_run):
    manifest = json.loads((first_run / "manifest.json").read_text())
    assert [s["name"] for s in manifest["stages"]] == ["align", "render", "fuse", "denoise", "sample"]
    for stage in manifest["stages"]:
        for art in stage["artifacts"]:
            assert sha256_file(first_run / art["path"]) == art["sha256"]
    assert len(list((first_run / "views").glob("view_*.tid"))) == 12
    report = json.loads((first_run / "report.json").read_text())
    assert report["visible_agreement"] > 0.9
    assert manifest["report"]["sha256"] == sha256_file(first_run / "report.json")


def test_pipeline_is_byte_deterministic(small_dataset, first_run, tmp_path):
    cfg = _edit(small_dataset, tmp_path, output=str(tmp_path / "again"))
    again = run_pipeline(load_config(cfg))
    assert (again / "manifest.json").read_bytes() == (first_run / "manifest.json").read_bytes()


def test_missing_label_image_names_the_view(small_dataset, tmp_path):
    labels = tmp_path / "labels"
    shutil.copytree(small_dataset.parent / "labels", labels)
    (labels / "view_07.png").unlink()
    cfg = _edit(small_dataset, tmp_path, labels={"source": "images", "dir": str(labels)},
                output=str(tmp_path / "out"))
    with pytest.raises(StageError, match="view 7") as err:
        run_pipeline(load_config(cfg))
    assert err.value.stage == "fuse"


def test_oracle_label_source_and_sampling_options(small_dataset, tmp_path):
    cfg = _edit(small_dataset, tmp_path, labels={"source": "oracle", "ground_truth": "ground_truth.labels.txt"},
                sample={"k": 500, "window_size": 1000, "oversample": {"left hand": 3.0}},
                fuse={"min_samples": 10, "rules": str(tmp_path / "rules.json")}, output=str(tmp_path / "out"))
    (tmp_path / "rules.json").write_text(json.dumps(
        [{"from": "hair", "to": "face and neck", "where": "v_below", "fraction": 0.0}]))
    out = run_pipeline(load_config(cfg))
    assert len(list((out / "labels").glob("view_*.png"))) == 12
    space = io.load_label_space(small_dataset.parent / "label_space.json")
    sampled = io.load_labeled_cloud(out / "sampled.ply", space)
    assert len(sampled) == 500
    idx = io.load_labels_txt(out / "sampled_indices.txt")
    assert len(np.unique(idx)) == 500


def test_config_rejects_unknown_keys(small_dataset):
    doc = json.loads(small_dataset.read_text())
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({**doc, "colour": "red"}, small_dataset.parent)
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({**doc, "render": {"size": 64, "msaa": 4}}, small_dataset.parent)


def test_config_validates_version_and_files(small_dataset):
    doc = json.loads(small_dataset.read_text())
    with pytest.raises(ConfigError, match="version"):
        parse_config({**doc, "version": 2}, small_dataset.parent)
    with pytest.raises(ConfigError, match="not found"):
        parse_config({**doc, "mesh": "nope.ply"}, small_dataset.parent)
    with pytest.raises(ConfigError, match="missing"):
        parse_config({k: v for k, v in doc.items() if k != "labels"}, small_dataset.parent)
    with pytest.raises(ConfigError):
        parse_config({**doc, "labels": {"source": "magic"}}, small_dataset.parent)


def test_relative_paths_resolve_against_config(small_dataset):
    cfg = load_config(small_dataset)
    assert cfg.mesh == small_dataset.parent / "mesh.ply"
    assert cfg.output == small_dataset.parent / "run"
    assert len(cfg.view_specs()) == 12


def test_custom_views(small_dataset, tmp_path):
    cfg = _edit(small_dataset, tmp_path, views=[{"azimuth": 0, "elevation": 0}],
                labels={"source": "oracle", "ground_truth": "ground_truth.labels.txt"},
                output=str(tmp_path / "out"))
    out = run_pipeline(load_config(cfg))
    assert len(json.loads((out / "views" / "views.json").read_text())) == 1
