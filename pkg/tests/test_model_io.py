import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshparse import io
from meshparse.model import (CIHP, SAPIENS_V1, SAPIENS_V2, ContractError, LabeledCloud, LabelSpace, Mesh,
                             ValidationError, confusion)
from meshparse.palette import colors_for
from oracles import confusion_by_pairs

SPACE = LabelSpace("t", ("background", "a", "b"))


def test_mesh_rejects_out_of_range_index():
    with pytest.raises(ValidationError, match="vertex"):
        Mesh(np.zeros((3, 3)), [[0, 1, 5]])


def test_mesh_requires_vertices():
    with pytest.raises(ValidationError):
        Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))


def test_mesh_arrays_are_read_only():
    m = Mesh(np.eye(3), [[0, 1, 2]])
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


def test_label_space_invariants():
    with pytest.raises(ValidationError):
        LabelSpace("x", ("a", "background"))
    with pytest.raises(ValidationError):
        LabelSpace("x", ("background", "a", "a"))
    assert SPACE.index("b") == 2 and SPACE.index("1") == 1 and SPACE.index(2) == 2
    with pytest.raises(ContractError):
        SPACE.index("nope")


def test_builtin_label_spaces():
    assert len(CIHP) == 20
    assert len(SAPIENS_V1) == 15
    assert SAPIENS_V2.labels[-3:] == ("lip", "teeth", "tongue")


def test_labeled_cloud_checks_range():
    with pytest.raises(ValidationError):
        LabeledCloud(np.zeros((2, 3)), [0, 3], SPACE)
    with pytest.raises(ValidationError):
        LabeledCloud(np.zeros((2, 3)), [0], SPACE)


# ---------------------------------------------------------------- confusion

def _cloud(labels):
    return LabeledCloud(np.zeros((len(labels), 3)), labels, SPACE)


def test_confusion_diagonal():
    cm = confusion(_cloud([1, 1, 2]), _cloud([1, 1, 2]))
    expected = np.zeros((3, 3), dtype=int)
    expected[1, 1], expected[2, 2] = 2, 1
    np.testing.assert_array_equal(cm.counts, expected)


def test_confusion_off_diagonal():
    cm = confusion(_cloud([1, 1, 2, 2]), _cloud([1, 2, 2, 1]))
    assert cm.counts[1, 1] == cm.counts[1, 2] == cm.counts[2, 2] == cm.counts[2, 1] == 1
    assert cm.total == 4


def test_confusion_empty():
    cm = confusion(_cloud([]), _cloud([]))
    assert cm.total == 0 and cm.counts.shape == (3, 3)


def test_confusion_rejects_mismatched_spaces():
    other = LabeledCloud(np.zeros((1, 3)), [0], LabelSpace("u", ("background", "a", "b")))
    with pytest.raises(ContractError):
        confusion(_cloud([0]), other)


@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), max_size=60))
def test_confusion_matches_pair_count(pairs):
    gt = [g for g, _ in pairs]
    pred = [p for _, p in pairs]
    cm = confusion(_cloud(gt), _cloud(pred))
    np.testing.assert_array_equal(cm.counts, confusion_by_pairs(gt, pred, 3))
    assert cm.total == len(pairs)


# ---------------------------------------------------------------------- OBJ

def test_minimal_obj(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = io.load_mesh(p)
    assert m.n_vertices == 3 and m.n_triangles == 1


def test_obj_bad_index_is_validation_error(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n")
    with pytest.raises(ContractError):
        io.load_mesh(p)


def test_obj_quads_negative_indices_and_slashes(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf -4//1 -3//1 -2//1 -1//1\n")
    m = io.load_mesh(p)
    np.testing.assert_array_equal(m.triangles, [[0, 1, 2], [0, 2, 3]])


def test_obj_garbage_reports_line(tmp_path):
    p = tmp_path / "g.obj"
    p.write_text("v 0 0 0\nv 1 zero 0\n")
    with pytest.raises(io.MeshParseError, match="2"):
        io.load_mesh(p)


def _random_mesh(rng, n=10_000, m=20_000):
    return Mesh(rng.normal(size=(n, 3)), rng.integers(0, n, size=(m, 3)))


@pytest.mark.parametrize("suffix", [".obj", ".ply"])
def test_round_trip_10k(tmp_path, rng, suffix):
    mesh = _random_mesh(rng)
    path = tmp_path / f"m{suffix}"
    io.save_mesh(mesh, path)
    back = io.load_mesh(path)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)


# ---------------------------------------------------------------------- PLY

def test_ascii_ply_with_quads(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text(
        "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 4\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
    )
    m = io.load_mesh(p)
    np.testing.assert_array_equal(m.triangles, [[0, 1, 2], [0, 2, 3]])


@pytest.mark.parametrize("endian,fmt", [("<", "binary_little_endian"), (">", "binary_big_endian")])
def test_binary_ply_both_endians(tmp_path, endian, fmt):
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=f"{endian}f4")
    face = np.zeros(1, dtype=[("n", "u1"), ("i", f"{endian}i4", (3,))])
    face["n"], face["i"] = 3, [0, 1, 2]
    head = (f"ply\nformat {fmt} 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
            "property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n")
    p = tmp_path / "b.ply"
    p.write_bytes(head.encode() + verts.tobytes() + face.tobytes())
    m = io.load_mesh(p)
    np.testing.assert_array_equal(m.vertices, verts.astype(float))
    np.testing.assert_array_equal(m.triangles, [[0, 1, 2]])


def test_truncated_binary_ply(tmp_path):
    head = ("ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\n"
            "property float y\nproperty float z\nend_header\n")
    p = tmp_path / "t.ply"
    p.write_bytes(head.encode() + b"\0" * 20)
    with pytest.raises(io.MeshParseError):
        io.read_ply(p)


# ----------------------------------------------------------- labeled clouds

def test_single_point_cloud(tmp_path):
    c = LabeledCloud([[1.0, 2.0, 3.0]], [0], SPACE)
    io.save_labeled_cloud(c, tmp_path / "one.ply")
    v = io.read_ply(tmp_path / "one.ply")["vertex"]
    assert len(v["label"]) == 1 and int(v["label"][0]) == 0
    assert (tmp_path / "one.labels.txt").read_text() == "0\n"


def test_labeled_cloud_round_trip(tmp_path, rng):
    c = LabeledCloud(rng.random((500, 3)), rng.integers(0, 3, 500), SPACE)
    io.save_labeled_cloud(c, tmp_path / "c.ply")
    back = io.load_labeled_cloud(tmp_path / "c.ply", SPACE)
    np.testing.assert_array_equal(back.labels, c.labels)
    np.testing.assert_allclose(back.points, c.points, atol=1e-6)  # float32 on disk
    np.testing.assert_array_equal(io.load_labels_txt(tmp_path / "c.labels.txt"), c.labels)


def test_palette_is_deterministic(tmp_path):
    c = LabeledCloud(np.zeros((20, 3)), np.arange(20) % 3, SPACE)
    io.save_labeled_cloud(c, tmp_path / "a.ply")
    io.save_labeled_cloud(c, tmp_path / "b.ply")
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()
    np.testing.assert_array_equal(colors_for([0, 1, 64]), colors_for([0, 1, 0])[[0, 1, 0]])


def test_label_space_file_round_trip(tmp_path):
    io.save_label_space(SPACE, tmp_path / "ls.json")
    assert io.load_label_space(tmp_path / "ls.json") == SPACE
    assert io.load_label_space("cihp") is CIHP


def test_label_image_round_trip(tmp_path, rng):
    img = rng.integers(0, 20, size=(7, 9))
    io.write_label_image(img, tmp_path / "l.png")
    np.testing.assert_array_equal(io.read_label_image(tmp_path / "l.png"), img)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)),
                min_size=3, max_size=30))
def test_obj_round_trip_is_exact(tmp_path_factory, verts):
    v = np.array(verts)
    m = Mesh(v, [[0, 1, 2]])
    p = tmp_path_factory.mktemp("h") / "m.obj"
    io.save_mesh(m, p)
    np.testing.assert_array_equal(io.load_mesh(p).vertices, v)
