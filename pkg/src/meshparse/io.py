"""Reading and writing meshes, labeled clouds, label spaces and label images.

Supported inputs are ASCII OBJ and ASCII or binary PLY. Labeled clouds are
written as binary little-endian PLY (``x y z`` float32, ``red green blue``
uint8, ``label`` uint16) next to a ``.labels.txt`` sidecar with one decimal
label index per line.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .model import BUILTIN_LABEL_SPACES, LabeledCloud, LabelSpace, Mesh, ValidationError
from .palette import colors_for


class MeshParseError(ValueError):
    """Malformed mesh or cloud file. The message names the offending line or byte offset."""


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


# --------------------------------------------------------------------- OBJ

def _parse_obj(path: Path) -> Mesh:
    vertices: list[list[float]] = []
    triangles: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshParseError(f"{path}:{lineno}: bad vertex {line.strip()!r}") from None
                if len(vertices[-1]) != 3:
                    raise MeshParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    try:
                        i = int(tok.split("/")[0])
                    except ValueError:
                        raise MeshParseError(f"{path}:{lineno}: bad face index {tok!r}") from None
                    if i == 0:
                        raise MeshParseError(f"{path}:{lineno}: OBJ indices are 1-based, got 0")
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                if len(idx) < 3:
                    raise MeshParseError(f"{path}:{lineno}: face needs at least 3 vertices")
                # fan triangulation keeps file order
                for j in range(1, len(idx) - 1):
                    triangles.append((idx[0], idx[j], idx[j + 1]))
    if not vertices:
        raise MeshParseError(f"{path}: no vertices")
    return Mesh(np.array(vertices), np.array(triangles, dtype=np.int64).reshape(-1, 3))


def _write_obj(mesh: Mesh, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in (mesh.triangles + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")


# --------------------------------------------------------------------- PLY

def _read_ply_header(fh, path):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise MeshParseError(f"{path}:1: missing 'ply' magic")
    fmt = None
    elements = []  # (name, count, [(prop, dtype) | (prop, (count_dtype, item_dtype))])
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise MeshParseError(f"{path}:{lineno}: header not terminated by end_header")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "format":
            fmt = parts[1]
            if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise MeshParseError(f"{path}:{lineno}: unsupported format {fmt!r}")
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshParseError(f"{path}:{lineno}: property before any element")
            try:
                if parts[1] == "list":
                    elements[-1][2].append((parts[4], (_PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
                else:
                    elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            except (KeyError, IndexError):
                raise MeshParseError(f"{path}:{lineno}: bad property line {raw.strip()!r}") from None
        else:
            raise MeshParseError(f"{path}:{lineno}: unexpected header line {raw.strip()!r}")
    if fmt is None:
        raise MeshParseError(f"{path}: missing format line")
    return fmt, elements, lineno


def _read_ply_ascii(fh, path, elements, lineno):
    out = {}
    for name, count, props in elements:
        cols: dict[str, list] = {p: [] for p, _ in props}
        for _ in range(count):
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise MeshParseError(f"{path}:{lineno}: unexpected end of file in element {name!r}")
            toks = raw.split()
            pos = 0
            try:
                for prop, dt in props:
                    if isinstance(dt, tuple):
                        n = int(toks[pos])
                        cols[prop].append([int(t) for t in toks[pos + 1:pos + 1 + n]])
                        if len(cols[prop][-1]) != n:
                            raise IndexError
                        pos += 1 + n
                    else:
                        cols[prop].append(float(toks[pos]))
                        pos += 1
            except (ValueError, IndexError):
                raise MeshParseError(f"{path}:{lineno}: malformed {name!r} row {raw.strip()!r}") from None
        out[name] = {
            p: (v if isinstance(dt, tuple) else np.array(v, dtype=dt))
            for (p, dt), v in ((pd, cols[pd[0]]) for pd in props)
        }
    return out


def _read_ply_binary(buf: bytes, offset: int, path, elements, endian: str):
    out = {}
    for name, count, props in elements:
        has_list = any(isinstance(dt, tuple) for _, dt in props)
        if not has_list:
            dtype = np.dtype([(p, endian + dt) for p, dt in props])
            need = dtype.itemsize * count
            if offset + need > len(buf):
                raise MeshParseError(f"{path}: byte offset {offset}: truncated element {name!r}")
            arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
            out[name] = {p: arr[p].copy() for p, _ in props}
            offset += need
            continue
        out[name], offset = _read_binary_list_element(buf, offset, path, name, count, props, endian)
    return out


def _read_binary_list_element(buf, offset, path, name, count, props, endian):
    # fast path: a single list property whose rows all have the same length
    if len(props) == 1 and count > 0:
        prop, (cdt, idt) = props[0]
        cdt, idt = np.dtype(endian + cdt), np.dtype(endian + idt)
        n = int(np.frombuffer(buf, dtype=cdt, count=1, offset=offset)[0])
        dtype = np.dtype([("n", cdt), ("v", idt, (n,))])
        if offset + dtype.itemsize * count <= len(buf):
            arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
            if (arr["n"] == n).all():
                return {prop: arr["v"].astype(np.int64)}, offset + dtype.itemsize * count
    cols: dict[str, list] = {p: [] for p, _ in props}
    for _ in range(count):
        for prop, dt in props:
            if isinstance(dt, tuple):
                cdt, idt = np.dtype(endian + dt[0]), np.dtype(endian + dt[1])
                if offset + cdt.itemsize > len(buf):
                    raise MeshParseError(f"{path}: byte offset {offset}: truncated element {name!r}")
                n = int(np.frombuffer(buf, dtype=cdt, count=1, offset=offset)[0])
                offset += cdt.itemsize
                if offset + n * idt.itemsize > len(buf):
                    raise MeshParseError(f"{path}: byte offset {offset}: truncated element {name!r}")
                cols[prop].append(np.frombuffer(buf, dtype=idt, count=n, offset=offset).tolist())
                offset += n * idt.itemsize
            else:
                d = np.dtype(endian + dt)
                if offset + d.itemsize > len(buf):
                    raise MeshParseError(f"{path}: byte offset {offset}: truncated element {name!r}")
                cols[prop].append(np.frombuffer(buf, dtype=d, count=1, offset=offset)[0])
                offset += d.itemsize
    return cols, offset


def read_ply(path) -> dict[str, dict[str, object]]:
    """Parse a PLY file into ``{element: {property: values}}``."""
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements, lineno = _read_ply_header(fh, path)
        if fmt == "ascii":
            return _read_ply_ascii(fh, path, elements, lineno)
        offset = fh.tell()
        fh.seek(0)
        buf = fh.read()
    return _read_ply_binary(buf, offset, path, elements, "<" if fmt == "binary_little_endian" else ">")


def _faces_to_triangles(faces, path) -> np.ndarray:
    if isinstance(faces, np.ndarray):
        if faces.ndim == 2 and faces.shape[1] == 3:
            return faces.astype(np.int64)
        faces = faces.tolist()
    tris = []
    for k, f in enumerate(faces):
        f = list(f)
        if len(f) < 3:
            raise MeshParseError(f"{path}: face {k} has {len(f)} vertices")
        for j in range(1, len(f) - 1):
            tris.append((f[0], f[j], f[j + 1]))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def _parse_ply_mesh(path: Path) -> Mesh:
    data = read_ply(path)
    if "vertex" not in data:
        raise MeshParseError(f"{path}: no vertex element")
    v = data["vertex"]
    try:
        vertices = np.column_stack([np.asarray(v[c], dtype=np.float64) for c in ("x", "y", "z")])
    except KeyError:
        raise MeshParseError(f"{path}: vertex element lacks x/y/z") from None
    triangles = np.zeros((0, 3), dtype=np.int64)
    face = data.get("face")
    if face:
        key = "vertex_indices" if "vertex_indices" in face else "vertex_index"
        if key not in face:
            raise MeshParseError(f"{path}: face element lacks vertex_indices")
        triangles = _faces_to_triangles(face[key], path)
    return Mesh(vertices, triangles)


def _write_ply_mesh(mesh: Mesh, path: Path) -> None:
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    faces = np.empty(mesh.n_triangles, dtype=[("n", "u1"), ("v", "<i4", (3,))])
    faces["n"] = 3
    faces["v"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f8").tobytes())
        fh.write(faces.tobytes())


def _detect_format(path: Path, fmt: str | None) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in ("obj", "ply"):
        raise MeshParseError(f"{path}: unsupported mesh format {fmt!r} (expected obj or ply)")
    return fmt


def load_mesh(path, format: str | None = None) -> Mesh:
    """Load an OBJ or PLY mesh, keeping the file's triangle order."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if _detect_format(path, format) == "obj":
        return _parse_obj(path)
    return _parse_ply_mesh(path)


def save_mesh(mesh: Mesh, path, format: str | None = None) -> None:
    path = Path(path)
    if _detect_format(path, format) == "obj":
        _write_obj(mesh, path)
    else:
        _write_ply_mesh(mesh, path)


# ------------------------------------------------------------ labeled clouds

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels.txt")


def save_labeled_cloud(cloud: LabeledCloud, path) -> None:
    path = Path(path)
    n = len(cloud)
    rec = np.empty(n, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                             ("red", "u1"), ("green", "u1"), ("blue", "u1"), ("label", "<u2")])
    rec["x"], rec["y"], rec["z"] = cloud.points.T.astype(np.float32)
    rgb = colors_for(cloud.labels)
    rec["red"], rec["green"], rec["blue"] = rgb.T
    rec["label"] = cloud.labels
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"comment label_space {cloud.label_space.name}\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "property ushort label\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())
    with open(sidecar_path(path), "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(f"{int(x)}\n" for x in cloud.labels))


def load_labeled_cloud(path, label_space: LabelSpace) -> LabeledCloud:
    path = Path(path)
    v = read_ply(path).get("vertex")
    if v is None or "label" not in v:
        raise MeshParseError(f"{path}: no per-vertex 'label' property")
    points = np.column_stack([np.asarray(v[c], dtype=np.float64) for c in ("x", "y", "z")])
    return LabeledCloud(points, np.asarray(v["label"], dtype=np.int64), label_space)


def load_labels_txt(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        return np.array([int(s) for s in fh.read().split()], dtype=np.int64)


def save_labels_txt(labels, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(f"{int(x)}\n" for x in labels))


def load_points(path) -> np.ndarray:
    """Vertex positions of any supported mesh or cloud file."""
    return load_mesh(path).vertices


# -------------------------------------------------------------- label spaces

def load_label_space(source) -> LabelSpace:
    """A built-in label space by name, or a JSON file ``{"name": ..., "labels": [...]}``."""
    if isinstance(source, LabelSpace):
        return source
    if str(source) in BUILTIN_LABEL_SPACES:
        return BUILTIN_LABEL_SPACES[str(source)]
    with open(source, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "labels" not in doc:
        raise ValidationError(f"{source}: expected an object with 'name' and 'labels'")
    return LabelSpace(str(doc.get("name", "custom")), tuple(doc["labels"]))


def save_label_space(space: LabelSpace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"name": space.name, "labels": list(space.labels)}, fh, indent=2)
        fh.write("\n")


# -------------------------------------------------------------- label images

def read_label_image(path) -> np.ndarray:
    """8-bit PNG or PGM where each pixel value is a label index."""
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "I", "I;16"):
            raise ValidationError(f"{path}: label image must be single-channel, got mode {im.mode}")
        return np.asarray(im, dtype=np.int64).copy()


def write_label_image(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValidationError("label images hold 8-bit label indices")
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)

