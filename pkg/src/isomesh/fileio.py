"""ASCII OBJ / PLY / XYZ readers and writers."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import TriangleMesh, as_cloud


class MeshFormatError(ValueError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = str(path)
        self.line = line


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _suffix(path) -> str:
    s = Path(path).suffix.lower()
    if s not in (".obj", ".ply", ".xyz", ".txt", ".pts"):
        raise ValueError(f"{path}: unsupported file extension {s!r}")
    return s


# --- OBJ ---------------------------------------------------------------------


def _read_obj(path, need_faces: bool):
    """Vertices and triangles; with ``need_faces`` False face records are skipped unchecked."""
    verts, faces = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise MeshFormatError(path, lineno, "vertex record needs 3 coordinates")
                try:
                    verts.append([float(t) for t in tok[1:4]])
                except ValueError:
                    raise MeshFormatError(path, lineno, "invalid vertex coordinate") from None
            elif tok[0] == "f" and need_faces:
                if len(tok) != 4:
                    raise MeshFormatError(path, lineno, f"non-triangular face with {len(tok) - 1} vertices")
                try:
                    idx = [int(t.split("/")[0]) for t in tok[1:]]
                except ValueError:
                    raise MeshFormatError(path, lineno, "invalid face index") from None
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                if min(idx) < 0:
                    raise MeshFormatError(path, lineno, "face index out of range")
                faces.append((idx, lineno))
    for idx, lineno in faces:
        if max(idx) >= len(verts):
            raise MeshFormatError(path, lineno, "face index out of range")
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array([i for i, _ in faces], dtype=np.int64).reshape(-1, 3)
    return v, f


def _write_obj(path, vertices, patches=None):
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in vertices]
    if patches is not None:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in patches]
    Path(path).write_text("\n".join(lines) + "\n")


# --- PLY ---------------------------------------------------------------------


def _read_ply(path):
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError(path, 1, "missing 'ply' magic")
    n_v = n_f = 0
    current = None
    vprops: list[str] = []
    i = 1
    while True:
        if i >= len(lines):
            raise MeshFormatError(path, i, "unterminated header")
        tok = lines[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise MeshFormatError(path, i, "only ascii PLY is supported")
        elif tok[0] == "element":
            current = tok[1]
            if current == "vertex":
                n_v = int(tok[2])
            elif current == "face":
                n_f = int(tok[2])
        elif tok[0] == "property" and current == "vertex":
            vprops.append(tok[-1])
        elif tok[0] == "end_header":
            break
    try:
        cols = [vprops.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise MeshFormatError(path, i, "vertex element lacks x/y/z properties") from None
    verts = []
    for k in range(n_v):
        lineno = i + k + 1
        if i + k >= len(lines):
            raise MeshFormatError(path, lineno, "unexpected end of file in vertex list")
        tok = lines[i + k].split()
        try:
            verts.append([float(tok[c]) for c in cols])
        except (ValueError, IndexError):
            raise MeshFormatError(path, lineno, "invalid vertex record") from None
    i += n_v
    faces = []
    for k in range(n_f):
        lineno = i + k + 1
        if i + k >= len(lines):
            raise MeshFormatError(path, lineno, "unexpected end of file in face list")
        tok = lines[i + k].split()
        try:
            cnt = int(tok[0])
            idx = [int(t) for t in tok[1 : 1 + cnt]]
        except (ValueError, IndexError):
            raise MeshFormatError(path, lineno, "invalid face record") from None
        if cnt != 3 or len(idx) != 3:
            raise MeshFormatError(path, lineno, f"non-triangular face with {cnt} vertices")
        if min(idx) < 0 or max(idx) >= n_v:
            raise MeshFormatError(path, lineno, "face index out of range")
        faces.append(idx)
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _write_ply(path, vertices, patches=None):
    n_f = 0 if patches is None else len(patches)
    head = ["ply", "format ascii 1.0", f"element vertex {len(vertices)}",
            "property double x", "property double y", "property double z"]
    if n_f:
        head += [f"element face {n_f}", "property list uchar int vertex_indices"]
    head.append("end_header")
    body = [f"{_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in vertices]
    if n_f:
        body += [f"3 {a} {b} {c}" for a, b, c in patches]
    Path(path).write_text("\n".join(head + body) + "\n")


# --- XYZ ---------------------------------------------------------------------


def _read_xyz(path):
    pts = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.replace(",", " ").split()
            if not tok or tok[0].startswith("#"):
                continue
            if len(tok) < 3:
                raise MeshFormatError(path, lineno, "expected 3 coordinates")
            try:
                pts.append([float(t) for t in tok[:3]])
            except ValueError:
                raise MeshFormatError(path, lineno, "invalid coordinate") from None
    return np.array(pts, dtype=np.float64).reshape(-1, 3)


# --- public API --------------------------------------------------------------


def load_mesh(path) -> TriangleMesh:
    s = _suffix(path)
    if s == ".obj":
        v, f = _read_obj(path, need_faces=True)
    elif s == ".ply":
        v, f = _read_ply(path)
    else:
        raise ValueError(f"{path}: meshes must be OBJ or PLY")
    if len(f) == 0:
        raise MeshFormatError(path, 0, "file contains no faces")
    return TriangleMesh(v, f)


def save_mesh(mesh: TriangleMesh, path) -> None:
    s = _suffix(path)
    if s == ".obj":
        _write_obj(path, mesh.vertices, mesh.patches)
    elif s == ".ply":
        _write_ply(path, mesh.vertices, mesh.patches)
    else:
        raise ValueError(f"{path}: meshes must be saved as OBJ or PLY")


def load_cloud(path) -> np.ndarray:
    s = _suffix(path)
    if s == ".obj":
        v, _ = _read_obj(path, need_faces=False)
    elif s == ".ply":
        v, _ = _read_ply(path)
    else:
        v = _read_xyz(path)
    return as_cloud(v)


def save_cloud(cloud, path) -> None:
    pts = as_cloud(cloud)
    s = _suffix(path)
    if s == ".obj":
        _write_obj(path, pts)
    elif s == ".ply":
        _write_ply(path, pts)
    else:
        Path(path).write_text("".join(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in pts))
