"""Analytic test shapes: point clouds and matching ground-truth meshes."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh, build_icosphere, fibonacci_sample

SHAPES = ("sphere", "ellipsoid", "box")
ELLIPSOID_AXES = (1.0, 0.75, 0.5)
BOX_HALF = (1.0, 0.7, 0.5)


def _box_faces():
    # (normal axis, sign); face spans the other two axes
    return [(ax, s) for ax in range(3) for s in (-1.0, 1.0)]


def make_fixture(shape: str, count: int, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    """``count`` points on an analytic surface of size ``scale``.

    The sphere uses the deterministic Fibonacci lattice (all norms equal);
    the ellipsoid stretches that lattice along its axes; box points are
    uniform over the faces by area.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if shape == "sphere":
        return fibonacci_sample(scale, count)
    if shape == "ellipsoid":
        return fibonacci_sample(1.0, count) * (scale * np.asarray(ELLIPSOID_AXES))
    if shape == "box":
        half = scale * np.asarray(BOX_HALF)
        faces = _box_faces()
        areas = np.array([np.prod(np.delete(half, ax)) for ax, _ in faces])
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(faces), size=count, p=areas / areas.sum())
        pts = rng.uniform(-half, half, size=(count, 3))
        for k, (ax, s) in enumerate(faces):
            pts[pick == k, ax] = s * half[ax]
        return pts
    raise ValueError(f"unsupported shape {shape!r}; choose from {', '.join(SHAPES)}")


def fixture_truth(shape: str, scale: float = 1.0, frequency: int = 32) -> TriangleMesh:
    """Dense ground-truth mesh of the same surface :func:`make_fixture` samples."""
    if shape == "sphere":
        return build_icosphere(frequency, scale)
    if shape == "ellipsoid":
        s = build_icosphere(frequency, 1.0)
        return s.with_vertices(s.vertices * (scale * np.asarray(ELLIPSOID_AXES)))
    if shape == "box":
        return box_mesh(scale * np.asarray(BOX_HALF), frequency)
    raise ValueError(f"unsupported shape {shape!r}; choose from {', '.join(SHAPES)}")


def box_mesh(half, n: int = 8) -> TriangleMesh:
    """Closed box surface, each face an n x n grid of quads split into triangles (outward winding)."""
    half = np.asarray(half, dtype=np.float64)
    verts: dict = {}
    out_v: list = []
    tris: list = []

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in verts:
            verts[key] = len(out_v)
            out_v.append(p)
        return verts[key]

    t = np.linspace(-1.0, 1.0, n + 1)
    for ax, s in _box_faces():
        a, b = [i for i in range(3) if i != ax]
        grid = np.empty((n + 1, n + 1), dtype=np.int64)
        for i, x in enumerate(t):
            for j, y in enumerate(t):
                p = np.zeros(3)
                p[ax], p[a], p[b] = s * half[ax], x * half[a], y * half[b]
                grid[i, j] = vid(p)
        for i in range(n):
            for j in range(n):
                q = (grid[i, j], grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1])
                tris += [(q[0], q[1], q[2]), (q[0], q[2], q[3])]
    V = np.array(out_v)
    F = np.array(tris, dtype=np.int64)
    # orient each triangle outward (its normal must agree with the face axis)
    tri = V[F]
    nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", nrm, tri.mean(axis=1)) < 0
    F[flip] = F[flip][:, ::-1]
    return TriangleMesh(V, F)
