"""Reference-mesh construction, spherical partitioning and surface sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .spatial import TriangleIndex

log = logging.getLogger(__name__)

DEFAULT_TAU_A = 0.55


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TriangleMesh:
    """Vertex coordinates plus fixed triangle connectivity.

    ``base_faces`` is only set for meshes built by :func:`build_icosphere`;
    it lists the 20 icosahedron faces in terms of vertex indices 0..11.
    """

    vertices: np.ndarray
    patches: np.ndarray
    base_faces: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.patches, dtype=np.int64).reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (V, 3), got {v.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("patch index out of range")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "patches", _frozen(f))
        if self.base_faces is not None:
            object.__setattr__(self, "base_faces", _frozen(np.asarray(self.base_faces, dtype=np.int64)))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """Same connectivity, new coordinates."""
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise ValueError("vertex array shape must not change")
        return TriangleMesh(vertices, self.patches, self.base_faces)

    def edges(self) -> np.ndarray:
        e = np.concatenate([self.patches[:, [0, 1]], self.patches[:, [1, 2]], self.patches[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_patches

    def triangles(self) -> np.ndarray:
        return self.vertices[self.patches]


@dataclass(frozen=True)
class LocalRegion:
    """A patch of the reference mesh with per-vertex fusion weights."""

    vertex_indices: np.ndarray
    patch_indices: np.ndarray
    weights: np.ndarray
    anchor_index: Optional[int] = None

    def __post_init__(self):
        vi = np.asarray(self.vertex_indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if vi.shape != w.shape:
            raise ValueError("weights must align with vertex_indices")
        if w.size and (w.min() < 0.0 or w.max() > 1.0):
            raise ValueError("weights must lie in [0, 1]")
        object.__setattr__(self, "vertex_indices", _frozen(vi))
        object.__setattr__(self, "patch_indices", _frozen(np.asarray(self.patch_indices, dtype=np.int64)))
        object.__setattr__(self, "weights", _frozen(w))

    def __len__(self) -> int:
        return len(self.vertex_indices)


def as_cloud(points) -> np.ndarray:
    """Validate and return an (N, 3) float64 point array."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1 and p.size == 3:
        p = p.reshape(1, 3)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {p.shape}")
    if len(p) == 0:
        raise ValueError("point cloud is empty")
    if not np.all(np.isfinite(p)):
        raise ValueError("point cloud contains non-finite coordinates")
    return p


# ---------------------------------------------------------------------------
# icosphere


def _icosahedron():
    t = (1.0 + 5.0 ** 0.5) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v, f


def build_icosphere(frequency: int, radius: float = 1.0) -> TriangleMesh:
    """Geodesic icosphere: every icosahedron edge split into ``frequency`` segments.

    The result has ``10*n**2 + 2`` vertices and ``20*n**2`` patches. The 12
    icosahedron corners are vertices 0..11.
    """
    n = int(frequency)
    if n < 1:
        raise ValueError("frequency must be >= 1")
    base_v, base_f = _icosahedron()

    index: dict[tuple, int] = {(i, n): i for i in range(12)}
    coords = [base_v[i] for i in range(12)]

    def vertex_id(a, b, c, ia, ib, ic):
        key = tuple(sorted((vid, w) for vid, w in ((a, ia), (b, ib), (c, ic)) if w > 0))
        if len(key) == 1:
            key = key[0]
        vid = index.get(key)
        if vid is None:
            vid = len(coords)
            index[key] = vid
            coords.append((ia * base_v[a] + ib * base_v[b] + ic * base_v[c]) / n)
        return vid

    patches = []
    for a, b, c in base_f:
        # lattice point (i, j) = a + (b - a) i/n + (c - a) j/n
        grid = {}
        for i in range(n + 1):
            for j in range(n + 1 - i):
                grid[i, j] = vertex_id(a, b, c, n - i - j, i, j)
        for i in range(n):
            for j in range(n - i):
                patches.append((grid[i, j], grid[i + 1, j], grid[i, j + 1]))
                if i + j < n - 1:
                    patches.append((grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1]))

    v = np.array(coords)
    v *= radius / np.linalg.norm(v, axis=1, keepdims=True)
    return TriangleMesh(v, np.array(patches, dtype=np.int64), base_faces=base_f)


def icosphere_frequency(mesh: TriangleMesh) -> int:
    n = round(((mesh.n_vertices - 2) / 10) ** 0.5)
    if mesh.base_faces is None or 10 * n * n + 2 != mesh.n_vertices:
        raise ValueError("mesh was not produced by build_icosphere")
    return n


# ---------------------------------------------------------------------------
# coarse partition


def select_anchors(mesh: TriangleMesh) -> np.ndarray:
    """Return the 32 anchor vertices: 12 icosahedron corners + 20 face-ray vertices.

    For each icosahedron face the anchor is the vertex nearest to the ray from
    the origin through the face centroid (near-ties go to the lowest index). The 32
    indices are distinct for frequency >= 3; lower frequencies have no vertex
    strictly closer to a face ray than the face corners.
    """
    if mesh.base_faces is None or len(mesh.base_faces) != 20 or mesh.n_vertices < 12:
        raise ValueError("mesh was not produced by build_icosphere (base structure unknown)")
    v = mesh.vertices
    corners = v[:12]
    anchors = list(range(12))
    for face in mesh.base_faces:
        d = corners[face].mean(axis=0)
        d /= np.linalg.norm(d)
        along = v @ d
        perp = np.linalg.norm(v - along[:, None] * d, axis=1)
        dist = np.where(along > 0, perp, np.linalg.norm(v, axis=1))
        # symmetric ties (three vertices around a face centroid) go to the lowest index
        tol = 1e-9 * float(np.linalg.norm(v[0]))
        anchors.append(int(np.flatnonzero(dist <= dist.min() + tol)[0]))
    return np.array(anchors, dtype=np.int64)


def central_angles(vertices: np.ndarray, direction: np.ndarray) -> np.ndarray:
    vn = vertices / np.linalg.norm(vertices, axis=1, keepdims=True)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    return np.arccos(np.clip(vn @ d, -1.0, 1.0))


def patches_within(mesh: TriangleMesh, vertex_mask: np.ndarray) -> np.ndarray:
    """Indices of patches whose three vertices are all selected."""
    return np.flatnonzero(vertex_mask[mesh.patches].all(axis=1))


def partition_coarse(mesh: TriangleMesh, anchors, tau_a: float = DEFAULT_TAU_A) -> list[LocalRegion]:
    """Split the reference sphere into caps of central angle < ``tau_a`` around each anchor.

    Vertex weights are ``1 - angle / tau_a``.
    """
    if tau_a <= 0:
        raise ValueError("tau_a must be positive")
    regions = []
    covered = np.zeros(mesh.n_vertices, dtype=bool)
    for a in np.asarray(anchors, dtype=np.int64):
        ang = central_angles(mesh.vertices, mesh.vertices[a])
        mask = ang < tau_a
        covered |= mask
        idx = np.flatnonzero(mask)
        w = np.clip(1.0 - ang[idx] / tau_a, 0.0, 1.0)
        regions.append(LocalRegion(idx, patches_within(mesh, mask), w, anchor_index=int(a)))
    if not covered.all():
        missing = int((~covered).sum())
        raise ValueError(
            f"tau_a={tau_a} leaves {missing} vertices outside every region; increase tau_a"
        )
    return regions


# ---------------------------------------------------------------------------
# sampling


def fibonacci_sample(radius: float, count: int) -> np.ndarray:
    """``count`` quasi-uniform points on a sphere (golden-angle spiral)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * np.pi * (3.0 - 5.0 ** 0.5)
    return radius * np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _triangle_areas(tri: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def random_surface_points(tri: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Area-uniform random points on a triangle soup of shape (F, 3, 3)."""
    areas = _triangle_areas(tri)
    total = areas.sum()
    if not total > 0:
        raise ValueError("region has zero total patch area")
    which = rng.choice(len(tri), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    t = tri[which]
    return (1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1] + (r1 * r2)[:, None] * t[:, 2]


def _quadrature(tri: np.ndarray, target: int):
    """Deterministic area-weighted quadrature points on each triangle.

    Each triangle is split into k*k congruent sub-triangles; their centroids
    carry equal weight, so the weighted mean per triangle is its centroid.
    """
    areas = _triangle_areas(tri)
    total = areas.sum()
    ks = np.maximum(1, np.ceil(np.sqrt(target * areas / total))).astype(int)
    pts, wts = [], []
    for k in np.unique(ks):
        sel = np.flatnonzero(ks == k)
        bary = []
        for i in range(k):
            for j in range(k - i):
                bary.append(((i + 1 / 3) / k, (j + 1 / 3) / k))
                if i + j < k - 1:
                    bary.append(((i + 2 / 3) / k, (j + 2 / 3) / k))
        bary = np.array(bary)
        t = tri[sel]
        p = (
            t[:, None, 0] * (1 - bary[:, 0] - bary[:, 1])[None, :, None]
            + t[:, None, 1] * bary[None, :, 0, None]
            + t[:, None, 2] * bary[None, :, 1, None]
        )
        pts.append(p.reshape(-1, 3))
        wts.append(np.repeat(areas[sel] / (k * k), len(bary)))
    return np.concatenate(pts), np.concatenate(wts)


def lloyd_sample(
    mesh: TriangleMesh,
    region: LocalRegion,
    count: int,
    iterations: int = 10,
    seed: int = 0,
    scale: float = 1.0,
    center=None,
) -> np.ndarray:
    """Relax ``count`` points on the region surface toward a centroidal Voronoi layout.

    Seeds are drawn area-uniformly. Each iteration moves every generator to the
    area-weighted centroid of its Voronoi cell (computed on dense quadrature
    points) and projects it back onto the nearest region patch. Coordinates
    are taken from ``scale * (vertex - center)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(region.patch_indices) == 0:
        raise ValueError("region has zero total patch area")
    v = mesh.vertices if center is None else mesh.vertices - np.asarray(center)
    tri = scale * v[mesh.patches[region.patch_indices]]
    if not _triangle_areas(tri).sum() > 0:
        raise ValueError("region has zero total patch area")
    rng = np.random.default_rng(seed)
    gens = random_surface_points(tri, count, rng)
    quad, qw = _quadrature(tri, max(30 * count, 600))
    index = TriangleIndex(tri)
    for _ in range(max(0, iterations)):
        _, owner = cKDTree(gens).query(quad)
        wsum = np.bincount(owner, weights=qw, minlength=count)
        cen = np.column_stack([np.bincount(owner, weights=qw * quad[:, k], minlength=count) for k in range(3)])
        has = wsum > 0
        gens = gens.copy()
        gens[has] = cen[has] / wsum[has, None]
        _, _, gens = index.query(gens)
    return gens


# ---------------------------------------------------------------------------
# normals


def patch_normals(mesh: TriangleMesh, unit: bool = True) -> np.ndarray:
    t = mesh.triangles()
    n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    if unit:
        ln = np.linalg.norm(n, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            n = np.where(ln > 0, n / ln, np.nan)
    return n


def vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    """Area-weighted vertex normals; rows are NaN where every incident patch is degenerate."""
    fn = patch_normals(mesh, unit=False)  # length = 2 * area
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.patches[:, k], fn)
    ln = np.linalg.norm(acc, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(ln > 1e-300, acc / ln, np.nan)
    bad = int(np.isnan(out[:, 0]).sum())
    if bad:
        log.warning("%d vertices have undefined normals", bad)
    return out
