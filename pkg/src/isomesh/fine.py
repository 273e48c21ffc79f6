"""Stage 3: shape-adaptive regions from polynomial-fit blocks, two-term fits, top-3 fusion."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .blocks import Block, PolySurface, build_blocks, fit_polynomial
from .coarse import nearest_vertices
from .geometry import LocalRegion, TriangleMesh, as_cloud, patches_within
from .global_mapping import StageResult
from .localfit import (
    LocalFit,
    derive_seed,
    fuse_point_targets,
    integrate_vertices,
    prepare_fit,
    run_parallel,
    train_fit,
)
from .nn import TrainConfig
from .transport import extract_correspondence, sinkhorn_plan

log = logging.getLogger(__name__)

TOP_K = 3


# ---------------------------------------------------------------------------
# ellipses on the tangent plane


def min_enclosing_ellipse(points: np.ndarray, tol: float = 1e-9, max_iter: int = 20000):
    """Minimum-area ellipse containing 2-D points (Khachiyan's algorithm).

    Returns (center, A) with ``(x - c)^T A (x - c) <= 1`` for every point.
    The final matrix is shrunk/grown so the farthest point lies exactly on
    the boundary.
    """
    P = np.asarray(points, dtype=np.float64)
    try:
        P = P[ConvexHull(P).vertices]
    except (QhullError, ValueError):
        pass
    n, d = P.shape
    Q = np.vstack([P.T, np.ones(n)])
    u = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        X = (Q * u) @ Q.T
        M = np.einsum("ij,ji->i", Q.T, np.linalg.solve(X, Q))
        j = int(np.argmax(M))
        step = (M[j] - d - 1.0) / ((d + 1.0) * (M[j] - 1.0))
        new_u = (1.0 - step) * u
        new_u[j] += step
        done = np.linalg.norm(new_u - u) < tol
        u = new_u
        if done:
            break
    c = P.T @ u
    A = np.linalg.inv((P.T * u) @ P - np.outer(c, c)) / d
    r2 = np.einsum("ij,jk,ik->i", P - c, A, P - c).max()
    return c, A / r2


@dataclass(frozen=True)
class SphereEllipse:
    """Ellipse in the tangent plane of the unit sphere at ``normal``."""

    normal: np.ndarray
    basis: np.ndarray  # (2, 3) tangent axes
    center: np.ndarray  # (2,)
    axes: np.ndarray  # (2, 2) rows: major, minor direction in tangent coords
    a: float
    b: float
    degenerate: bool = False

    def aligned(self, unit_points) -> np.ndarray:
        q = np.asarray(unit_points) @ self.basis.T - self.center
        return q @ self.axes.T

    def radius(self, unit_points) -> np.ndarray:
        """Elliptic radius (1 on the boundary); inf on the far hemisphere."""
        up = np.asarray(unit_points)
        st = self.aligned(up)
        r = np.sqrt((st[:, 0] / self.a) ** 2 + (st[:, 1] / self.b) ** 2)
        return np.where(up @ self.normal > 0, r, np.inf)


def _tangent_basis(n):
    helper = np.eye(3)[np.argmin(np.abs(n))]
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    return np.vstack([e1, np.cross(n, e1)])


def fit_sphere_ellipse(unit_points: np.ndarray, min_semi_axis: float) -> SphereEllipse:
    """Smallest ellipse around the tangent-plane projections of points on the unit sphere.

    Semi-axes shorter than ``min_semi_axis`` are widened to it; fewer than
    three distinct or collinear projections give a flagged fallback ellipse.
    """
    up = np.asarray(unit_points, dtype=np.float64)
    m = up.mean(axis=0)
    n = m / np.linalg.norm(m) if np.linalg.norm(m) > 1e-9 else up[0] / np.linalg.norm(up[0])
    basis = _tangent_basis(n)
    front = up[up @ n > 0]
    q = np.unique(np.round(front @ basis.T, 12), axis=0)

    degenerate = len(q) < 3
    if not degenerate:
        centered = q - q.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        degenerate = sv[-1] <= 1e-9 * max(sv[0], 1e-300)
    if degenerate:
        c0 = q.mean(axis=0)
        if len(q) > 1:
            _, _, vt = np.linalg.svd(q - c0)
            major = vt[0]
            proj = (q - c0) @ major
            c0 = c0 + 0.5 * (proj.max() + proj.min()) * major
            half = 0.5 * (proj.max() - proj.min())
        else:
            major, half = np.array([1.0, 0.0]), 0.0
        axes = np.vstack([major, [-major[1], major[0]]])
        a = max(half, min_semi_axis)
        return SphereEllipse(n, basis, c0, axes, a, min_semi_axis, degenerate=True)

    c, A = min_enclosing_ellipse(q)
    evals, evecs = np.linalg.eigh(A)  # ascending: first = major axis
    a, b = 1.0 / np.sqrt(evals)
    axes = evecs.T
    return SphereEllipse(n, basis, c, axes, max(a, min_semi_axis), max(b, min_semi_axis))


def ellipse_region(R0: TriangleMesh, vertex_indices, min_semi_axis: float):
    """Reference-sphere region cut out by the elliptic cylinder around the given vertices.

    Weights fall linearly from 1 at the ellipse center to 0 on its boundary.
    """
    unit = R0.vertices / np.linalg.norm(R0.vertices, axis=1, keepdims=True)
    ell = fit_sphere_ellipse(unit[np.asarray(vertex_indices)], min_semi_axis)
    r = ell.radius(unit)
    inside = r <= 1.0 + 1e-12
    idx = np.flatnonzero(inside)
    w = np.clip(1.0 - r[idx], 0.0, 1.0)
    return LocalRegion(idx, patches_within(R0, inside), w), ell


# ---------------------------------------------------------------------------
# division


@dataclass
class FineRegion:
    region: LocalRegion
    ellipse: SphereEllipse
    block_index: int


@dataclass
class FineDivision:
    regions: list
    local_indices: list
    cloud_to_vertex: np.ndarray
    uncovered_patches: int
    degenerate_ellipses: int


def mean_edge_length(mesh: TriangleMesh) -> float:
    e = mesh.edges()
    return float(np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1).mean())


def build_fine_regions(
    R0: TriangleMesh,
    R2: TriangleMesh,
    cloud,
    blocks: Sequence[Block],
    min_semi_axis: Optional[float] = None,
) -> FineDivision:
    """Temporary local meshes from the blocks, re-cut on the sphere as elliptic-cylinder regions."""
    pts = as_cloud(cloud)
    if not np.array_equal(R0.patches, R2.patches):
        raise ValueError("R0 and R2 must share connectivity")
    if min_semi_axis is None:
        min_semi_axis = 1.5 * mean_edge_length(R0) / float(np.linalg.norm(R0.vertices, axis=1).mean())
    c2v = nearest_vertices(R2, pts)

    patch_seen = np.zeros(R2.n_patches, dtype=bool)
    regions, local = [], []
    degenerate = 0
    for bi, blk in enumerate(blocks):
        inside = np.flatnonzero(blk.contains(pts))
        if len(inside) == 0:
            continue
        temp = np.unique(c2v[inside])
        tmask = np.zeros(R2.n_vertices, dtype=bool)
        tmask[temp] = True
        patch_seen[patches_within(R2, tmask)] = True

        reg, ell = ellipse_region(R0, temp, min_semi_axis)
        degenerate += ell.degenerate
        member = np.zeros(R2.n_vertices, dtype=bool)
        member[reg.vertex_indices] = True
        regions.append(FineRegion(reg, ell, bi))
        local.append(np.flatnonzero(member[c2v]))

    uncovered = int((~patch_seen).sum())
    if uncovered:
        log.info("%d of %d patches lie in no temporary local mesh", uncovered, R2.n_patches)
    return FineDivision(regions, local, c2v, uncovered, degenerate)


# ---------------------------------------------------------------------------
# deformation


def sample_poly_surface(surface: PolySurface, footprint_points, count: int, rng) -> np.ndarray:
    """Random points on the height field, uniform in (u, v) over the convex hull of the footprint."""
    uv = surface.to_local(footprint_points)[:, :2]
    try:
        hull = ConvexHull(uv)
        ring = uv[hull.vertices]
        tri = np.stack([np.repeat(ring[:1], len(ring) - 2, axis=0), ring[1:-1], ring[2:]], axis=1)
        e1, e2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
        area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        pick = rng.choice(len(tri), size=count, p=area / area.sum())
        r1 = np.sqrt(rng.random(count))
        r2 = rng.random(count)
        t = tri[pick]
        s = (1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1] + (r1 * r2)[:, None] * t[:, 2]
    except (QhullError, ValueError):
        # fewer than three non-collinear footprint points: stay on their segment
        i = rng.integers(len(uv), size=count)
        j = rng.integers(len(uv), size=count)
        lam = rng.random(count)[:, None]
        s = lam * uv[i] + (1 - lam) * uv[j]
    return surface.lift(s[:, 0], s[:, 1])


def deform_local_fine(
    R2: TriangleMesh,
    fine_region: FineRegion,
    cloud,
    point_indices,
    beta3: float,
    alpha: float,
    cfg: TrainConfig,
    seed: int,
    lloyd_iterations: int = 10,
) -> LocalFit:
    """First training phase for one fine region with both loss terms.

    The second term maps the region's scaled vertices onto random samples
    of a degree-5 height field fitted to the region's local cloud.
    """
    pts = as_cloud(cloud)
    reg = fine_region.region
    fit = prepare_fit(R2, reg, pts, point_indices, beta3, cfg, seed, lloyd_iterations)
    if fit.samples is None:
        return fit
    footprint = pts[fit.point_indices]
    surface, _ = fit_polynomial(footprint)
    verts = beta3 * (R2.vertices[reg.vertex_indices] - fit.center)
    rng = np.random.default_rng(derive_seed(seed, 7))
    sp = sample_poly_surface(surface, footprint, len(verts), rng) - fit.center
    plan = sinkhorn_plan(verts, sp, cfg.sinkhorn_epsilon, cfg.sinkhorn_iterations, cfg.sinkhorn_tolerance)
    fit.second_inputs = verts
    fit.second_targets = sp[extract_correspondence(plan)]
    train_fit(fit, pts, cfg, "phase1", alpha=alpha)
    return fit


def integrate_fine(R2: TriangleMesh, fits: Sequence[LocalFit]):
    """Top-3 weighted fusion; returns (mesh, uncovered vertex count, zero-weight count)."""
    return integrate_vertices(R2, fits, top_k=TOP_K)


def auto_tau_e(cloud) -> float:
    pts = as_cloud(cloud)
    return 0.01 * float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def fine_mapping(
    R0: TriangleMesh,
    R2: TriangleMesh,
    cloud,
    beta3: float,
    alpha: float,
    cfg: TrainConfig,
    tau_e: Optional[float] = None,
    n1: int = 10,
    threads: int = 1,
    lloyd_iterations: int = 10,
) -> StageResult:
    t0 = time.perf_counter()
    pts = as_cloud(cloud)
    if tau_e is None:
        tau_e = auto_tau_e(pts)
    blocks = build_blocks(pts, tau_e, n1=n1)
    div = build_fine_regions(R0, R2, pts, blocks)
    seeds = [derive_seed(cfg.seed, 3, j) for j in range(len(div.regions))]

    fits = run_parallel(
        lambda j: deform_local_fine(
            R2,
            div.regions[j],
            pts,
            div.local_indices[j],
            beta3,
            alpha,
            cfg,
            seeds[j],
            lloyd_iterations,
        ),
        range(len(div.regions)),
        threads,
    )
    fused, zero_pts = fuse_point_targets(pts, fits, div.cloud_to_vertex, R2.n_vertices)
    run_parallel(lambda f: train_fit(f, fused, cfg, "phase2", alpha=0.0), fits, threads)
    R3, uncovered, zero_v = integrate_fine(R2, fits)
    return StageResult(
        mesh=R3,
        report={
            "tau_e": tau_e,
            "block_count": len(blocks),
            "n_regions": len(div.regions),
            "region_points": [len(ix) for ix in div.local_indices],
            "region_vertices": [len(r.region) for r in div.regions],
            "empty_regions": sum(f.empty for f in fits),
            "uncovered_patches": div.uncovered_patches,
            "uncovered_vertices": uncovered,
            "degenerate_ellipses": div.degenerate_ellipses,
            "zero_weight_points": zero_pts,
            "zero_weight_vertices": zero_v,
            "restarts": sum(f.restarts for f in fits),
            "wall_time": time.perf_counter() - t0,
        },
    )
